import pytest

# acceptance criteria register "PASS"/"FAIL" lines here; printed at session end
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    def report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
