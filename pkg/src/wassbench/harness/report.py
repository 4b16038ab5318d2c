"""Experiment reports: aggregation and CSV / JSON / SVG emission."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..estimators import EstimateRecord

CSV_COLUMNS = ("iter", "method", "estimate", "ground_truth", "error", "wall_ms", "repeat", "phase")


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    records: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    def add(self, rec: EstimateRecord, repeat: int = 0, phase: str = "train", record_timing: bool = True) -> dict:
        row = {
            "iter": rec.iteration,
            "method": rec.method,
            "estimate": rec.estimate,
            "ground_truth": rec.ground_truth,
            "error": rec.error,
            "wall_ms": rec.wall_ms if record_timing else 0.0,
            "repeat": repeat,
            "phase": phase,
        }
        self.records.append(row)
        return row

    def rows(self, method: str | None = None, phase: str | None = None) -> list[dict]:
        return [
            r for r in self.records
            if (method is None or r["method"] == method) and (phase is None or r["phase"] == phase)
        ]


def mean_sd(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "sd": None, "n": 0}
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "sd": sd, "n": int(v.size)}


def error_aggregates(records: list[dict], phase: str) -> dict:
    """Per-method mean and sample sd of the error column for one phase."""
    out: dict = {}
    for r in records:
        if r["phase"] == phase:
            out.setdefault(r["method"], []).append(r["error"])
    return {m: mean_sd(v) for m, v in out.items()}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_fmt(r.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_records_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        row = dict(r)
        row["iter"] = int(row["iter"])
        row["repeat"] = int(row["repeat"])
        for k in ("estimate", "ground_truth", "error", "wall_ms"):
            row[k] = float(row[k]) if row[k] != "" else None
        rows.append(row)
    return rows


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def report_json(report: ExperimentReport) -> str:
    doc = {
        "experiment": report.experiment,
        "aggregates": report.aggregates,
        "extras": report.extras,
        "wall_seconds": report.wall_seconds,
        "config": report.config,
        "schema": {
            "csv_columns": list(CSV_COLUMNS),
            "error": "max(0, ground_truth - estimate); CEPS sums this over its three divergence terms",
            "estimate": "WC/GP: raw dual gap without penalty; CT/CEPS: dual objective "
                        "(CEPS records hold the Sinkhorn divergence)",
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)


def trace_svg(report: ExperimentReport, phase: str = "train", log_scale: bool = True) -> str:
    """Estimated vs true distance per iteration, one panel per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = sorted({r["method"] for r in report.records if r["phase"] == phase})
    n = max(len(methods), 1)
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.2), squeeze=False)
    for ax, m in zip(axes[0], methods):
        rows = [r for r in report.records if r["phase"] == phase and r["method"] == m]
        it = [r["iter"] for r in rows]

        def tr(vals):
            if not log_scale:
                return vals
            return [math.log(v) if v is not None and v > 0 else float("nan") for v in vals]

        ax.plot(it, tr([r["estimate"] for r in rows]), lw=0.8, label="estimate")
        if any(r["ground_truth"] is not None for r in rows):
            ax.plot(it, tr([r["ground_truth"] for r in rows]), lw=0.8, label="ground truth")
        ax.set_title(m)
        ax.set_xlabel("iteration")
        ax.set_ylabel("log distance" if log_scale else "distance")
        ax.legend(fontsize=7)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json")) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    stem = report.experiment.replace("-", "_")
    written = []
    if "csv" in formats:
        p = out / f"{stem}_records.csv"
        p.write_text(records_csv(report.records))
        written.append(p)
    if "json" in formats:
        p = out / f"{stem}_report.json"
        p.write_text(report_json(report))
        written.append(p)
    if "svg" in formats:
        p = out / f"{stem}_trace.svg"
        phase = "trace" if any(r["phase"] == "trace" for r in report.records) else "train"
        p.write_text(trace_svg(report, phase=phase, log_scale=report.experiment == "toy-wgan"))
        written.append(p)
    return written
