"""Write the 5000-image MNIST subset bundled with mlxtend as IDX files.

Usage: python scripts/make_mnist_subset.py <mlxtend wheel or mnist_5k.csv.gz> <out dir>
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def _load_csv(src: Path) -> bytes:
    if src.suffix == ".whl":
        with zipfile.ZipFile(src) as z:
            return gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    return gzip.decompress(src.read_bytes())


def main(src: str, out: str) -> None:
    table = np.loadtxt(_load_csv(Path(src)).decode().splitlines(), delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    n = len(images)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    img = struct.pack(">IIII", 0x00000803, n, 28, 28) + images.tobytes()
    lab = struct.pack(">II", 0x00000801, n) + labels.tobytes()
    # mtime=0 keeps the archives byte-reproducible
    (out_dir / "train-images-idx3-ubyte.gz").write_bytes(gzip.compress(img, mtime=0))
    (out_dir / "train-labels-idx1-ubyte.gz").write_bytes(gzip.compress(lab, mtime=0))


if __name__ == "__main__":
    main(*sys.argv[1:3])
