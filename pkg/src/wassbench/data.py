"""Datasets and minibatch streams: shifted Gaussians, MNIST (IDX), CSV clouds."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exact_ot import DiscreteMeasure

DATA_ROOT_ENV = "WASSBENCH_DATA_ROOT"
IDX_UBYTE = 0x08
NORMALIZATIONS = ("unit", "symmetric", "raw")


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    provenance: str
    normalization: str = "none"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or len(pts) < 1:
            raise ValueError("a dataset needs a non-empty K x d array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def as_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure.uniform(self.points)

    def take(self, idx) -> "Dataset":
        return Dataset(self.points[np.asarray(idx)], self.provenance, self.normalization, dict(self.meta))


def default_data_root() -> Path:
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data"


# -- synthetic ---------------------------------------------------------------
def gaussian_shift_pair(n: int, d: int, shift, seed: int, paired: bool = False) -> tuple[Dataset, Dataset]:
    """Standard Gaussian samples shifted by +shift and -shift."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    v = np.broadcast_to(np.asarray(shift, dtype=np.float64), (d,))
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((n, d))
    other = base if paired else rng.standard_normal((n, d))
    meta = {"shift": v.tolist(), "paired": paired, "seed": seed}
    return (
        Dataset(base + v, "gaussian-shift", "none", meta),
        Dataset(other - v, "gaussian-shift", "none", meta),
    )


def gaussian_mixture(n: int, d: int, seed: int, k: int = 10, spread: float = 1.0) -> Dataset:
    """Isotropic mixture used as a high-dimensional stand-in for image data."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, d)) * spread
    labels = rng.integers(0, k, size=n)
    pts = centers[labels] + 0.5 * spread * rng.standard_normal((n, d))
    return Dataset(pts, "gaussian-mixture", "none", {"k": k, "seed": seed, "spread": spread})


class RingMixture:
    """Eight Gaussians on a circle; the toy generator's target distribution."""

    def __init__(self, modes: int = 8, radius: float = 2.0, std: float = 0.1):
        angles = 2 * np.pi * np.arange(modes) / modes
        self.centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        self.std = std

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, len(self.centers), size=n)
        return self.centers[idx] + self.std * rng.standard_normal((n, 2))


# -- IDX ---------------------------------------------------------------------
def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX buffer.

    Images (rank >= 3) come back flattened to ``(count, rows * cols)``;
    labels as a 1-D array.  Values stay raw ``uint8``.
    """
    if len(raw) < 4:
        raise IdxFormatError("buffer too short for an IDX header")
    zero, dtype, ndim = struct.unpack_from(">HBB", raw, 0)
    if zero != 0 or dtype != IDX_UBYTE or ndim < 1:
        raise IdxFormatError(f"bad IDX magic 0x{int.from_bytes(raw[:4], 'big'):08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"header needs {header} bytes, buffer has {len(raw)}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = 1
    for dsz in dims:
        expected *= dsz
        if expected > 2**40:
            raise IdxFormatError(f"dimension overflow: {dims}")
    payload = len(raw) - header
    if payload != expected:
        raise IdxFormatError(f"payload has {payload} bytes, expected {expected} for dims {dims}")
    arr = np.frombuffer(raw, dtype=np.uint8, offset=header).copy()
    if ndim == 1:
        return arr
    return arr.reshape(dims[0], -1)


def serialize_idx(arr: np.ndarray, dims=None) -> bytes:
    """Inverse of :func:`parse_idx`; pass ``dims`` to restore an image shape."""
    a = np.ascontiguousarray(arr, dtype=np.uint8)
    dims = tuple(dims) if dims is not None else a.shape
    if int(np.prod(dims)) != a.size:
        raise ValueError(f"dims {dims} do not match {a.size} values")
    return struct.pack(">HBB", 0, IDX_UBYTE, len(dims)) + struct.pack(f">{len(dims)}I", *dims) + a.tobytes()


def read_idx(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def normalize_pixels(raw: np.ndarray, mode: str) -> np.ndarray:
    x = np.asarray(raw, dtype=np.float64)
    if mode == "unit":
        return x / 255.0
    if mode == "symmetric":
        return x / 127.5 - 1.0
    if mode == "raw":
        return x
    raise ValueError(f"unknown normalization {mode!r}; choose from {NORMALIZATIONS}")


def find_mnist(root=None) -> Path:
    root = Path(root) if root is not None else default_data_root()
    names = ("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz", "train-images.idx3-ubyte")
    for base in (root, root / "mnist", root / "mnist5k"):
        for n in names:
            if (base / n).is_file():
                return base / n
    raise FileNotFoundError(f"no MNIST image file under {root} (set {DATA_ROOT_ENV})")


def load_mnist(path=None, normalization: str = "unit", limit: int | None = None) -> Dataset:
    path = Path(path) if path is not None and Path(path).is_file() else find_mnist(path)
    raw = read_idx(path)
    if raw.ndim != 2:
        raise IdxFormatError(f"{path} is not an image file")
    if limit is not None:
        raw = raw[:limit]
    return Dataset(
        normalize_pixels(raw, normalization),
        "mnist",
        normalization,
        {"path": str(path), "count": len(raw)},
    )


def load_csv(path) -> Dataset:
    m = DiscreteMeasure.from_csv(Path(path))
    return Dataset(m.points, "csv", "none", {"path": str(path)})


# -- sampling ----------------------------------------------------------------
def split_halves(ds: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint random halves (an odd leftover point is dropped)."""
    if len(ds) < 2:
        raise ValueError("need at least two points to split")
    perm = np.random.default_rng(seed).permutation(len(ds))
    h = len(ds) // 2
    return ds.take(np.sort(perm[:h])), ds.take(np.sort(perm[h : 2 * h]))


def random_subset(ds: Dataset, size: int, seed: int) -> Dataset:
    if size > len(ds):
        raise ValueError(f"subset of {size} from {len(ds)} points")
    idx = np.random.default_rng(seed).choice(len(ds), size=size, replace=False)
    return ds.take(np.sort(idx))


class BatchStream:
    """Deterministic minibatches of a dataset.

    Without replacement the data is walked in seeded random order; each epoch
    is a fresh permutation, so no point repeats within an epoch.
    """

    def __init__(self, dataset: Dataset, batch_size: int, seed: int, replace: bool = False, reshuffle: bool = True):
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not replace and batch_size > len(dataset):
            raise ValueError(f"batch of {batch_size} exceeds dataset size {len(dataset)}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.replace = replace
        self.reshuffle = reshuffle
        self._rng = np.random.default_rng(seed)
        self._order = self._rng.permutation(len(dataset))
        self._pos = 0
        self.epoch = 0

    def next_indices(self) -> np.ndarray:
        n, k = self.batch_size, len(self.dataset)
        if self.replace:
            return self._rng.integers(0, k, size=n)
        if self._pos + n > k:
            if not self.reshuffle:
                raise StopIteration("dataset exhausted")
            self._order = self._rng.permutation(k)
            self._pos = 0
            self.epoch += 1
        idx = self._order[self._pos : self._pos + n]
        self._pos += n
        return idx

    def next_points(self) -> np.ndarray:
        return self.dataset.points[self.next_indices()]

    def __iter__(self):
        return self

    def __next__(self) -> DiscreteMeasure:
        return next_batch(self)


def next_batch(stream: BatchStream) -> DiscreteMeasure:
    return DiscreteMeasure.uniform(stream.next_points())


def paired_batches(mu: Dataset, nu: Dataset, batch_size: int, seed: int, paired: bool = False):
    """Endless ``(X, Y)`` point-array pairs from two independent streams.

    With ``paired`` both sides take the same row indices, so identical
    datasets give identical batches.
    """
    ss = np.random.SeedSequence(seed).spawn(2)
    sx = BatchStream(mu, batch_size, int(ss[0].generate_state(1)[0]))
    if paired:
        if len(mu) != len(nu):
            raise ValueError("paired batches need datasets of equal size")
        while True:
            idx = sx.next_indices()
            yield mu.points[idx], nu.points[idx]
    sy = BatchStream(nu, batch_size, int(ss[1].generate_state(1)[0]))
    while True:
        yield sx.next_points(), sy.next_points()
