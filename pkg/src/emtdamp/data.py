"""Dataset loading, normalization, minibatching and client shards."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Features (I, N0) and targets: (I, N_L) floats or (I,) classes in 1..C."""

    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    task: str = "regression"
    n_classes: int = 0

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise DataError("features must be 2-D with one label per row")
        if self.split not in ("train", "test"):
            raise DataError(f"unknown split {self.split!r}")
        if self.task == "classification" and len(self.labels):
            if self.labels.min() < 1 or self.labels.max() > self.n_classes:
                raise DataError("class indices outside 1..C")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def targets(self) -> np.ndarray:
        """Targets in the form the trainer consumes (zero-based classes)."""
        return self.labels - 1 if self.task == "classification" else self.labels

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[idx].copy(), labels=self.labels[idx].copy())


def load_regression_csv(path, split: str = "train") -> Dataset:
    """CSV with a header row; last column is the target."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file")
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{path}: row {i}: {exc}") from None
    a = np.asarray(rows, dtype=float).reshape(-1, len(header))
    return Dataset(a[:, :-1].copy(), a[:, -1:].copy(), split)


def save_regression_csv(ds: Dataset, path, header=None) -> None:
    n = ds.features.shape[1]
    header = header or [f"x{j}" for j in range(n)] + ["y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for xi, yi in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in np.atleast_1d(yi)])


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(buf: bytes, magic: int, path) -> np.ndarray:
    if len(buf) < 8:
        raise DataError(f"{path}: truncated header")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise DataError(f"{path}: magic {got:#010x}, expected {magic:#010x}")
    ndim = got & 0xFF
    dims = struct.unpack(f">{ndim}I", buf[4 : 4 + 4 * ndim])
    body = np.frombuffer(buf, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise DataError(f"{path}: {body.size} bytes of data, header says {dims}")
    return body.reshape(dims)


def load_idx(path_images, path_labels, split: str = "train") -> Dataset:
    """IDX image/label pair (optionally gzipped); pixels scaled to [0, 1], labels 0-9 -> classes 1-10."""
    imgs = _parse_idx(_read_bytes(path_images), IDX_IMAGES, path_images)
    labs = _parse_idx(_read_bytes(path_labels), IDX_LABELS, path_labels)
    if len(imgs) != len(labs):
        raise DataError(f"{len(imgs)} images but {len(labs)} labels")
    x = imgs.reshape(len(imgs), -1).astype(float) / 255.0
    return Dataset(x, labs.astype(int) + 1, split, "classification", 10)


def write_idx(path, array: np.ndarray, magic: int) -> None:
    a = np.asarray(array, dtype=np.uint8)
    raw = struct.pack(">I", magic) + struct.pack(f">{a.ndim}I", *a.shape) + a.tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(raw)


@dataclass(frozen=True)
class Normalizer:
    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: np.ndarray | None = None
    y_scale: np.ndarray | None = None


def _stats(a):
    shift = a.mean(axis=0)
    scale = a.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return shift, scale


def normalize_fit(train: Dataset) -> Normalizer:
    """Per-feature z-score for regression (targets included); identity for classification."""
    if train.split != "train":
        raise DataError("normalizer must be fit on the training split")
    n = train.features.shape[1]
    if train.task == "classification":
        return Normalizer(np.zeros(n), np.ones(n))
    xs, xc = _stats(train.features)
    ys, yc = _stats(train.labels)
    return Normalizer(xs, xc, ys, yc)


def normalize_apply(n: Normalizer, d: Dataset) -> Dataset:
    x = (d.features - n.x_shift) / n.x_scale
    y = d.labels if n.y_shift is None else (d.labels - n.y_shift) / n.y_scale
    return replace(d, features=x, labels=y)


def normalize_invert(n: Normalizer, d: Dataset) -> Dataset:
    x = d.features * n.x_scale + n.x_shift
    y = d.labels if n.y_shift is None else d.labels * n.y_scale + n.y_shift
    return replace(d, features=x, labels=y)


def partition(n_items: int, size: int | None = None, n_parts: int | None = None, seed: int = 0) -> list[np.ndarray]:
    """Shuffle once by ``seed`` and slice contiguously.

    Give ``size`` for minibatches (one short tail allowed) or ``n_parts``
    for client shards (sizes differ by at most one).
    """
    if (size is None) == (n_parts is None):
        raise ValueError("give exactly one of size / n_parts")
    perm = np.random.default_rng(seed).permutation(n_items)
    if size is not None:
        if size < 1:
            raise ValueError("batch size must be positive")
        return [perm[i : i + size] for i in range(0, n_items, size)]
    if n_parts < 1 or n_parts > n_items:
        raise ValueError(f"cannot split {n_items} items into {n_parts} non-empty parts")
    return [p for p in np.array_split(perm, n_parts)]


def load_boston(root) -> tuple[Dataset, Dataset]:
    root = Path(root)
    return load_regression_csv(root / "train.csv", "train"), load_regression_csv(root / "test.csv", "test")


def load_mnist(root) -> tuple[Dataset, Dataset]:
    root = Path(root)
    tr = load_idx(root / "train-images-idx3-ubyte.gz", root / "train-labels-idx1-ubyte.gz", "train")
    te = load_idx(root / "t10k-images-idx3-ubyte.gz", root / "t10k-labels-idx1-ubyte.gz", "test")
    return tr, te
