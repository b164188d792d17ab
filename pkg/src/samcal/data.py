"""Synthetic datasets, distribution shift, splits and CSV I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import PredictionSet

SHIFT_KINDS = ("gaussian_noise", "feature_scale", "feature_rotate")


class CsvFormatError(ValueError):
    """A dataset or logits CSV does not follow the expected layout."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be [n×d] with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        K = self.meta.get("K")
        if K is not None and self.labels.size and (self.labels.min() < 0 or self.labels.max() >= K):
            raise ValueError(f"labels must lie in [0, {K})")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def K(self) -> int:
        return int(self.meta.get("K", int(self.labels.max()) + 1))

    def subset(self, idx, **meta) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], {**self.meta, **meta})


def gen_blobs(K: int, d: int, n: int, class_overlap: float, label_noise: float = 0.0,
              seed: int = 0) -> Dataset:
    """``K`` isotropic Gaussian clusters with unit-norm means.

    When ``K <= d`` the means are orthonormal; otherwise random directions.
    ``class_overlap`` is the per-coordinate standard deviation. A fraction
    ``label_noise`` of labels is replaced by a uniformly drawn other class.
    """
    if K < 2 or d < 1 or n < 1:
        raise ValueError("need K >= 2, d >= 1, n >= 1")
    if class_overlap < 0 or not 0 <= label_noise < 0.5:
        raise ValueError("need class_overlap >= 0 and label_noise in [0, 0.5)")
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(d, K))
    if K <= d:
        means = np.linalg.qr(raw)[0].T
    else:
        means = (raw / np.linalg.norm(raw, axis=0)).T
    labels = rng.permutation(np.arange(n) % K)
    x = means[labels] + class_overlap * rng.normal(size=(n, d))
    flip = rng.uniform(size=n) < label_noise
    shift = rng.integers(1, K, size=n)
    noisy = np.where(flip, (labels + shift) % K, labels)
    meta = {"name": "blobs", "d": d, "K": K, "class_overlap": class_overlap,
            "label_noise": label_noise, "seed": seed}
    return Dataset(x, noisy, meta)


def gen_two_moons(n: int, noise_sd: float = 0.0, seed: int = 0) -> Dataset:
    """Two interleaved half circles (K=2, d=2); class sizes differ by at most one."""
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    n_out = (n + 1) // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, math.pi, n_out)
    t_in = np.linspace(0.0, math.pi, n_in)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
    inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
    x = np.concatenate([outer, inner])
    y = np.concatenate([np.zeros(n_out, np.int64), np.ones(n_in, np.int64)])
    perm = rng.permutation(n)
    x, y = x[perm], y[perm]
    if noise_sd > 0:
        x = x + rng.normal(scale=noise_sd, size=x.shape)
    return Dataset(x, y, {"name": "two_moons", "d": 2, "K": 2, "noise_sd": noise_sd, "seed": seed})


@dataclass(frozen=True)
class ShiftSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ValueError(f"shift kind must be one of {SHIFT_KINDS}")
        if not (isinstance(self.severity, (int, np.integer)) and 1 <= self.severity <= 5):
            raise ValueError("severity must be an integer in [1, 5]")

    @property
    def name(self) -> str:
        return f"{self.kind}_{self.severity}"


def apply_shift(ds: Dataset, spec: ShiftSpec, seed: int = 0) -> Dataset:
    """Corrupt features; labels and sample count are untouched.

    gaussian_noise adds N(0, (0.1 s)^2); feature_scale multiplies by
    (1 + 0.15 s); feature_rotate turns the first two coordinates by 9 s degrees.
    """
    s = spec.severity
    x = ds.features.copy()
    if spec.kind == "gaussian_noise":
        x += np.random.default_rng(seed).normal(scale=0.1 * s, size=x.shape)
    elif spec.kind == "feature_scale":
        x *= 1.0 + 0.15 * s
    else:
        if ds.d < 2:
            raise ValueError("feature_rotate needs d >= 2")
        a = math.radians(9.0 * s)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        x[:, :2] = x[:, :2] @ rot.T
    return Dataset(x, ds.labels.copy(), {**ds.meta, "shift": spec.name})


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded permutation, then contiguous train/val/test slices."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = ds.n
    n_train = int(round(n * fr[0]))
    n_val = int(round(n * fr[1]))
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise ValueError(f"split of n={n} by {fractions} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    return (ds.subset(perm[:n_train], split="train"),
            ds.subset(perm[n_train:n_train + n_val], split="val"),
            ds.subset(perm[n_train + n_val:], split="test"))


# --- CSV ------------------------------------------------------------------

def _write_table(path, prefix: str, values: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{j}" for j in range(values.shape[1])] + ["label"])
        for row, lab in zip(values, labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def _read_table(path, prefix: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2 or header[-1] != "label":
        raise CsvFormatError(f"{path}: last column must be 'label', got {header[-1]!r}")
    for j, name in enumerate(header[:-1]):
        if name != f"{prefix}{j}":
            raise CsvFormatError(f"{path}: column {j} should be {prefix}{j!s}, got {name!r}")
    width = len(header)
    vals, labs = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise CsvFormatError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        try:
            vals.append([float(v) for v in row[:-1]])
            labs.append(int(row[-1]))
        except ValueError as e:
            raise CsvFormatError(f"{path}: row {i}: {e}") from e
    if not vals:
        raise CsvFormatError(f"{path}: no data rows")
    return np.array(vals, dtype=np.float64), np.array(labs, dtype=np.int64)


def write_csv_dataset(ds: Dataset, path) -> None:
    _write_table(path, "f", ds.features, ds.labels)


def read_csv_dataset(path, K: int | None = None) -> Dataset:
    x, y = _read_table(path, "f")
    meta = {"name": Path(path).stem, "d": x.shape[1]}
    if K is not None:
        meta["K"] = K
    return Dataset(x, y, meta)


def write_logits_csv(logits, labels, path) -> None:
    _write_table(path, "l", np.asarray(logits, dtype=np.float64), np.asarray(labels))


def read_logits_csv(path) -> PredictionSet:
    z, y = _read_table(path, "l")
    return PredictionSet.from_logits(z, y)
