"""Calibration and discrimination metrics over prediction sets.

Equal-width bins are left-open/right-closed: bin ``i`` (1-based) holds
confidences in ``((i-1)/M, i/M]``, and a confidence of exactly 0 goes to the
first bin. Per-bin sums are accumulated sample by sample in input order.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import mlp

PROB_EPS = 1e-12


@dataclass
class PredictionSet:
    probs: np.ndarray
    labels: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.logits is not None:
            self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.probs.ndim != 2 or len(self.labels) != len(self.probs):
            raise ValueError(f"probs {self.probs.shape} and labels {self.labels.shape} disagree")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-6) or np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("probability rows must lie on the simplex (tolerance 1e-6)")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.probs.shape[1]):
            raise ValueError("labels out of range")

    @classmethod
    def from_logits(cls, logits, labels) -> "PredictionSet":
        from .tensor import softmax
        logits = np.asarray(logits, dtype=np.float64)
        return cls(softmax(logits), labels, logits)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)

    @property
    def predicted(self) -> np.ndarray:
        return self.probs.argmax(axis=1)

    @property
    def correct(self) -> np.ndarray:
        return (self.predicted == self.labels).astype(np.float64)


@dataclass
class BinStats:
    lower: np.ndarray
    upper: np.ndarray
    count: np.ndarray
    conf: np.ndarray
    acc: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.acc - self.conf

    def weighted_error(self, n: int) -> float:
        total = 0.0
        for c, a, f in zip(self.count, self.acc, self.conf):
            if c:
                total += (int(c) / n) * abs(a - f)
        return total

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count", "avg_conf", "avg_acc", "gap"])
        for row in zip(self.lower, self.upper, self.count, self.conf, self.acc, self.gap):
            lo, hi, c, f, a, g = row
            w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(float(f)), repr(float(a)), repr(float(g))])
        return buf.getvalue()


def _require(preds: PredictionSet) -> None:
    if preds.n == 0:
        raise ValueError("empty prediction set")


def bin_edges(M: int) -> np.ndarray:
    return np.array([i / M for i in range(M + 1)])


def bin_index(values: np.ndarray, M: int) -> np.ndarray:
    """0-based equal-width bin for each value under the ``((i-1)/M, i/M]`` rule."""
    idx = np.searchsorted(bin_edges(M), values, side="left") - 1
    return np.clip(idx, 0, M - 1)


def _binned(values: np.ndarray, hits: np.ndarray, which: np.ndarray, M: int, lower, upper) -> BinStats:
    count = np.bincount(which, minlength=M)
    # bincount accumulates in input order, one sample at a time
    sum_conf = np.bincount(which, weights=values, minlength=M)
    sum_acc = np.bincount(which, weights=hits, minlength=M)
    safe = np.maximum(count, 1)
    conf = np.where(count > 0, sum_conf / safe, 0.0)
    acc = np.where(count > 0, sum_acc / safe, 0.0)
    return BinStats(np.asarray(lower, float), np.asarray(upper, float), count, conf, acc)


def _equal_width(values, hits, M) -> BinStats:
    edges = bin_edges(M)
    return _binned(values, hits, bin_index(values, M), M, edges[:-1], edges[1:])


def ece(preds: PredictionSet, M: int = 15) -> tuple[float, BinStats]:
    """Top-label expected calibration error with ``M`` equal-width bins."""
    _require(preds)
    if M < 1:
        raise ValueError("M must be >= 1")
    stats = _equal_width(preds.confidence, preds.correct, M)
    return stats.weighted_error(preds.n), stats


def ada_ece(preds: PredictionSet, M: int = 15) -> tuple[float, BinStats]:
    """Equal-mass ECE: ``M`` contiguous groups after a stable confidence sort.

    Group sizes are ``n // M`` or one more; the larger groups come first.
    """
    _require(preds)
    n = preds.n
    if M < 1 or n < M:
        raise ValueError(f"ada_ece needs 1 <= M <= n (got M={M}, n={n})")
    conf = preds.confidence
    order = np.argsort(conf, kind="stable")
    base, extra = divmod(n, M)
    sizes = [base + 1 if i < extra else base for i in range(M)]
    which = np.empty(n, dtype=np.int64)
    which[order] = np.repeat(np.arange(M), sizes)
    bounds = np.cumsum([0] + sizes)
    sc = conf[order]
    lower = [sc[a] for a in bounds[:-1]]
    upper = [sc[b - 1] for b in bounds[1:]]
    stats = _binned(conf, preds.correct, which, M, lower, upper)
    return stats.weighted_error(n), stats


def classwise_ece(preds: PredictionSet, M: int = 15) -> float:
    """Mean over classes of the binned calibration error of each probability column."""
    _require(preds)
    K = preds.probs.shape[1]
    total = 0.0
    for k in range(K):
        hits = (preds.labels == k).astype(np.float64)
        total += _equal_width(preds.probs[:, k], hits, M).weighted_error(preds.n)
    return total / K


def nll(preds: PredictionSet) -> float:
    _require(preds)
    p_y = preds.probs[np.arange(preds.n), preds.labels]
    return float(-np.log(np.maximum(p_y, PROB_EPS)).mean())


def accuracy(preds: PredictionSet) -> float:
    return float(preds.correct.mean())


def auroc(scores, positives) -> float:
    """Mann-Whitney AUROC; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n1 = int(pos.sum())
    n0 = len(pos) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("auroc needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def auroc_misclassification(preds: PredictionSet) -> float:
    """Top confidence as a detector of correct predictions."""
    return auroc(preds.confidence, preds.correct.astype(bool))


def auroc_ood(in_dist: PredictionSet, out_dist: PredictionSet) -> float:
    """Top confidence as a detector of in-distribution samples."""
    scores = np.concatenate([in_dist.confidence, out_dist.confidence])
    positive = np.concatenate([np.ones(in_dist.n, bool), np.zeros(out_dist.n, bool)])
    return auroc(scores, positive)


@dataclass
class ReliabilityData:
    stats: BinStats
    histogram: np.ndarray  # fraction of samples per bin

    @property
    def gap(self) -> np.ndarray:
        return self.stats.gap

    def to_csv(self) -> str:
        return self.stats.to_csv()


def reliability_data(preds: PredictionSet, M: int = 15) -> ReliabilityData:
    _, stats = ece(preds, M)
    return ReliabilityData(stats, stats.count / preds.n)


def ensemble_predict(members: list[mlp.ModelParams], x, labels) -> PredictionSet:
    """Average member softmax outputs (probabilities, not logits)."""
    if not members:
        raise ValueError("ensemble needs at least one member")
    sizes = members[0].spec.layer_sizes
    for m in members[1:]:
        if m.spec.layer_sizes != sizes:
            raise ValueError(f"member spec {m.spec.layer_sizes} != {sizes}")
    if len(members) == 1:
        logits = mlp.forward(members[0], x)
        return PredictionSet.from_logits(logits, labels)
    probs = sum(mlp.predict_proba(m, x) for m in members) / len(members)
    return PredictionSet(probs, labels)


def metrics_block(preds: PredictionSet, M: int = 15) -> dict:
    """Standard metrics dictionary (keys match the metrics JSON file)."""
    out = {
        "acc": accuracy(preds),
        "ece": ece(preds, M)[0],
        "ada_ece": ada_ece(preds, M)[0] if preds.n >= M else None,
        "classwise_ece": classwise_ece(preds, M),
        "nll": nll(preds),
        "n": preds.n,
        "M": M,
    }
    c = preds.correct
    out["auroc_misclass"] = auroc_misclassification(preds) if 0 < c.sum() < preds.n else None
    return out
