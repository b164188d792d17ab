"""Post-hoc calibration: temperature scaling and isotonic regression (PAV)."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .metrics import PROB_EPS, PredictionSet
from .tensor import log_softmax

log = logging.getLogger(__name__)

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TemperatureModel:
    T: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("temperature must be > 0")

    def to_dict(self) -> dict:
        return {"kind": "temperature", "T": self.T}


@dataclass(frozen=True)
class IsotonicModel:
    """Step function through sorted ``(threshold, value)`` breakpoints."""

    thresholds: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.thresholds) != len(self.values) or not self.thresholds:
            raise ValueError("isotonic model needs matching, non-empty breakpoints")
        if any(b < a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("isotonic values must be non-decreasing")

    def __call__(self, c) -> np.ndarray:
        """Left-continuous step lookup, constant beyond both ends."""
        t = np.asarray(self.thresholds)
        idx = np.minimum(np.searchsorted(t, c, side="left"), len(t) - 1)
        return np.asarray(self.values)[idx]

    def to_dict(self) -> dict:
        return {"kind": "isotonic", "breakpoints": [[a, b] for a, b in zip(self.thresholds, self.values)]}


def _nll_at(logits: np.ndarray, labels: np.ndarray, T: float) -> float:
    lp = log_softmax(logits / T).data
    return float(-lp[np.arange(len(labels)), labels].mean())


def fit_temperature(val: PredictionSet, tol: float = 1e-6) -> TemperatureModel:
    """Minimise validation NLL over ``T`` by golden-section search on ``ln T``
    in ``[-ln 100, ln 100]``."""
    if val.logits is None:
        raise ValueError("temperature scaling needs logits")
    if val.n < 2:
        raise ValueError("need at least 2 validation samples")
    z, y = val.logits, val.labels
    if np.all(z == z[:, :1]):
        log.warning("all logits identical within rows; temperature left at 1")
        return TemperatureModel(1.0)

    def f(u):
        return _nll_at(z, y, math.exp(u))

    a, b = -math.log(100.0), math.log(100.0)
    c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    u = 0.5 * (a + b)
    T = math.exp(u)
    if f(u) > f(0.0):
        T = 1.0
    return TemperatureModel(T)


def apply_temperature(preds: PredictionSet, model: TemperatureModel) -> PredictionSet:
    if preds.logits is None:
        raise ValueError("temperature scaling needs logits")
    scaled = preds.logits / model.T
    return PredictionSet(np.exp(log_softmax(scaled).data), preds.labels, scaled)


def pav(targets, weights=None) -> np.ndarray:
    """Pool-adjacent-violators: weighted least-squares non-decreasing fit."""
    y = np.asarray(targets, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    # stack of blocks: (mean, weight, length)
    means, wts, lens = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        wts.append(wi)
        lens.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, l2 = means.pop(), wts.pop(), lens.pop()
            m1, w1, l1 = means.pop(), wts.pop(), lens.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt)
            wts.append(wt)
            lens.append(l1 + l2)
    return np.repeat(means, lens)


def fit_isotonic(val: PredictionSet) -> IsotonicModel:
    """Monotone fit of correctness against top-label confidence.

    Samples sharing a confidence value are pooled first, so the fit is a
    function of confidence.
    """
    if val.n < 2:
        raise ValueError("need at least 2 validation samples")
    conf = val.confidence
    order = np.argsort(conf, kind="stable")
    xs, inverse, counts = np.unique(conf[order], return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=val.correct[order])
    fitted = pav(sums / counts, counts.astype(float))
    return IsotonicModel(tuple(float(v) for v in xs), tuple(float(v) for v in fitted))


def apply_isotonic(preds: PredictionSet, model: IsotonicModel, eps: float = PROB_EPS) -> PredictionSet:
    """Replace the top-label probability with the fitted value and rescale
    the remaining classes proportionally so each row still sums to one."""
    P = preds.probs
    n, K = P.shape
    top = P.argmax(axis=1)
    rows = np.arange(n)
    c = P[rows, top]
    v = np.clip(model(c), eps, 1.0)
    rest = 1.0 - c
    out = P.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(rest > 0, (1.0 - v) / rest, 0.0)
    out *= factor[:, None]
    # rows whose other classes carried no mass get the remainder spread evenly
    empty = rest <= 0
    if np.any(empty) and K > 1:
        out[empty] = ((1.0 - v[empty]) / (K - 1))[:, None]
    out[rows, top] = v
    out /= out.sum(axis=1, keepdims=True)
    return PredictionSet(out, preds.labels, None)


def calibrator_to_json(model) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


def calibrator_from_json(text: str):
    doc = json.loads(text)
    if doc.get("kind") == "temperature":
        return TemperatureModel(float(doc["T"]))
    if doc.get("kind") == "isotonic":
        bp = doc["breakpoints"]
        return IsotonicModel(tuple(float(a) for a, _ in bp), tuple(float(b) for _, b in bp))
    raise ValueError(f"unknown calibrator kind {doc.get('kind')!r}")
