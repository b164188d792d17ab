"""Classification losses and entropy helpers.

Every loss takes row-wise log-probabilities (a :class:`Tensor`, or an array
for plain evaluation) and integer labels, and returns ``(mean, per_example)``:
a scalar tensor suitable for ``Tape.backward`` plus a numpy vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add_const, as_tensor, exp, mean, mul, neg, pick, power, where

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossKind:
    """Which per-example loss to optimise.

    ``tag`` is one of ``cross_entropy``, ``focal`` (uses ``focal_gamma``) or
    ``csam_outer`` (uses ``gamma`` in [0, 2]).
    """

    tag: str = "cross_entropy"
    gamma: float = 0.0
    focal_gamma: float = 0.0

    def __post_init__(self):
        if self.tag not in ("cross_entropy", "focal", "csam_outer"):
            raise ValueError(f"unknown loss {self.tag!r}")
        if self.tag == "csam_outer" and not 0.0 <= self.gamma <= 2.0:
            raise ValueError(f"csam gamma must lie in [0, 2], got {self.gamma}")
        if self.tag == "focal" and self.focal_gamma < 0:
            raise ValueError(f"focal gamma must be >= 0, got {self.focal_gamma}")


def _true_logp(log_probs, labels) -> Tensor:
    lp = as_tensor(log_probs)
    labels = np.asarray(labels, dtype=np.int64)
    K = lp.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return pick(lp, labels)


def cross_entropy(log_probs, labels) -> tuple[Tensor, np.ndarray]:
    per = neg(_true_logp(log_probs, labels))
    return mean(per), per.data.copy()


def csam_outer_loss(log_probs, labels, gamma: float) -> tuple[Tensor, np.ndarray]:
    """CE below p=1/2, CE damped by ``(1+p)**-gamma`` above it.

    The damping factor is differentiated through. The loss jumps at p = 1/2
    when gamma > 0; the branch test is ``p <= 0.5``.
    """
    if not 0.0 <= gamma <= 2.0:
        raise ValueError(f"gamma must lie in [0, 2], got {gamma}")
    logp = _true_logp(log_probs, labels)
    ce = neg(logp)
    p = exp(logp)
    damped = mul(power(add_const(p, 1.0), -gamma), ce)
    per = where(p.data <= 0.5, ce, damped)
    return mean(per), per.data.copy()


def focal_loss(log_probs, labels, gamma_f: float) -> tuple[Tensor, np.ndarray]:
    """``-(1-p)**gamma_f * log p``."""
    if gamma_f < 0:
        raise ValueError("focal gamma must be >= 0")
    logp = _true_logp(log_probs, labels)
    ce = neg(logp)
    weight = power(add_const(neg(exp(logp)), 1.0), gamma_f)
    per = mul(weight, ce)
    return mean(per), per.data.copy()


def loss_fn(kind: LossKind):
    """Bind a :class:`LossKind` to a ``(log_probs, labels) -> (mean, per)`` callable."""
    if kind.tag == "cross_entropy":
        return cross_entropy
    if kind.tag == "focal":
        return lambda lp, y: focal_loss(lp, y, kind.focal_gamma)
    return lambda lp, y: csam_outer_loss(lp, y, kind.gamma)


def binary_entropy(p):
    """``-p ln p - (1-p) ln(1-p)`` with ``0 ln 0 = 0``. Works on scalars and arrays."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("binary entropy needs p in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(arr > 0, -arr * np.log(np.where(arr > 0, arr, 1.0)), 0.0)
        q = 1.0 - arr
        b = np.where(q > 0, -q * np.log1p(-np.where(q > 0, arr, 0.0)), 0.0)
    out = a + b
    return float(out) if out.ndim == 0 else out


def predictive_entropy(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-example ``H(p_y)`` (binary entropy of the true-label probability)
    and the full categorical entropy ``-sum p log p``."""
    P = np.asarray(probs, dtype=np.float64)
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1")
    labels = np.asarray(labels, dtype=np.int64)
    p_y = np.clip(P[np.arange(len(P)), labels], 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cat = -np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0).sum(axis=1)
    return np.asarray(binary_entropy(p_y), dtype=np.float64).reshape(-1), cat
