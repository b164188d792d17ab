"""Numerical checks of SAM's implicit entropy regularisation.

Notation: ``p`` is the true-label probability at the current weights,
``pt`` the same probability at the perturbed weights, and
``lam = (1 - pt) / (1 - p)``. With binary entropy ``H``:

* single-example bound:  ``-ln pt >= -ln p - lam*H(p) + H(pt)``  (needs pt <= p)
* CSAM bound (pt > 1/2): ``-(1+pt)**-g ln pt >= -ln p - lam*H(p) + (1-g/2)*H(pt)``
* batch bound: the single-example bound applied to geometric means.

All evaluators accept scalars or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import binary_entropy

SLACK_TOL = 1e-10
_CLAMP = 1e-12


class OutOfRegion(ValueError):
    """Inputs fall outside the hypotheses of the inequality being checked."""


@dataclass
class ProbePair:
    p: float
    pt: float
    rho: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        self.p = float(min(max(self.p, _CLAMP), 1.0 - _CLAMP))
        self.pt = float(min(max(self.pt, _CLAMP), 1.0 - _CLAMP))


@dataclass
class CheckResult:
    holds: bool | np.ndarray
    slack: float | np.ndarray


def _arr(x):
    return np.asarray(x, dtype=np.float64)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def lambda_of(p, pt):
    p, pt = _arr(p), _arr(pt)
    if np.any(p >= 1.0):
        raise OutOfRegion("lambda undefined at p = 1")
    return _out((1.0 - pt) / (1.0 - p))


def lambda_lower_bound(rho, pt):
    """``(1 - pt) / (1 - exp(rho/2) pt)``; requires ``exp(rho/2) pt < 1``."""
    rho, pt = _arr(rho), _arr(pt)
    scaled = np.exp(rho / 2.0) * pt
    if np.any(scaled >= 1.0):
        raise OutOfRegion("exp(rho/2) * pt must be < 1")
    return _out((1.0 - pt) / (1.0 - scaled))


def _rhs(p, pt, coef_pt=1.0):
    lam = (1.0 - pt) / (1.0 - p)
    return -np.log(p) - lam * binary_entropy(p) + coef_pt * binary_entropy(pt)


def check_entropy_bound(p, pt) -> CheckResult:
    """Slack of the single-example bound (LHS - RHS)."""
    p, pt = _arr(p), _arr(pt)
    slack = -np.log(pt) - _rhs(p, pt)
    holds = slack >= -SLACK_TOL
    return CheckResult(bool(holds) if np.ndim(holds) == 0 else holds, _out(slack))


def check_damped_entropy_bound(p, pt, gamma) -> CheckResult:
    """Slack of the CSAM bound; rejects inputs outside pt > 1/2, p >= pt, 0 <= gamma <= 2."""
    p, pt, gamma = _arr(p), _arr(pt), _arr(gamma)
    if np.any(pt <= 0.5) or np.any(p < pt) or np.any(p >= 1.0) or np.any((gamma < 0) | (gamma > 2)):
        raise OutOfRegion("CSAM bound needs pt > 1/2, pt <= p < 1 and gamma in [0, 2]")
    lhs = -((1.0 + pt) ** (-gamma) * np.log(pt))
    slack = lhs - _rhs(p, pt, 1.0 - gamma / 2.0)
    holds = slack >= -SLACK_TOL
    return CheckResult(bool(holds) if np.ndim(holds) == 0 else holds, _out(slack))


def geometric_mean(values) -> float:
    v = _arr(values)
    return float(np.exp(np.mean(np.log(v))))


@dataclass
class BatchCheck:
    holds: bool
    slack: float
    p_bar: float
    pt_bar: float
    identity_error: float  # |mean(-ln pt_i) - (-ln pt_bar)|


def check_batch_entropy_bound(p, pt) -> BatchCheck:
    """Batch bound on geometric means of the per-example probabilities."""
    p, pt = _arr(p).reshape(-1), _arr(pt).reshape(-1)
    if p.size == 0 or p.shape != pt.shape:
        raise ValueError("need matching, non-empty probability lists")
    p_bar, pt_bar = geometric_mean(p), geometric_mean(pt)
    r = check_entropy_bound(p_bar, pt_bar)
    batch_loss = float(np.mean(-np.log(pt)))
    return BatchCheck(bool(r.holds), float(r.slack), p_bar, pt_bar, abs(batch_loss + math.log(pt_bar)))


@dataclass
class DecayReport:
    n_steps: int
    window: tuple[int, int]
    frac_decrease: float  # pt <= p
    frac_bound: float  # ln(p/pt) >= rho/2
    quantiles: dict

    def to_dict(self) -> dict:
        return {"n_steps": self.n_steps, "window": list(self.window), "frac_decrease": self.frac_decrease,
                "frac_bound": self.frac_bound, "quantiles": self.quantiles}


def decay_monitor(p, pt, rho: float, tail: float = 1.0) -> DecayReport:
    """Summarise probe pairs recorded along a training run.

    ``p``/``pt`` are per-step values (single examples, or batch geometric
    means). Only the last ``tail`` fraction of steps is summarised.
    """
    p, pt = _arr(p).reshape(-1), _arr(pt).reshape(-1)
    n = p.size
    if n == 0:
        raise ValueError("empty probe stream")
    if not 0 < tail <= 1:
        raise ValueError("tail must lie in (0, 1]")
    start = n - max(1, int(math.ceil(tail * n)))
    p, pt = p[start:], pt[start:]
    p, pt = np.clip(p, _CLAMP, 1.0), np.clip(pt, _CLAMP, 1.0)
    margin = np.log(p) - np.log(pt)
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    excess = margin - rho / 2.0
    return DecayReport(
        n_steps=int(p.size),
        window=(int(start), int(n)),
        frac_decrease=float(np.mean(pt <= p)),
        frac_bound=float(np.mean(margin >= rho / 2.0)),
        quantiles={str(q): float(np.quantile(excess, q)) for q in qs},
    )


# --- sampling suites --------------------------------------------------------

def _summary(slack: np.ndarray, extra: dict | None = None) -> dict:
    out = {"samples": int(slack.size), "violations": int(np.sum(slack < -SLACK_TOL)),
           "min_slack": float(slack.min())}
    if extra:
        out.update(extra)
    return out


def entropy_bound_suite(n: int = 100_000, seed: int = 0, lo: float = 1e-9, hi: float = 1 - 1e-9) -> dict:
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(lo, hi, n), rng.uniform(lo, hi, n)
    p, pt = np.maximum(a, b), np.minimum(a, b)
    return _summary(check_entropy_bound(p, pt).slack)


def damped_bound_suite(n: int = 100_000, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    pt = rng.uniform(0.5, 1.0, n)
    pt = np.where(pt <= 0.5, np.nextafter(0.5, 1.0), pt)
    p = pt + (1.0 - pt) * rng.uniform(0.0, 1.0, n)
    p = np.minimum(p, np.nextafter(1.0, 0.0))
    gamma = rng.uniform(0.0, 2.0, n)
    return _summary(check_damped_entropy_bound(p, pt, gamma).slack)


def batch_bound_suite(n_batches: int = 10_000, max_m: int = 16, seed: int = 0) -> dict:
    """Random batches whose geometric means satisfy pt_bar <= p_bar."""
    rng = np.random.default_rng(seed)
    slacks, ident, skipped = [], 0.0, 0
    while len(slacks) < n_batches:
        m = int(rng.integers(1, max_m + 1))
        p = rng.uniform(1e-6, 1 - 1e-6, m)
        pt = rng.uniform(1e-6, 1 - 1e-6, m)
        r = check_batch_entropy_bound(p, pt)
        if r.pt_bar > r.p_bar:
            skipped += 1
            continue
        slacks.append(r.slack)
        ident = max(ident, r.identity_error)
    return _summary(np.asarray(slacks), {"max_identity_error": ident, "out_of_region": skipped})


def lambda_landscape(rhos=None, pts=None) -> list[tuple[float, float, float | None]]:
    """Grid of ``(rho, pt, lower bound)``; ``None`` where the bound is undefined."""
    rhos = np.round(np.arange(0, 21) * 0.05, 10) if rhos is None else rhos
    pts = np.round(np.arange(1, 20) * 0.05, 10) if pts is None else pts
    rows = []
    for r in rhos:
        for q in pts:
            try:
                rows.append((float(r), float(q), lambda_lower_bound(r, q)))
            except OutOfRegion:
                rows.append((float(r), float(q), None))
    return rows


def landscape_monotone(rows) -> bool:
    """True if the bound never decreases along any rho-line or pt-line."""
    grid = {(r, q): v for r, q, v in rows}
    rhos = sorted({r for r, _, _ in rows})
    pts = sorted({q for _, q, _ in rows})
    for q in pts:
        line = [grid[(r, q)] for r in rhos if grid[(r, q)] is not None]
        if any(b < a for a, b in zip(line, line[1:])):
            return False
    for r in rhos:
        line = [grid[(r, q)] for q in pts if grid[(r, q)] is not None]
        if any(b < a for a, b in zip(line, line[1:])):
            return False
    return True
