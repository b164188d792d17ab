"""SGD with momentum, SAM and CSAM steps, and the training driver.

SAM perturbs the flat parameter vector by ``rho * g / ||g||`` (global l2
norm of the raw cross-entropy gradient), then takes the base SGD step from
the original point using the gradient evaluated at the perturbed point.
CSAM is the same, except that the second gradient comes from the damped
outer loss (:func:`samcal.losses.csam_outer_loss`).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import mlp
from .losses import LossKind, cross_entropy, loss_fn
from .tensor import Tape, Tensor, log_softmax

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "sam", "csam")


class DivergenceError(RuntimeError):
    """A step produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    rho: float = 0.05
    gamma: float = 1.0
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    lr_schedule: str = "cosine"
    lr_min: float = 0.0
    switch_epoch: int | None = None
    switch_to: str | None = None

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.rho < 0:
            raise ValueError("weight_decay and rho must be >= 0")
        if not 0.0 <= self.gamma <= 2.0:
            raise ValueError("gamma must lie in [0, 2]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if (self.switch_epoch is None) != (self.switch_to is None):
            raise ValueError("switch_epoch and switch_to must be given together")
        if self.switch_epoch is not None:
            if self.switch_to not in ("sgd", "sam"):
                raise ValueError("switch_to must be 'sgd' or 'sam'")
            if not 0 <= self.switch_epoch < self.epochs:
                raise ValueError("switch_epoch must satisfy 0 <= switch_epoch < epochs")

    def optimizer_at(self, epoch: int) -> str:
        if self.switch_epoch is not None and epoch >= self.switch_epoch:
            return self.switch_to
        return self.optimizer


@dataclass
class SgdState:
    velocity: np.ndarray | None = None


@dataclass
class SamStepTrace:
    step: int
    grad_norm: float
    eps_norm: float
    p_y: np.ndarray | None = None
    p_tilde: np.ndarray | None = None


@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    traces: list[SamStepTrace] = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.epochs)

    def probe_csv(self) -> str:
        """One row per (step, example): ``step,p_y,p_tilde,grad_norm``."""
        lines = ["step,p_y,p_tilde,grad_norm"]
        for t in self.traces:
            if t.p_y is None:
                continue
            for a, b in zip(t.p_y, t.p_tilde):
                lines.append(f"{t.step},{float(a)!r},{float(b)!r},{float(t.grad_norm)!r}")
        return "\n".join(lines) + "\n"


def cosine_lr(t: int, T: int, lr0: float, lr_min: float = 0.0) -> float:
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    if T == 0:
        return lr0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / T))


def sgd_step(theta: np.ndarray, grad: np.ndarray, state: SgdState, lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0) -> np.ndarray:
    """``v <- mu v + (g + wd theta); theta <- theta - lr v``. Updates ``state``."""
    if theta.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient in SGD step")
    d = grad + weight_decay * theta if weight_decay else grad
    v = d if state.velocity is None else momentum * state.velocity + d
    state.velocity = v
    return theta - lr * v


def loss_and_grad(params: mlp.ModelParams, x, y, kind: LossKind = LossKind()):
    """Batch loss, flat gradient and true-label probabilities at ``params``."""
    tape = Tape()
    leaves, layers = mlp.attach(params, tape)
    lp = log_softmax(mlp.forward_tensors(layers, Tensor(x)))
    total, _ = loss_fn(kind)(lp, y)
    grads = tape.backward(total, leaves)
    p_y = np.exp(lp.data[np.arange(len(y)), y])
    return float(total.data), mlp.flatten_grads(grads), p_y


def sam_step(params: mlp.ModelParams, x, y, rho: float, lr: float, state: SgdState, *,
             outer: LossKind = LossKind(), momentum: float = 0.0, weight_decay: float = 0.0,
             step: int = 0, probe: bool = False):
    """One SAM/CSAM update on a single mini-batch. Returns ``(params, trace, loss)``.

    The ascent always uses plain cross-entropy without weight decay; ``outer``
    selects the descent loss (cross-entropy for SAM, ``csam_outer`` for CSAM).
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    loss1, g1, p_y = loss_and_grad(params, x, y)
    if not (math.isfinite(loss1) and np.all(np.isfinite(g1))):
        raise DivergenceError("non-finite loss or gradient in SAM ascent")
    gnorm = float(np.linalg.norm(g1))
    if gnorm > 0.0:
        eps = (rho / gnorm) * g1
        perturbed = mlp.ModelParams(params.spec, params.flat + eps)
        eps_norm = float(np.linalg.norm(eps))
    else:
        perturbed, eps_norm = params, 0.0
    loss2, g2, p_tilde = loss_and_grad(perturbed, x, y, outer)
    if not math.isfinite(loss2):
        raise DivergenceError("non-finite loss at perturbed point")
    theta = sgd_step(params.flat, g2, state, lr, momentum, weight_decay)
    trace = SamStepTrace(step, gnorm, eps_norm,
                         p_y if probe else None, p_tilde if probe else None)
    return mlp.ModelParams(params.spec, theta), trace, loss1


def _batches(n: int, batch_size: int, seed: int, epoch: int):
    # order depends only on (seed, epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _evaluate(params, x, y) -> tuple[float, float]:
    logits = mlp.forward(params, x)
    lp = log_softmax(logits).data
    loss = float(-lp[np.arange(len(y)), y].mean())
    acc = float((logits.argmax(axis=1) == y).mean())
    return loss, acc


def train(spec: mlp.MlpSpec, x, y, config: TrainConfig, *, val=None, probe: bool = False,
          params: mlp.ModelParams | None = None) -> tuple[mlp.ModelParams, TrainingLog]:
    """Train from ``init(spec)`` (or ``params``) for ``config.epochs`` epochs.

    ``val`` is an optional ``(x_val, y_val)`` pair for the per-epoch log.
    On divergence the log's status becomes ``"diverged"`` and the last finite
    parameters are returned.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty training set")
    params = mlp.init(spec) if params is None else params.copy()
    trlog = TrainingLog()
    state = SgdState()
    steps_per_epoch = -(-len(x) // config.batch_size)
    total = config.epochs * steps_per_epoch
    csam = LossKind("csam_outer", gamma=config.gamma)
    step = 0
    for epoch in range(config.epochs):
        which = config.optimizer_at(epoch)
        lr_epoch = None
        losses = []
        try:
            for idx in _batches(len(x), config.batch_size, config.seed, epoch):
                lr = (cosine_lr(step, total, config.lr, config.lr_min)
                      if config.lr_schedule == "cosine" else config.lr)
                lr_epoch = lr if lr_epoch is None else lr_epoch
                xb, yb = x[idx], y[idx]
                if which == "sgd":
                    loss, g, _ = loss_and_grad(params, xb, yb)
                    if not math.isfinite(loss):
                        raise DivergenceError("non-finite training loss")
                    theta = sgd_step(params.flat, g, state, lr, config.momentum, config.weight_decay)
                    params = mlp.ModelParams(spec, theta)
                else:
                    outer = csam if which == "csam" else LossKind()
                    params, trace, loss = sam_step(
                        params, xb, yb, config.rho, lr, state, outer=outer,
                        momentum=config.momentum, weight_decay=config.weight_decay,
                        step=step, probe=probe)
                    if probe:
                        trlog.traces.append(trace)
                losses.append(loss)
                step += 1
        except DivergenceError as e:
            trlog.status, trlog.message = "diverged", f"epoch {epoch}: {e}"
            log.warning("training diverged: %s", trlog.message)
            break
        rec = {"epoch": epoch, "lr": lr_epoch, "optimizer": which,
               "train_loss": float(np.mean(losses))}
        if val is not None:
            rec["val_loss"], rec["val_acc"] = _evaluate(params, *val)
        trlog.epochs.append(rec)
    return params, trlog


def train_ensemble(spec: mlp.MlpSpec, x, y, config: TrainConfig, n_members: int, *, val=None):
    """``n_members`` independent runs; member ``i`` uses seed ``seed + i`` for
    both initialisation and batch order."""
    if n_members < 1:
        raise ValueError("n_members must be >= 1")
    members, logs = [], []
    for i in range(n_members):
        p, lg = train(replace(spec, seed=spec.seed + i), x, y,
                      replace(config, seed=config.seed + i), val=val)
        if lg.status != "ok":
            raise DivergenceError(f"ensemble member {i} diverged: {lg.message}")
        members.append(p)
        logs.append(lg)
    return members, logs


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
