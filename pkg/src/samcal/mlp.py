"""Multi-layer perceptron classifier: init, forward, JSON checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tape, Tensor, add_row, matmul, relu, softmax, transpose


class CheckpointError(ValueError):
    """Checkpoint file could not be parsed."""


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1 or sizes[-1] < 2:
            raise ValueError(f"invalid layer sizes {sizes}: need >= 2 entries, all >= 1, K >= 2")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(o * i + o for i, o in zip(s[:-1], s[1:]))

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation, "seed": self.seed}


@dataclass
class ModelParams:
    """Weights stored as one flat vector; per-layer arrays are views into it."""

    spec: MlpSpec
    flat: np.ndarray
    layers: list[tuple[np.ndarray, np.ndarray]] = field(init=False, repr=False)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.n_params,):
            raise ShapeError(f"expected {self.spec.n_params} parameters, got shape {self.flat.shape}")
        self.layers = []
        pos = 0
        s = self.spec.layer_sizes
        for fan_in, fan_out in zip(s[:-1], s[1:]):
            w = self.flat[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
            pos += fan_out * fan_in
            b = self.flat[pos:pos + fan_out]
            pos += fan_out
            self.layers.append((w, b))

    @classmethod
    def from_layers(cls, spec: MlpSpec, layers) -> "ModelParams":
        parts = []
        for (w, b), fan_in, fan_out in zip(layers, spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            w, b = np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ShapeError(f"layer shapes {w.shape}/{b.shape} do not match spec ({fan_out}, {fan_in})")
            parts += [w.ravel(), b]
        if len(layers) != len(spec.layer_sizes) - 1:
            raise ShapeError(f"expected {len(spec.layer_sizes) - 1} layers, got {len(layers)}")
        return cls(spec, np.concatenate(parts))

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, self.flat.copy())


def init(spec: MlpSpec) -> ModelParams:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(spec.seed)
    layers = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return ModelParams.from_layers(spec, layers)


def forward_tensors(layers: list[tuple[Tensor, Tensor]], x) -> Tensor:
    """Logits from per-layer (weight, bias) tensors; records on their tape."""
    h = x
    for i, (w, b) in enumerate(layers):
        h = add_row(matmul(h, transpose(w)), b)
        if i < len(layers) - 1:
            h = relu(h)
    return h


def _check_input(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.layer_sizes[0]:
        raise ShapeError(f"input shape {x.shape} does not match d_in={params.spec.layer_sizes[0]}")
    return x


def forward(params: ModelParams, x) -> np.ndarray:
    """Logits ``[m×K]`` for a batch ``[m×d_in]``."""
    x = _check_input(params, x)
    layers = [(Tensor(w), Tensor(b)) for w, b in params.layers]
    return forward_tensors(layers, Tensor(x)).data


def predict_proba(params: ModelParams, x) -> np.ndarray:
    return softmax(forward(params, x))


def attach(params: ModelParams, tape: Tape) -> tuple[list[Tensor], list[tuple[Tensor, Tensor]]]:
    """Register every weight and bias as a tape leaf."""
    leaves, layers = [], []
    for w, b in params.layers:
        tw, tb = tape.variable(w), tape.variable(b)
        leaves += [tw, tb]
        layers.append((tw, tb))
    return leaves, layers


def flatten_grads(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


# --- checkpoints ----------------------------------------------------------

def to_json(params: ModelParams) -> str:
    doc = {
        "spec": params.spec.to_dict(),
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in params.layers],
    }
    # json writes floats with repr(), which round-trips f64 exactly
    return json.dumps(doc, indent=1)


def save(params: ModelParams, path) -> None:
    Path(path).write_text(to_json(params))


def from_json(text: str, expect: MlpSpec | None = None) -> ModelParams:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"malformed checkpoint at line {e.lineno}, column {e.colno}: {e.msg}") from e
    try:
        sd = doc["spec"]
        spec = MlpSpec(tuple(sd["layer_sizes"]), sd.get("activation", "relu"), int(sd.get("seed", 0)))
        layers = [(layer["w"], layer["b"]) for layer in doc["layers"]]
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"checkpoint missing field: {e}") from e
    if expect is not None and expect.layer_sizes != spec.layer_sizes:
        raise ShapeError(f"checkpoint layer sizes {spec.layer_sizes} != expected {expect.layer_sizes}")
    try:
        return ModelParams.from_layers(spec, layers)
    except ValueError as e:
        if isinstance(e, ShapeError):
            raise
        raise CheckpointError(f"bad layer data: {e}") from e


def load(path, expect: MlpSpec | None = None) -> ModelParams:
    return from_json(Path(path).read_text(), expect)
