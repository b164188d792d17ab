"""Experiment configuration documents (TOML) and their validation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import ShiftSpec
from .optim import TrainConfig

SWEEP_PARAMS = {"rho", "gamma", "switch_epoch"}


class ConfigError(ValueError):
    """Configuration document is invalid."""


@dataclass
class DataSection:
    kind: str = "blobs"  # blobs | moons | csv
    n: int = 4000
    K: int = 4
    d: int = 8
    overlap: float = 0.45
    label_noise: float = 0.0
    noise_sd: float = 0.1
    seed: int = 0
    fractions: tuple[float, float, float] = (0.5, 0.1, 0.4)
    dir: str | None = None  # directory holding train/val/test CSVs


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    hidden: tuple[int, ...] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    M: int = 15
    metrics: tuple[str, ...] = ("acc", "ece", "ada_ece", "classwise_ece", "nll", "auroc_misclass")
    posthoc: str = "none"
    sweep_param: str | None = None
    sweep_values: tuple = ()
    sweep_seeds: int = 1
    ensemble: int = 1
    shifts: tuple[ShiftSpec, ...] = ()
    source: str = ""

    def layer_sizes(self, d: int, K: int) -> tuple[int, ...]:
        return (d, *self.hidden, K)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, seed=seed))


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _pick(sec: dict, name: str, allowed: set) -> dict:
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {sorted(unknown)}")
    return sec


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse and fully validate a config document; raises :class:`ConfigError`."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{source}: {e}") from e
    try:
        d = _pick(_section(doc, "data"), "data", set(DataSection.__dataclass_fields__))
        if "fractions" in d:
            d["fractions"] = tuple(float(f) for f in d["fractions"])
        data = DataSection(**d)
        if data.kind not in ("blobs", "moons", "csv"):
            raise ConfigError(f"data.kind must be blobs, moons or csv, got {data.kind!r}")
        if data.kind == "csv" and not data.dir:
            raise ConfigError("data.kind = 'csv' requires data.dir")
        fr = data.fractions
        if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"data.fractions must be three positive numbers summing to 1, got {list(fr)}")
        if data.kind == "blobs" and (data.overlap < 0 or not 0 <= data.label_noise < 0.5):
            raise ConfigError("data.overlap must be >= 0 and data.label_noise in [0, 0.5)")

        model = _pick(_section(doc, "model"), "model", {"hidden"})
        hidden = tuple(int(h) for h in model.get("hidden", (64, 64)))
        if any(h < 1 for h in hidden):
            raise ConfigError("model.hidden sizes must be >= 1")

        tr = _pick(_section(doc, "train"), "train", set(TrainConfig.__dataclass_fields__))
        train = TrainConfig(**tr)

        ev = _pick(_section(doc, "eval"), "eval", {"M", "metrics"})
        M = int(ev.get("M", 15))
        if M < 1:
            raise ConfigError("eval.M must be >= 1")

        ph = _pick(_section(doc, "posthoc"), "posthoc", {"method"})
        posthoc = ph.get("method", "none")
        if posthoc not in ("none", "temperature", "isotonic"):
            raise ConfigError(f"posthoc.method must be none, temperature or isotonic, got {posthoc!r}")

        sw = _pick(_section(doc, "sweep"), "sweep", {"param", "values", "seeds"})
        sweep_param = sw.get("param")
        sweep_values = tuple(sw.get("values", ()))
        if sweep_param is not None:
            if sweep_param not in SWEEP_PARAMS:
                raise ConfigError(f"sweep.param must be one of {sorted(SWEEP_PARAMS)}")
            if not sweep_values:
                raise ConfigError("sweep.values must be non-empty")
            for v in sweep_values:  # every sweep point must itself be a valid TrainConfig
                _sweep_point(train, sweep_param, v)

        ens = _pick(_section(doc, "ensemble"), "ensemble", {"n"})
        n_ens = int(ens.get("n", 1))
        if n_ens < 1:
            raise ConfigError("ensemble.n must be >= 1")

        sh = _pick(_section(doc, "shift"), "shift", {"kinds", "severities"})
        shifts = tuple(ShiftSpec(k, int(s)) for k in sh.get("kinds", ()) for s in sh.get("severities", (1, 2, 3, 4, 5)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{source}: {e}") from e
    return ExperimentConfig(data, hidden, train, M, tuple(ev.get("metrics", ExperimentConfig.metrics)),
                            posthoc, sweep_param, sweep_values, int(sw.get("seeds", 1)), n_ens, shifts, text)


def _sweep_point(train: TrainConfig, param: str, value) -> TrainConfig:
    if param == "switch_epoch":
        to = train.switch_to or ("sam" if train.optimizer == "sgd" else "sgd")
        return replace(train, switch_epoch=int(value), switch_to=to)
    return replace(train, **{param: float(value)})


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, str(p))
