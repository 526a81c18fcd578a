"""Flat run configuration with presets and ``key=value`` overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "regression"  # regression | classification
    dataset: str = "csv"  # csv (train.csv/test.csv, last column target) | idx (MNIST file names)
    data_dir: str = "data/boston"
    sizes: tuple = (13, 64, 64, 1)  # layer widths, input first
    batch_size: int = 101
    iterations: int = 100  # outer EM iterations (centralized)
    damping: float = 0.8  # message damping factor alpha
    pasp_lambda: float = 1.0  # posterior-as-prior exponent; only 1 is supported
    sweeps: int = 1  # network sweeps per minibatch visit
    target_sparsity: float = 1.0  # fraction of weight groups kept (1 = dense)
    rho_th: float = 0.99  # confidence threshold of the reset rule
    rho0: float = 0.5  # reset / initial activity probability when pruning
    noise_init: float = 1.0
    learn_noise: bool = True
    noise_damping: float = 0.5  # blend of the classification noise update
    bias_var: float = 0.1
    mean_scale: float = 1.0  # prior-mean spread (times 1/fan-in) used to break symmetry
    reshuffle: bool = False  # new minibatch split every EM iteration
    clients: int = 4  # federated K
    rounds: int = 50  # federated T_max
    inner: int = 10  # federated tau_max inner iterations per round
    seed: int = 0
    repeats: int = 1  # sweep: runs per sparsity level (seeds seed..seed+repeats-1)
    sparsities: tuple = (1.0, 0.75, 0.5, 0.25)  # sweep levels
    stop_at: float = 0.0  # stop early once the test metric is <= this (0 disables)

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"task must be regression or classification, got {self.task!r}")
        if self.dataset not in ("csv", "idx"):
            raise ConfigError(f"dataset must be csv or idx, got {self.dataset!r}")
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ConfigError("sizes needs at least an input and an output width")
        for k in ("batch_size", "sweeps", "clients", "inner", "repeats"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        for k in ("iterations", "rounds"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be non-negative")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")
        if self.pasp_lambda != 1.0:
            raise ConfigError("pasp_lambda must be 1")
        if not 0 < self.target_sparsity <= 1:
            raise ConfigError("target_sparsity must lie in (0, 1]")
        if not 0 < self.rho0 < self.rho_th < 1:
            raise ConfigError("need 0 < rho0 < rho_th < 1")
        if self.noise_init <= 0:
            raise ConfigError("noise_init must be positive")
        if any(not 0 < s <= 1 for s in self.sparsities):
            raise ConfigError("sparsities must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        d["sparsities"] = list(self.sparsities)
        return d


KEYS = {f.name: f for f in fields(RunConfig)}

PRESETS = {
    "boston": {},
    "mnist": {
        "task": "classification",
        "dataset": "idx",
        "data_dir": "data/mnist",
        "sizes": (784, 128, 10),
        "batch_size": 100,
        "iterations": 20,
    },
    "boston-fed": {"clients": 4, "rounds": 50, "inner": 10},
    "mnist-fed": {
        "task": "classification",
        "dataset": "idx",
        "data_dir": "data/mnist",
        "sizes": (784, 128, 10),
        "batch_size": 100,
        "clients": 10,
        "rounds": 50,
        "inner": 10,
    },
}


def _coerce(key: str, value):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    default = KEYS[key].default
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.replace(" ", "").split(",") if v]
        elem = type(default[0])
        try:
            return tuple(elem(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of {elem.__name__}") from None
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        s = str(value).lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        return type(default)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None


def build(preset: str | None = None, path=None, overrides=None, seed: int | None = None) -> RunConfig:
    """Defaults, then preset, then config file, then ``key=value`` overrides, then seed."""
    values: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        values.update(PRESETS[preset])
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update({k: _coerce(k, v) for k, v in data.items()})
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        values[k.strip()] = _coerce(k.strip(), v.strip())
    if seed is not None:
        values["seed"] = int(seed)
    for k in values:
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
    return replace(RunConfig(), **{k: _coerce(k, v) for k, v in values.items()})
