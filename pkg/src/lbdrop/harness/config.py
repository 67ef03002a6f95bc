"""Flat ``key = value`` run configuration with validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError

EXPERIMENTS = ("toy-grid", "toy-trace", "classify", "cf")
ESTIMATORS = ("arm", "concrete", "gaussian", "reinforce", "regular", "mc-dropout", "none")
MASK_SHARING = ("per-example", "shared")


@dataclass
class RunConfig:
    experiment: str = "toy-grid"
    seed: int = 0
    estimator: str = "arm"
    out_dir: str = "runs"
    workers: int = 1

    # optimiser
    lr: float = 1e-2
    gate_lr: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 300
    batch_size: int = 64
    samples: int = 1

    # gates
    init_keep: float = 0.5
    concrete_temperature: float = 0.1
    gaussian_variance_cap: float = 1.0
    regular_keep: float = 0.5

    # toy study
    toy_n: int = 3000
    toy_slope: float = 1.0
    toy_noise_sd: float = 0.1
    toy_grid_lo: float = 0.05
    toy_grid_hi: float = 0.95
    toy_grid_step: float = 0.05
    toy_samples: int = 200
    toy_mask_sharing: str = "per-example"
    toy_estimators: str = "arm,concrete"
    trace_steps: int = 100
    trace_samples: int = 50
    trace_lr: float = 1.0
    trace_init_keep: str = "0.5,0.5"

    # classification
    n_train: int = 300
    n_test: int = 300
    moons_noise: float = 0.1
    hidden: str = "32,32"
    mc_passes: int = 10
    prior_variance: float = 1.0
    kl_weight: float = -1.0
    pavpu_ts: str = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"

    # collaborative filtering
    n_users: int = 500
    n_items: int = 200
    n_heldout_users: int = 100
    n_factors: int = 5
    mean_interactions: float = 15.0
    popularity_weight: float = 0.3
    factor_shape: float = 0.1
    user_concentration: float = 0.1
    latent_dim: int = 20
    cf_hidden: int = 100
    aux_samples: int = 10
    cf_epochs: int = 30
    anneal_epochs: int = 20
    beta_max: float = 0.2
    beta_placement: str = "prior-and-mixture"
    holdout_frac: float = 0.2
    interactions_file: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; choose from {', '.join(ESTIMATORS)}")
        if self.toy_mask_sharing not in MASK_SHARING:
            raise ConfigError(f"toy_mask_sharing must be one of {MASK_SHARING}")
        if self.beta_placement != "prior-and-mixture":
            raise ConfigError("beta_placement supports only 'prior-and-mixture'")
        for name in ("samples", "toy_samples", "trace_samples", "mc_passes", "epochs", "cf_epochs", "batch_size", "toy_n", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("lr", "gate_lr", "concrete_temperature", "prior_variance", "toy_grid_step", "trace_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("init_keep", "regular_keep", "toy_grid_lo", "toy_grid_hi"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie strictly between 0 and 1")
        if not 0 < self.gaussian_variance_cap <= 1:
            raise ConfigError("gaussian_variance_cap must lie in (0, 1]")
        if not 0 < self.holdout_frac < 1:
            raise ConfigError("holdout_frac must lie in (0, 1)")
        if not 0 <= self.popularity_weight <= 1:
            raise ConfigError("popularity_weight must lie in [0, 1]")
        if not (self.factor_shape > 0 and self.user_concentration > 0):
            raise ConfigError("factor_shape and user_concentration must be positive")
        if self.aux_samples < 0:
            raise ConfigError("aux_samples must be nonnegative")
        if self.anneal_epochs < 1:
            raise ConfigError("anneal_epochs must be at least 1")
        self.hidden_sizes()
        self.sweep_ts()
        self.trace_keep()
        if any(e not in ("arm", "concrete", "reinforce") for e in self.toy_estimator_list()):
            raise ConfigError("toy_estimators accepts arm, concrete, reinforce")

    def hidden_sizes(self) -> list[int]:
        try:
            sizes = [int(s) for s in self.hidden.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"hidden must be comma-separated integers, got {self.hidden!r}") from None
        if len(sizes) != 2 or min(sizes) < 1:
            raise ConfigError("hidden must list two positive layer widths")
        return sizes

    def sweep_ts(self) -> list[float]:
        try:
            ts = [float(s) for s in self.pavpu_ts.split(",") if s.strip()]
        except ValueError:
            raise ConfigError("pavpu_ts must be comma-separated numbers") from None
        if not ts or any(not 0 <= t <= 1 for t in ts):
            raise ConfigError("pavpu_ts entries must lie in [0, 1]")
        return ts

    def trace_keep(self) -> list[float]:
        try:
            keep = [float(s) for s in self.trace_init_keep.split(",")]
        except ValueError:
            raise ConfigError("trace_init_keep must be two comma-separated probabilities") from None
        if len(keep) != 2 or any(not 0 < k < 1 for k in keep):
            raise ConfigError("trace_init_keep must be two probabilities in (0, 1)")
        return keep

    def toy_estimator_list(self) -> list[str]:
        return [e.strip() for e in self.toy_estimators.split(",") if e.strip()]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    kind = _FIELDS[name].type
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_pairs(lines, source: str = "<overrides>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides: dict | None = None, **base) -> RunConfig:
    """Defaults, then the config file, then ``overrides``; validated once at the end."""
    values = dict(base)
    if path:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        values.update(parse_pairs(text.splitlines(), str(p)))
    for key, value in (overrides or {}).items():
        values[key] = _coerce(key, value)
    for key in values:
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig(**values)
