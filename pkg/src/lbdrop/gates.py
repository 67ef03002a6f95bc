"""Learnable multiplicative-noise gates and the ARM antithetic masks.

A gate multiplies the *input* of a dense layer element-wise.  The keep
probability of every coordinate is ``sigmoid(logit)``; the dropout rate is
``1 - sigmoid(logit)``.  Logits are clamped to ``[-LOGIT_BOUND, LOGIT_BOUND]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .errors import ConfigError, DimensionError

LOGIT_BOUND = 8.0
GATE_KINDS = ("bernoulli", "concrete", "gaussian", "none")
GRANULARITIES = ("per-neuron", "per-layer")


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def bernoulli_entropy(logits):
    """Entropy (nats) of Bernoulli(sigmoid(logits)), stable for large |logits|."""
    a = np.asarray(logits, dtype=np.float64)
    p = sigmoid(a)
    return -(p * log_expit(a) + (1.0 - p) * log_expit(-a))


@dataclass
class GateSpec:
    kind: str = "bernoulli"
    granularity: str = "per-neuron"
    logits: np.ndarray = field(default_factory=lambda: np.zeros(1))
    concrete_temperature: float = 0.1
    gaussian_variance_cap: float = 1.0

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ConfigError(f"unknown gate kind {self.kind!r}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown gate granularity {self.granularity!r}")
        self.logits = np.atleast_1d(np.asarray(self.logits, dtype=np.float64)).copy()
        if self.logits.ndim != 1:
            raise DimensionError("gate logits must be a vector")
        if self.granularity == "per-layer" and self.logits.size != 1:
            raise DimensionError("per-layer gates carry exactly one logit")
        if not np.all(np.isfinite(self.logits)):
            raise ConfigError("gate logits must be finite")
        if self.kind == "concrete" and not self.concrete_temperature > 0:
            raise ConfigError("concrete temperature must be positive")
        if self.kind == "gaussian" and not 0 < self.gaussian_variance_cap <= 1:
            raise ConfigError("gaussian variance cap must lie in (0, 1]")
        self.clamp()

    @classmethod
    def uniform(cls, width: int, kind: str = "bernoulli", keep: float = 0.5, granularity: str = "per-neuron", **kw):
        n = 1 if granularity == "per-layer" else width
        logit = np.log(keep) - np.log1p(-keep)
        return cls(kind=kind, granularity=granularity, logits=np.full(n, logit), **kw)

    @property
    def size(self) -> int:
        return self.logits.size

    def clamp(self) -> None:
        np.clip(self.logits, -LOGIT_BOUND, LOGIT_BOUND, out=self.logits)

    def copy(self, **changes) -> "GateSpec":
        kw = dict(
            kind=self.kind,
            granularity=self.granularity,
            logits=self.logits.copy(),
            concrete_temperature=self.concrete_temperature,
            gaussian_variance_cap=self.gaussian_variance_cap,
        )
        kw.update(changes)
        return GateSpec(**kw)


def keep_probability(spec: GateSpec) -> np.ndarray:
    if spec.kind == "none":
        raise ConfigError("an ungated layer has no keep probability")
    return sigmoid(spec.logits)


def _broadcast(masks: np.ndarray, width: int | None) -> np.ndarray:
    if width is None or masks.shape[1] == width:
        return masks
    if masks.shape[1] != 1:
        raise DimensionError(f"mask of width {masks.shape[1]} cannot cover {width} units")
    return np.repeat(masks, width, axis=1)


def sample_bernoulli_masks(spec: GateSpec, batch: int, rng: np.random.Generator, width: int | None = None):
    """One independent {0,1} mask per example, shape ``(batch, width)``."""
    if spec.kind != "bernoulli":
        raise ConfigError(f"bernoulli sampling requested for a {spec.kind} gate")
    u = rng.random((batch, spec.size))
    return _broadcast((u < keep_probability(spec)).astype(np.float64), width)


def arm_mask_pair(spec_or_logits, u):
    """Antithetic masks ``(1[u > sigmoid(-a)], 1[u < sigmoid(a)])`` sharing ``u``."""
    logits = spec_or_logits.logits if isinstance(spec_or_logits, GateSpec) else np.asarray(spec_or_logits, float)
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != logits.shape[-1]:
        raise DimensionError(f"uniform draw has {u.shape[-1]} coordinates, gate has {logits.shape[-1]}")
    pseudo = (u > sigmoid(-logits)).astype(np.float64)
    true = (u < sigmoid(logits)).astype(np.float64)
    return pseudo, true


def open_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    bad = (u <= 0.0) | (u >= 1.0)
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = (u <= 0.0) | (u >= 1.0)
    return u


def concrete_from_uniform(logits, u, temperature: float):
    """Relaxed mask ``sigmoid((a + logit(u)) / tau)`` and its derivative in ``a``."""
    noise = np.log(u) - np.log1p(-u)
    mask = sigmoid((np.asarray(logits, float) + noise) / temperature)
    return mask, mask * (1.0 - mask) / temperature


def sample_concrete_mask(spec: GateSpec, batch: int, rng: np.random.Generator, width: int | None = None):
    if spec.kind != "concrete":
        raise ConfigError(f"concrete sampling requested for a {spec.kind} gate")
    u = open_uniform(rng, (batch, spec.size))
    mask, dmask = concrete_from_uniform(spec.logits, u, spec.concrete_temperature)
    return _broadcast(mask, width), dmask


def gaussian_variance(spec: GateSpec) -> np.ndarray:
    return spec.gaussian_variance_cap * sigmoid(spec.logits)


def sample_gaussian_mask(spec: GateSpec, batch: int, rng: np.random.Generator, width: int | None = None):
    """Mask ``1 + sqrt(v) * eps`` with ``v = cap * sigmoid(a)``; also returns d mask / d a."""
    if spec.kind != "gaussian":
        raise ConfigError(f"gaussian sampling requested for a {spec.kind} gate")
    eps = rng.standard_normal((batch, spec.size))
    sd = np.sqrt(gaussian_variance(spec))
    mask = 1.0 + sd * eps
    # d sqrt(cap * s) / da = sqrt(cap * s) * (1 - s) / 2
    dmask = eps * sd * (1.0 - sigmoid(spec.logits)) / 2.0
    return _broadcast(mask, width), dmask
