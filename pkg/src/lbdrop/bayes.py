"""Variational-Bayes regulariser, MC posterior predictive and PAvPU.

The KL term for learnable Bernoulli dropout under a quantised zero-mean
Gaussian prior with variance ``s2`` is, per gated input unit ``k`` of layer
``j``::

    sigmoid(a_jk) / (2 s2) * ||M_j[k, :]||^2  -  H(Bernoulli(sigmoid(a_jk)))

``M_j[k, :]`` holds the weights leaving input unit ``k`` (our matrices are
stored fan_in x fan_out, so this is the row dropped when ``z_jk = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .errors import ConfigError, UnsupportedEstimatorError
from .gates import bernoulli_entropy, sample_bernoulli_masks, sigmoid, sigmoid_grad
from .net import MlpModel, forward_pass

DEFAULT_SWEEP = tuple(np.round(np.arange(1, 10) / 10, 10))


@dataclass
class BayesConfig:
    prior_variance: float = 1.0
    mc_passes: int = 10
    kl_weight: float = 0.0

    def __post_init__(self):
        if not self.prior_variance > 0:
            raise ConfigError("prior variance must be positive")
        if self.mc_passes < 1:
            raise ConfigError("at least one Monte Carlo pass is required")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be nonnegative")


@dataclass
class KlTerm:
    value: float
    weight_part: float
    entropy_part: float
    grad_alpha: np.ndarray
    grad_weights: dict[int, np.ndarray]


def kl_regularizer(model: MlpModel, prior_variance: float) -> KlTerm:
    """KL term with analytic gradients for the gate logits and gated weights.

    ``grad_alpha`` is ordered like ``model.gate_logits()``.
    """
    if not prior_variance > 0:
        raise ConfigError("prior variance must be positive")
    weight_part = entropy_part = 0.0
    grad_alpha, grad_w = [], {}
    for j in model.gated_layers:
        gate = model.gates[j]
        if gate.kind != "bernoulli":
            raise UnsupportedEstimatorError(f"layer {j}: KL term is defined for Bernoulli gates, got {gate.kind}")
        if gate.granularity != "per-neuron":
            raise UnsupportedEstimatorError(f"layer {j}: KL term needs per-neuron dropout rates")
        a = gate.logits
        p = sigmoid(a)
        sq = np.sum(model.weights[j] ** 2, axis=1)
        weight_part += float(np.sum(p * sq) / (2.0 * prior_variance))
        entropy_part += float(np.sum(bernoulli_entropy(a)))
        # dH/da = -a * sigmoid'(a)
        grad_alpha.append(sigmoid_grad(a) * (sq / (2.0 * prior_variance) + a))
        grad_w[j] = (p / prior_variance)[:, None] * model.weights[j]
    return KlTerm(
        value=weight_part - entropy_part,
        weight_part=weight_part,
        entropy_part=entropy_part,
        grad_alpha=np.concatenate(grad_alpha) if grad_alpha else np.zeros(0),
        grad_weights=grad_w,
    )


def predictive_entropy(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


@dataclass
class PredictiveSummary:
    mean_probs: np.ndarray
    predictive_entropy: np.ndarray
    correct: np.ndarray | None = None

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.mean_probs, axis=1)


def summarize(prob_passes, labels=None) -> PredictiveSummary:
    mean = np.mean(np.asarray(prob_passes, dtype=np.float64), axis=0)
    correct = None if labels is None else np.argmax(mean, axis=1) == np.asarray(labels)
    return PredictiveSummary(mean, predictive_entropy(mean), correct)


def predictive_posterior(model: MlpModel, inputs, n_passes: int, rng, labels=None, sampler=None) -> PredictiveSummary:
    """Average ``softmax(f(x; W_s))`` over ``n_passes`` stochastic forward passes.

    ``sampler(model, batch, rng)`` returns a mask dict; the default draws
    Bernoulli masks for every gated layer.  The network output is treated as
    logits.
    """
    if n_passes < 1:
        raise ConfigError("at least one Monte Carlo pass is required")
    if sampler is None:
        def sampler(m, b, g):
            return {j: sample_bernoulli_masks(m.gates[j], b, g) for j in m.gated_layers}

    x = np.asarray(inputs, dtype=np.float64)
    passes = []
    for _ in range(n_passes):
        out, _ = forward_pass(model, x, sampler(model, len(x), rng))
        passes.append(softmax(out, axis=1))
    return summarize(passes, labels)


@dataclass
class PavpuReport:
    n_ac: int
    n_ic: int
    n_au: int
    n_iu: int
    threshold_t: float
    entropy_threshold: float
    pavpu: float


@dataclass
class PavpuSweep:
    reports: list[PavpuReport] = field(default_factory=list)

    @property
    def mean_pavpu(self) -> float:
        return float(np.mean([r.pavpu for r in self.reports]))


def pavpu_counts(accurate, entropy, threshold: float, t: float = float("nan")) -> PavpuReport:
    accurate = np.asarray(accurate, dtype=bool)
    uncertain = np.asarray(entropy, dtype=np.float64) > threshold
    n_ac = int(np.sum(accurate & ~uncertain))
    n_ic = int(np.sum(~accurate & ~uncertain))
    n_au = int(np.sum(accurate & uncertain))
    n_iu = int(np.sum(~accurate & uncertain))
    return PavpuReport(n_ac, n_ic, n_au, n_iu, t, float(threshold), (n_iu + n_ac) / accurate.size)


def pavpu(summary: PredictiveSummary, labels, t: float) -> PavpuReport:
    """PAvPU at entropy threshold ``min + t * (max - min)`` over the evaluated set."""
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"threshold fraction t={t} outside [0, 1]")
    ent = np.asarray(summary.predictive_entropy, dtype=np.float64)
    if ent.size == 0:
        raise ConfigError("PAvPU needs at least one prediction")
    labels = np.asarray(labels)
    if labels.shape[0] != ent.size:
        raise ConfigError("labels and predictions differ in length")
    lo, hi = ent.min(), ent.max()
    threshold = hi if t == 1.0 else lo + t * (hi - lo)
    return pavpu_counts(summary.predictions == labels, ent, threshold, float(t))


def pavpu_sweep(summary: PredictiveSummary, labels, ts=DEFAULT_SWEEP) -> PavpuSweep:
    return PavpuSweep([pavpu(summary, labels, float(t)) for t in sorted(ts)])
