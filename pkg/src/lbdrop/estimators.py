"""Gradient estimators for gate logits and the exact enumeration oracle.

All estimators target the gradient of ``scale * sum_i E_i(z_i)`` where
``E_i`` is the per-example loss and ``z_i`` the example's gate mask.  The
default ``scale`` is ``1 / batch`` (the batch-mean loss); passing
``dataset_size=N`` gives the ``N / M`` minibatch scaling.

Masks are drawn per example by default.  With ``shared_masks=True`` one mask
is drawn per Monte Carlo sample and applied to the whole batch; the target
gradient is the same (the objective is linear in the per-example terms) and
the batch loss is then a function of ``K`` bits only, so configurations are
memoised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DimensionError, UnsupportedEstimatorError
from .gates import (
    arm_mask_pair,
    concrete_from_uniform,
    gaussian_variance,
    sigmoid,
    sigmoid_grad,
    open_uniform,
)
from .net import MlpModel, backward_from_output, forward_pass, loss_output_grad, per_example_loss
from .rng import as_generator

MAX_ENUMERATION_BITS = 20
ESTIMATOR_KINDS = ("arm", "reinforce", "concrete-pathwise", "gaussian-pathwise", "exact")

# z rows for a subset of examples -> per-example losses for those rows
RowObjective = Callable[[np.ndarray, np.ndarray], np.ndarray]
# configurations (n, K) -> full-batch objective value per configuration
ConfigObjective = Callable[[np.ndarray], np.ndarray]


@dataclass
class GradEstimate:
    grads: np.ndarray
    estimator: str
    n_samples: int
    seed: int | None = None
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if not np.all(np.isfinite(self.grads)):
            raise ArithmeticError("gradient estimate is not finite")


@dataclass
class EstimatorDiagnostics:
    bias: np.ndarray
    std: np.ndarray
    mse: np.ndarray
    n: int


def _scale(batch: int, scale, dataset_size) -> float:
    if scale is not None:
        return float(scale)
    if dataset_size is not None:
        return float(dataset_size) / batch
    return 1.0 / batch


def _require(model: MlpModel, kind: str, estimator: str) -> None:
    if not model.gated_layers:
        raise ConfigError("model has no gates")
    for j in model.gated_layers:
        if model.gates[j].kind != kind:
            raise UnsupportedEstimatorError(f"{estimator} needs {kind} gates, layer {j} is {model.gates[j].kind}")


def _split_masks(model: MlpModel, z: np.ndarray) -> dict[int, np.ndarray]:
    return model.split_gate_vector(np.atleast_2d(z))


def row_objective(model: MlpModel, x, targets, kind: str) -> RowObjective:
    """Per-example loss of ``model`` as a function of per-example gate masks."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    targets = np.asarray(targets)

    def objective(z: np.ndarray, rows: np.ndarray) -> np.ndarray:
        if rows.size == 0:
            return np.zeros(0)
        out, _ = forward_pass(model, x[rows], _split_masks(model, z))
        return per_example_loss(out, targets[rows], kind)

    return objective


def config_objective(model: MlpModel, x, targets, kind: str, scale: float) -> ConfigObjective:
    """``scale * sum_i E_i(z)`` with one mask ``z`` shared by every example."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]

    def objective(configs: np.ndarray) -> np.ndarray:
        vals = np.empty(len(configs))
        for c, z in enumerate(configs):
            out, _ = forward_pass(model, x, _split_masks(model, z))
            vals[c] = scale * np.sum(per_example_loss(out, targets, kind))
        return vals

    return objective


class _ConfigTable:
    """Memoised configuration objective keyed by the bit pattern."""

    def __init__(self, objective: ConfigObjective, k: int):
        if k > 62:
            raise DimensionError("too many gate bits to memoise configurations")
        self.objective = objective
        self.weights = 1 << np.arange(k, dtype=np.int64)
        self.values: dict[int, float] = {}

    def __call__(self, z: np.ndarray) -> np.ndarray:
        codes = (z.astype(np.int64) * self.weights).sum(axis=1)
        uniq, first = np.unique(codes, return_index=True)
        todo = [i for i, c in zip(first, uniq) if int(c) not in self.values]
        if todo:
            for i, v in zip(todo, self.objective(z[todo])):
                self.values[int(codes[i])] = float(v)
        return np.array([self.values[int(c)] for c in codes])


def arm_from_rows(objective: RowObjective, logits, batch: int, rng, n_samples: int, scale: float) -> np.ndarray:
    """Per-sample ARM estimates ``(n_samples, K)`` with a fresh ``u`` per example.

    Examples whose two antithetic masks coincide contribute exactly zero, so
    their second forward pass is skipped.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    logits = np.asarray(logits, dtype=np.float64)
    out = np.empty((n_samples, logits.size))
    for s in range(n_samples):
        u = rng.random((batch, logits.size))
        pseudo, true = arm_mask_pair(logits, u)
        rows = np.flatnonzero(np.any(pseudo != true, axis=1))
        diff = objective(pseudo[rows], rows) - objective(true[rows], rows)
        out[s] = scale * (diff @ (u[rows] - 0.5))
    return out


def arm_from_configs(objective: ConfigObjective, logits, rng, n_samples: int) -> np.ndarray:
    """Per-sample ARM estimates with one ``u`` per sample (batch-level objective)."""
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    logits = np.asarray(logits, dtype=np.float64)
    table = objective if isinstance(objective, _ConfigTable) else _ConfigTable(objective, logits.size)
    u = rng.random((n_samples, logits.size))
    pseudo, true = arm_mask_pair(logits, u)
    diff = table(pseudo) - table(true)
    return diff[:, None] * (u - 0.5)


def _finish(samples, estimator, seed, regularizer_grad=None) -> GradEstimate:
    grads = samples.mean(axis=0)
    if regularizer_grad is not None:
        grads = grads + np.asarray(regularizer_grad, dtype=np.float64)
        samples = samples + np.asarray(regularizer_grad, dtype=np.float64)
    return GradEstimate(grads, estimator, len(samples), seed, samples)


def arm_gradient(
    model: MlpModel,
    batch,
    rng,
    n_samples: int = 1,
    loss_kind: str = "squared-error",
    *,
    scale: float | None = None,
    dataset_size: int | None = None,
    regularizer_grad=None,
    shared_masks: bool = False,
) -> GradEstimate:
    """ARM estimate of the gate-logit gradient; weights receive nothing here.

    ``regularizer_grad`` (an array over all gate logits) is added to the
    average, as for an analytic penalty on the logits.
    """
    _require(model, "bernoulli", "arm")
    x, targets = batch
    x = np.asarray(x, dtype=np.float64)
    gen, seed = as_generator(rng)
    s = _scale(len(x), scale, dataset_size)
    logits = model.gate_logits()
    if shared_masks:
        samples = arm_from_configs(config_objective(model, x, targets, loss_kind, s), logits, gen, n_samples)
    else:
        samples = arm_from_rows(row_objective(model, x, targets, loss_kind), logits, len(x), gen, n_samples, s)
    return _finish(samples, "arm", seed, regularizer_grad)


def reinforce_gradient(
    model: MlpModel,
    batch,
    rng,
    n_samples: int = 1,
    loss_kind: str = "squared-error",
    *,
    scale: float | None = None,
    dataset_size: int | None = None,
    shared_masks: bool = False,
) -> GradEstimate:
    """Score-function estimate: ``L(z) * (z - sigmoid(a))``."""
    _require(model, "bernoulli", "reinforce")
    x, targets = batch
    x = np.asarray(x, dtype=np.float64)
    gen, seed = as_generator(rng)
    s = _scale(len(x), scale, dataset_size)
    logits = model.gate_logits()
    p = sigmoid(logits)
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    if shared_masks:
        table = _ConfigTable(config_objective(model, x, targets, loss_kind, s), logits.size)
        z = (gen.random((n_samples, logits.size)) < p).astype(np.float64)
        samples = table(z)[:, None] * (z - p)
    else:
        objective = row_objective(model, x, targets, loss_kind)
        rows = np.arange(len(x))
        samples = np.empty((n_samples, logits.size))
        for k in range(n_samples):
            z = (gen.random((len(x), logits.size)) < p).astype(np.float64)
            samples[k] = s * (objective(z, rows) @ (z - p))
    return _finish(samples, "reinforce", seed)


def _pathwise(model, batch, gen, n_samples, loss_kind, s, shared, draw):
    x, targets = batch
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    rows = 1 if shared else len(x)
    samples = np.empty((n_samples, model.n_gate_logits))
    for k in range(n_samples):
        masks, dmasks = {}, {}
        for j in model.gated_layers:
            masks[j], dmasks[j] = draw(model.gates[j], rows, gen)
        out, cache = forward_pass(model, x, masks)
        d_out = loss_output_grad(out, targets, loss_kind) * (s * len(x))
        g = backward_from_output(model, cache, d_out)
        samples[k] = np.concatenate([np.sum(g.masks[j] * dmasks[j], axis=0) for j in model.gated_layers])
    return samples


def _draw_concrete(gate, rows, gen):
    u = open_uniform(gen, (rows, gate.size))
    return concrete_from_uniform(gate.logits, u, gate.concrete_temperature)


def _draw_gaussian(gate, rows, gen):
    eps = gen.standard_normal((rows, gate.size))
    sd = np.sqrt(gaussian_variance(gate))
    return 1.0 + sd * eps, eps * sd * (1.0 - sigmoid(gate.logits)) / 2.0


def concrete_gradient(
    model: MlpModel,
    batch,
    rng,
    n_samples: int = 1,
    loss_kind: str = "squared-error",
    *,
    scale: float | None = None,
    dataset_size: int | None = None,
    shared_masks: bool = False,
) -> GradEstimate:
    """Pathwise gradient through relaxed masks ``sigmoid((a + logit u) / tau)``."""
    _require(model, "concrete", "concrete-pathwise")
    gen, seed = as_generator(rng)
    s = _scale(len(np.atleast_1d(batch[0])), scale, dataset_size)
    samples = _pathwise(model, batch, gen, n_samples, loss_kind, s, shared_masks, _draw_concrete)
    return _finish(samples, "concrete-pathwise", seed)


def gaussian_gradient(
    model: MlpModel,
    batch,
    rng,
    n_samples: int = 1,
    loss_kind: str = "squared-error",
    *,
    scale: float | None = None,
    dataset_size: int | None = None,
    shared_masks: bool = False,
) -> GradEstimate:
    """Pathwise gradient for multiplicative Gaussian noise with learnable variance."""
    _require(model, "gaussian", "gaussian-pathwise")
    gen, seed = as_generator(rng)
    s = _scale(len(np.atleast_1d(batch[0])), scale, dataset_size)
    samples = _pathwise(model, batch, gen, n_samples, loss_kind, s, shared_masks, _draw_gaussian)
    return _finish(samples, "gaussian-pathwise", seed)


def enumerate_configs(k: int) -> np.ndarray:
    """All ``2**k`` binary vectors, row ``c`` holding the bits of ``c`` (LSB first)."""
    codes = np.arange(2**k, dtype=np.int64)
    return ((codes[:, None] >> np.arange(k)) & 1).astype(np.float64)


def config_probabilities(configs: np.ndarray, logits) -> np.ndarray:
    p = sigmoid(logits)
    return np.prod(np.where(configs > 0, p, 1.0 - p), axis=1)


def exact_from_configs(objective: ConfigObjective, logits) -> np.ndarray:
    """``sigmoid'(a_k) * (E[L | z_k = 1] - E[L | z_k = 0])`` by full enumeration."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.size
    if k > MAX_ENUMERATION_BITS:
        raise ConfigError(f"refusing to enumerate 2^{k} gate configurations (limit 2^{MAX_ENUMERATION_BITS})")
    configs = enumerate_configs(k)
    values = objective(configs)
    p = sigmoid(logits)
    prob = config_probabilities(configs, logits)
    codes = np.arange(configs.shape[0])
    grad = np.empty(k)
    for i in range(k):
        on = codes[(codes >> i) & 1 == 1]
        off = on ^ (1 << i)
        # probability of the remaining coordinates, shared by each on/off pair
        w = prob[on] / p[i]
        grad[i] = sigmoid_grad(logits[i]) * np.sum(w * (values[on] - values[off]))
    return grad


def exact_expectation(objective: ConfigObjective, logits) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size > MAX_ENUMERATION_BITS:
        raise ConfigError(f"refusing to enumerate 2^{logits.size} gate configurations")
    configs = enumerate_configs(logits.size)
    return float(np.sum(config_probabilities(configs, logits) * objective(configs)))


def exact_gate_gradient(
    model: MlpModel,
    batch,
    loss_kind: str = "squared-error",
    *,
    scale: float | None = None,
    dataset_size: int | None = None,
) -> GradEstimate:
    """Ground-truth gradient of the expected loss over Bernoulli gates."""
    _require(model, "bernoulli", "exact")
    x, targets = batch
    s = _scale(len(np.atleast_1d(x)), scale, dataset_size)
    if model.n_gate_logits > MAX_ENUMERATION_BITS:
        raise ConfigError(f"refusing to enumerate 2^{model.n_gate_logits} gate configurations")
    grad = exact_from_configs(config_objective(model, x, targets, loss_kind, s), model.gate_logits())
    return GradEstimate(grad, "exact", 0, None)


def estimator_diagnostics(samples, exact) -> EstimatorDiagnostics:
    """Coordinate-wise bias, sample standard deviation and MSE against ``exact``."""
    if isinstance(samples, GradEstimate):
        arr = samples.samples
    elif len(samples) and isinstance(samples[0], GradEstimate):
        arr = np.stack([s.grads for s in samples])
    else:
        arr = np.asarray(samples, dtype=np.float64)
    ref = exact.grads if isinstance(exact, GradEstimate) else np.asarray(exact, dtype=np.float64)
    if arr is None or arr.ndim != 2 or arr.shape[0] < 2:
        raise ConfigError("diagnostics need at least two samples")
    if arr.shape[1] != ref.size:
        raise DimensionError(f"samples have {arr.shape[1]} coordinates, exact gradient {ref.size}")
    err = arr - ref
    return EstimatorDiagnostics(
        bias=err.mean(axis=0),
        std=arr.std(axis=0, ddof=1),
        mse=np.mean(err**2, axis=0),
        n=arr.shape[0],
    )
