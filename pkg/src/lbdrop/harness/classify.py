"""Two-moons classification with learnable dropout and fixed-rate baselines."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from ..bayes import kl_regularizer, pavpu_sweep, predictive_posterior, summarize
from ..errors import ConfigError
from ..estimators import arm_gradient
from ..gates import GateSpec, sample_bernoulli_masks, sample_concrete_mask, sample_gaussian_mask, sigmoid
from ..net import AdamState, MlpModel, adam_step, backward_pass, empirical_loss, forward_pass
from ..rng import substream
from .config import RunConfig
from .data import two_moons

log = logging.getLogger(__name__)

LOSS = "softmax-cross-entropy"
PAVPU_HEADER = ["t", "entropy_threshold", "n_ac", "n_ic", "n_au", "n_iu", "pavpu"]
EPOCH_HEADER = ["epoch", "train_loss", "train_accuracy", "mean_keep"]
SAMPLERS = {"concrete": sample_concrete_mask, "gaussian": sample_gaussian_mask}


@dataclass
class ClassifyResult:
    model: MlpModel
    initial_logits: np.ndarray
    train_accuracy: float
    test_accuracy: float
    pavpu: list = field(default_factory=list)
    pavpu_t1: object = None
    mean_pavpu: float = float("nan")
    epochs: list = field(default_factory=list)
    epochs_to_95: int | None = None
    seconds: float = 0.0


def gate_kind(estimator: str) -> str:
    return {"concrete": "concrete", "gaussian": "gaussian", "none": "none"}.get(estimator, "bernoulli")


def build_model(cfg: RunConfig, rng) -> MlpModel:
    h1, h2 = cfg.hidden_sizes()
    kind = gate_kind(cfg.estimator)
    keep = cfg.regular_keep if cfg.estimator in ("regular", "mc-dropout") else cfg.init_keep
    gates = [None]
    for w in (h1, h2):
        if kind == "none":
            gates.append(None)
        else:
            gates.append(
                GateSpec.uniform(
                    w,
                    kind,
                    keep,
                    concrete_temperature=cfg.concrete_temperature,
                    gaussian_variance_cap=cfg.gaussian_variance_cap,
                )
            )
    return MlpModel.init([2, h1, h2, 2], ["relu", "relu", "identity"], rng, gates)


def fixed_rate_masks(model: MlpModel, batch: int, rng) -> dict:
    """Bernoulli masks rescaled by ``1/p`` so the expected activation is unchanged."""
    return {j: sample_bernoulli_masks(model.gates[j], batch, rng) / sigmoid(model.gates[j].logits) for j in model.gated_layers}


def _kl_view(model: MlpModel) -> MlpModel | None:
    # the KL term depends only on sigmoid(alpha) and W, so a relaxed gate shares it
    if any(model.gates[j].kind == "gaussian" for j in model.gated_layers):
        return None
    if all(model.gates[j].kind == "bernoulli" for j in model.gated_layers):
        return model
    return model.with_gates(kind="bernoulli")


def train_step(model, xb, yb, cfg, kl_weight, w_state, a_state, rng):
    est = cfg.estimator
    masks, dmasks = None, {}
    if est in ("arm",):
        masks = {j: sample_bernoulli_masks(model.gates[j], len(xb), rng) for j in model.gated_layers}
    elif est in ("regular", "mc-dropout"):
        masks = fixed_rate_masks(model, len(xb), rng)
    elif est in SAMPLERS:
        masks = {}
        for j in model.gated_layers:
            masks[j], dmasks[j] = SAMPLERS[est](model.gates[j], len(xb), rng)
    out, cache = forward_pass(model, xb, masks)
    loss = empirical_loss(out, yb, LOSS)
    g = backward_pass(model, cache, yb, LOSS)
    grads = g.as_dict()

    learn_gates = est in ("arm", "concrete", "gaussian")
    alpha_grad = None
    kl_model = _kl_view(model) if learn_gates and kl_weight > 0 else None
    kl = kl_regularizer(kl_model, cfg.prior_variance) if kl_model is not None else None
    if kl is not None:
        for j, gw in kl.grad_weights.items():
            grads[f"W{j}"] = grads[f"W{j}"] + kl_weight * gw
        loss += kl_weight * kl.value
    if est == "arm":
        reg = kl_weight * kl.grad_alpha if kl is not None else None
        alpha_grad = arm_gradient(model, (xb, yb), rng, cfg.samples, LOSS, regularizer_grad=reg).grads
    elif est in SAMPLERS:
        alpha_grad = np.concatenate([np.sum(g.masks[j] * dmasks[j], axis=0) for j in model.gated_layers])
        if kl is not None:
            alpha_grad = alpha_grad + kl_weight * kl.grad_alpha

    adam_step(model.params(), grads, w_state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    model.touch()
    if alpha_grad is not None:
        alpha = {"alpha": model.gate_logits()}
        adam_step(alpha, {"alpha": alpha_grad}, a_state, cfg.gate_lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        model.set_gate_logits(alpha["alpha"])
    return loss


def eval_sampler(estimator: str):
    """Mask sampler used at prediction time; ``None`` means a deterministic pass."""
    if estimator in ("regular", "none"):
        return None
    if estimator == "mc-dropout":
        return fixed_rate_masks
    if estimator == "arm":
        return lambda m, b, g: {j: sample_bernoulli_masks(m.gates[j], b, g) for j in m.gated_layers}
    sampler = SAMPLERS[estimator]
    return lambda m, b, g: {j: sampler(m.gates[j], b, g)[0] for j in m.gated_layers}


def predict(model: MlpModel, x, cfg: RunConfig, rng, labels=None):
    sampler = eval_sampler(cfg.estimator)
    if sampler is None:
        out, _ = forward_pass(model, x)
        return summarize([softmax(out, axis=1)], labels)
    return predictive_posterior(model, x, cfg.mc_passes, rng, labels=labels, sampler=sampler)


def run_classification(cfg: RunConfig, eval_every: int = 10, stop_at: float | None = None) -> ClassifyResult:
    """Train on two moons and evaluate accuracy and PAvPU on a held-out draw.

    ``stop_at`` ends training early once the evaluated train accuracy reaches it.
    """
    if cfg.estimator == "reinforce":
        raise ConfigError("classification supports arm, concrete, gaussian, regular, mc-dropout, none")
    start = time.perf_counter()
    x_tr, y_tr = two_moons(cfg.n_train, substream(cfg.seed, 10), cfg.moons_noise)
    x_te, y_te = two_moons(cfg.n_test, substream(cfg.seed, 11), cfg.moons_noise)
    model = build_model(cfg, substream(cfg.seed, 12))
    initial = model.gate_logits().copy()
    kl_weight = 1.0 / cfg.n_train if cfg.kl_weight < 0 else cfg.kl_weight
    w_state, a_state = AdamState(), AdamState()
    train_rng, eval_rng, order_rng = substream(cfg.seed, 13), substream(cfg.seed, 14), substream(cfg.seed, 15)

    epochs, reached = [], None
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(cfg.n_train)
        losses = []
        for s in range(0, cfg.n_train, cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            losses.append(train_step(model, x_tr[idx], y_tr[idx], cfg, kl_weight, w_state, a_state, train_rng))
        acc = float("nan")
        if epoch % eval_every == 0 or epoch == cfg.epochs:
            acc = float(np.mean(predict(model, x_tr, cfg, eval_rng, y_tr).correct))
            if reached is None and acc >= 0.95:
                reached = epoch
        keep = float(np.mean(sigmoid(model.gate_logits()))) if model.n_gate_logits else 1.0
        epochs.append([epoch, float(np.mean(losses)), acc, keep])
        if stop_at is not None and acc >= stop_at:
            break

    train_summary = predict(model, x_tr, cfg, eval_rng, y_tr)
    test_summary = predict(model, x_te, cfg, eval_rng, y_te)
    sweep = pavpu_sweep(test_summary, y_te, cfg.sweep_ts())
    t1 = pavpu_sweep(test_summary, y_te, [1.0]).reports[0]
    return ClassifyResult(
        model=model,
        initial_logits=initial,
        train_accuracy=float(np.mean(train_summary.correct)),
        test_accuracy=float(np.mean(test_summary.correct)),
        pavpu=sweep.reports,
        pavpu_t1=t1,
        mean_pavpu=sweep.mean_pavpu,
        epochs=epochs,
        epochs_to_95=reached,
        seconds=time.perf_counter() - start,
    )


def pavpu_rows(result: ClassifyResult) -> list[list]:
    return [
        [r.threshold_t, r.entropy_threshold, r.n_ac, r.n_ic, r.n_au, r.n_iu, r.pavpu]
        for r in [*result.pavpu, result.pavpu_t1]
    ]
