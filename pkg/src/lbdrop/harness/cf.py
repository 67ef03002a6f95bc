"""Collaborative filtering with the semi-implicit VAE and learnable input dropout.

Users are split into training users and held-out users; each held-out user's
interactions are split again into a fold-in part (fed to the encoder) and a
hidden part that the ranking is scored against.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from ..errors import ConfigError
from ..gates import sample_bernoulli_masks, sample_concrete_mask, sample_gaussian_mask, sigmoid
from ..net import AdamState, MlpModel, adam_step, forward_pass
from ..rng import substream
from ..sivae import SivaeModel, beta_schedule, encode, sivae_alpha_gradient, sivae_objective
from .config import RunConfig
from .data import fold_in_split, read_interactions, split_users, synthetic_interactions
from .metrics import mask_seen, ranking_metrics

log = logging.getLogger(__name__)

CF_ESTIMATORS = ("arm", "concrete", "gaussian", "regular", "none")
SAMPLERS = {"concrete": sample_concrete_mask, "gaussian": sample_gaussian_mask}
METRIC_HEADER = ["model", "recall_at_20", "recall_at_50", "ndcg_at_100"]
EPOCH_HEADER = ["epoch", "beta", "train_loss", "mean_keep"]


@dataclass
class CfData:
    train: np.ndarray
    fold_in: np.ndarray
    held_out: np.ndarray


@dataclass
class CfResult:
    metrics: dict
    baselines: dict
    epochs: list = field(default_factory=list)
    model: SivaeModel | None = None
    initial_logits: np.ndarray | None = None
    seconds: float = 0.0


def load_data(cfg: RunConfig) -> CfData:
    if cfg.interactions_file:
        x, _, _ = read_interactions(cfg.interactions_file)
        if x.size == 0:
            raise ConfigError(f"{cfg.interactions_file}: no interactions")
    else:
        x = synthetic_interactions(
            cfg.n_users,
            cfg.n_items,
            substream(cfg.seed, 20),
            cfg.n_factors,
            cfg.mean_interactions,
            cfg.popularity_weight,
            cfg.factor_shape,
            cfg.user_concentration,
        )
    train_idx, held_idx = split_users(len(x), cfg.n_heldout_users, substream(cfg.seed, 21))
    fold, held, _ = fold_in_split(x[held_idx], substream(cfg.seed, 22), cfg.holdout_frac)
    return CfData(x[train_idx], fold, held)


def build_model(cfg: RunConfig, n_items: int) -> SivaeModel:
    keep = cfg.regular_keep if cfg.estimator == "regular" else cfg.init_keep
    model = SivaeModel.init(
        n_items, cfg.cf_hidden, cfg.latent_dim, substream(cfg.seed, 23), keep=keep, normalize_input=True
    )
    if cfg.estimator == "none":
        enc = model.encoder
        model.encoder = MlpModel(enc.layer_sizes, enc.weights, enc.biases, enc.activations, [None] * enc.n_layers)
    return model


def _params(model: SivaeModel) -> dict:
    p = {f"enc.{k}": v for k, v in model.encoder.params().items()}
    p.update({f"dec.{k}": v for k, v in model.decoder.params().items()})
    return p


def relaxed_gate(model: SivaeModel, cfg: RunConfig):
    """The input gate reinterpreted as a Concrete or Gaussian gate with the same logits."""
    return model.encoder.gates[0].copy(
        kind=cfg.estimator,
        concrete_temperature=cfg.concrete_temperature,
        gaussian_variance_cap=cfg.gaussian_variance_cap,
    )


def draw_relaxed(gate, n_comp: int, batch: int, rng):
    """Masks and d mask / d logit for ``n_comp`` stacked copies of a batch."""
    mask, dmask = SAMPLERS[gate.kind](gate, n_comp * batch, rng)
    return mask.reshape(n_comp, batch, -1), dmask


def score_users(model: SivaeModel, x, n_passes: int, rng, cfg: RunConfig | None = None) -> np.ndarray:
    """Item probabilities averaged over encoder mask draws, decoding the posterior mean."""
    x = np.asarray(x, dtype=np.float64)
    gated = model.encoder.gated_layers
    passes = n_passes if gated else 1
    relaxed = cfg is not None and cfg.estimator in SAMPLERS
    probs = np.zeros_like(x)
    for _ in range(passes):
        if relaxed:
            masks = {0: draw_relaxed(relaxed_gate(model, cfg), 1, len(x), rng)[0][0]}
        else:
            masks = {j: sample_bernoulli_masks(model.encoder.gates[j], len(x), rng) for j in gated}
        mu, _ = encode(model, x, masks)
        out, _ = forward_pass(model.decoder, mu)
        probs += softmax(out, axis=1)
    return probs / passes


def evaluate(scores, data: CfData) -> dict:
    s = mask_seen(scores, data.fold_in)
    return {
        "recall_at_20": ranking_metrics(s, data.held_out, 20).recall_at_R,
        "recall_at_50": ranking_metrics(s, data.held_out, 50).recall_at_R,
        "ndcg_at_100": ranking_metrics(s, data.held_out, 100).ndcg_at_R,
    }


def baselines(data: CfData, seed: int) -> dict:
    rand = substream(seed, 25).random(data.fold_in.shape)
    pop = np.broadcast_to(data.train.sum(axis=0), data.fold_in.shape)
    return {"random": evaluate(rand, data), "popularity": evaluate(pop, data)}


def run_cf(cfg: RunConfig) -> CfResult:
    if cfg.estimator not in CF_ESTIMATORS:
        raise ConfigError(f"cf supports estimators {', '.join(CF_ESTIMATORS)}")
    start = time.perf_counter()
    data = load_data(cfg)
    model = build_model(cfg, data.train.shape[1])
    initial = model.encoder.gate_logits().copy()
    w_state, a_state = AdamState(), AdamState()
    train_rng, order_rng = substream(cfg.seed, 26), substream(cfg.seed, 27)
    n = len(data.train)

    epochs = []
    for epoch in range(1, cfg.cf_epochs + 1):
        model.beta = beta_schedule(epoch, cfg.anneal_epochs, cfg.beta_max)
        perm = order_rng.permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            xb = data.train[perm[s : s + cfg.batch_size]]
            if cfg.estimator in SAMPLERS:
                m, dm = draw_relaxed(relaxed_gate(model, cfg), cfg.aux_samples + 1, len(xb), train_rng)
                res = sivae_objective(model, xb, cfg.aux_samples, train_rng, masks=m[0], aux_masks=m[1:])
            else:
                res = sivae_objective(model, xb, cfg.aux_samples, train_rng)
            grads = {f"enc.{k}": v for k, v in res.encoder_grads.as_dict().items()}
            grads.update({f"dec.{k}": v for k, v in res.decoder_grads.as_dict().items()})
            alpha_grad = None
            if cfg.estimator == "arm":
                alpha_grad = sivae_alpha_gradient(model, res, train_rng, cfg.samples).grads
            elif cfg.estimator in SAMPLERS:
                alpha_grad = np.sum(res.encoder_grads.masks[0] * dm, axis=0)
            adam_step(_params(model), grads, w_state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            model.encoder.touch()
            model.decoder.touch()
            if alpha_grad is not None:
                alpha = {"alpha": model.encoder.gate_logits()}
                adam_step(alpha, {"alpha": alpha_grad}, a_state, cfg.gate_lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
                model.encoder.set_gate_logits(alpha["alpha"])
            losses.append(res.loss)
        logits = model.encoder.gate_logits()
        keep = float(np.mean(sigmoid(logits))) if logits.size else 1.0
        epochs.append([epoch, model.beta, float(np.mean(losses)), keep])

    scores = score_users(model, data.fold_in, cfg.mc_passes, substream(cfg.seed, 28), cfg)
    return CfResult(
        metrics=evaluate(scores, data),
        baselines=baselines(data, cfg.seed),
        epochs=epochs,
        model=model,
        initial_logits=initial,
        seconds=time.perf_counter() - start,
    )


def metric_rows(result: CfResult, name: str) -> list[list]:
    rows = [[name, *(result.metrics[h] for h in METRIC_HEADER[1:])]]
    for base, m in result.baselines.items():
        rows.append([base, *(m[h] for h in METRIC_HEADER[1:])])
    return rows
