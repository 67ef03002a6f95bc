"""Semi-implicit VAE whose encoder is mixed implicitly by dropout masks.

For each example a mask ``z`` is drawn, the encoder maps ``(x, z)`` to a
diagonal Gaussian, ``eta`` is reparameterised from it, and ``V`` auxiliary
masks give extra mixture components.  The per-example loss is::

    -[log p(x | eta) + beta * log p(eta)
      - beta * log((q(eta | x, z) + sum_v q(eta | x, z_v)) / (V + 1))]

Encoder and decoder weights get reparameterisation gradients; gate logits
get ARM gradients through ``sivae_alpha_gradient``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import log_expit, log_softmax, logsumexp, softmax

from .errors import ConfigError, DimensionError, NumericError
from .estimators import GradEstimate, arm_from_rows
from .gates import GateSpec, sigmoid
from .net import Gradients, MlpModel, backward_from_output, forward_pass
from .rng import as_generator

LIKELIHOODS = ("multinomial", "bernoulli", "gaussian")
LOGVAR_BOUND = 10.0
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class SivaeModel:
    encoder: MlpModel
    decoder: MlpModel
    latent_dim: int
    likelihood: str = "multinomial"
    beta: float = 1.0
    normalize_input: bool = False

    def __post_init__(self):
        if self.encoder.layer_sizes[-1] != 2 * self.latent_dim:
            raise DimensionError("encoder must output mean and log-variance (2 x latent_dim)")
        if self.decoder.layer_sizes[0] != self.latent_dim:
            raise DimensionError("decoder input width must equal latent_dim")
        if self.decoder.layer_sizes[-1] != self.encoder.layer_sizes[0]:
            raise DimensionError("decoder output width must equal the data dimension")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError(f"unknown likelihood {self.likelihood!r}")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        for j in self.encoder.gated_layers:
            if self.encoder.gates[j].kind != "bernoulli":
                raise ConfigError("SIVAE encoder gates must be Bernoulli")

    @classmethod
    def init(cls, n_items: int, hidden: int, latent_dim: int, rng, keep: float = 0.5, **kw):
        gates = [GateSpec.uniform(n_items, keep=keep), None]
        enc = MlpModel.init([n_items, hidden, 2 * latent_dim], ["tanh", "identity"], rng, gates)
        dec = MlpModel.init([latent_dim, hidden, n_items], ["tanh", "identity"], rng)
        return cls(enc, dec, latent_dim, **kw)

    @property
    def n_gate_logits(self) -> int:
        return self.encoder.n_gate_logits

    def prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not self.normalize_input:
            return x
        norm = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.where(norm > 0, norm, 1.0)


def encode(model: SivaeModel, x, masks):
    """Gaussian parameters ``(mu, var)`` for one deterministic encoder pass.

    ``masks`` is a flat ``(batch, K)`` array over all encoder gate logits or
    a per-layer dict.
    """
    mu, var, _, _ = _encode(model, model.prepare(x), masks)
    return mu, var


def _encode(model: SivaeModel, xin, masks):
    enc = model.encoder
    if not isinstance(masks, dict):
        masks = enc.split_gate_vector(np.atleast_2d(np.asarray(masks, dtype=np.float64)))
    out, cache = forward_pass(enc, xin, masks)
    d = model.latent_dim
    raw = out[:, d:]
    logvar = np.clip(raw, -LOGVAR_BOUND, LOGVAR_BOUND)
    return out[:, :d], np.exp(logvar), (np.abs(raw) < LOGVAR_BOUND), cache


def gaussian_log_density(eta, mu, var) -> np.ndarray:
    """Diagonal Gaussian log density summed over the last axis."""
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise NumericError("Gaussian variance must be positive")
    diff = np.asarray(eta, dtype=np.float64) - mu
    return -0.5 * np.sum(LOG_2PI + np.log(var) + diff * diff / var, axis=-1)


def multinomial_log_likelihood(logits, x) -> np.ndarray:
    """``sum_i x_i log softmax(logits)_i`` per row."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ConfigError("multinomial counts must be nonnegative")
    return np.sum(x * log_softmax(np.asarray(logits, dtype=np.float64), axis=-1), axis=-1)


def log_likelihood(logits, x, kind: str) -> np.ndarray:
    if kind == "multinomial":
        return multinomial_log_likelihood(logits, x)
    x = np.asarray(x, dtype=np.float64)
    if kind == "bernoulli":
        return np.sum(x * log_expit(logits) + (1.0 - x) * log_expit(-logits), axis=-1)
    if kind == "gaussian":
        return -0.5 * np.sum((x - logits) ** 2 + LOG_2PI, axis=-1)
    raise ConfigError(f"unknown likelihood {kind!r}")


def _log_likelihood_grad(logits, x, kind: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "multinomial":
        return x - softmax(logits, axis=-1) * x.sum(axis=-1, keepdims=True)
    if kind == "bernoulli":
        return x - sigmoid(logits)
    return x - logits


def beta_schedule(epoch: int, total_anneal_epochs: int, beta_max: float = 1.0) -> float:
    """Linear ramp from 0 to ``beta_max`` over ``total_anneal_epochs``."""
    if total_anneal_epochs < 1:
        raise ConfigError("total_anneal_epochs must be at least 1")
    return min(beta_max, beta_max * epoch / total_anneal_epochs)


@dataclass
class SivaeResult:
    loss: float
    per_example: np.ndarray
    encoder_grads: Gradients | None
    decoder_grads: Gradients | None
    masks: np.ndarray
    aux_masks: np.ndarray
    eps: np.ndarray
    log_q: np.ndarray
    mixture_log_q: np.ndarray
    mask_objective: Callable = field(repr=False, default=None)


def _evaluate(model: SivaeModel, x, own, aux, eps, grads: bool):
    """Loss per example for fixed masks and noise; optionally reparameterisation grads."""
    xin = model.prepare(x)
    b, d = len(x), model.latent_dim
    n_comp = 1 + len(aux)
    stacked = np.concatenate([own[None], aux], axis=0).reshape(n_comp * b, -1)
    mu, var, live, enc_cache = _encode(model, np.tile(xin, (n_comp, 1)), stacked)
    mu = mu.reshape(n_comp, b, d)
    var = var.reshape(n_comp, b, d)
    eta = mu[0] + np.sqrt(var[0]) * eps
    dec_out, dec_cache = forward_pass(model.decoder, eta)
    ll = log_likelihood(dec_out, x, model.likelihood)
    log_prior = gaussian_log_density(eta, 0.0, np.ones(d))
    log_q = gaussian_log_density(eta[None], mu, var)
    mix = logsumexp(log_q, axis=0) - np.log(n_comp)
    per_example = -(ll + model.beta * log_prior - model.beta * mix)
    if not np.all(np.isfinite(per_example)):
        raise NumericError("non-finite SIVAE objective")
    if not grads:
        return per_example, log_q, mix, None, None

    g = 1.0 / b
    beta = model.beta
    dec_grads = backward_from_output(model.decoder, dec_cache, -g * _log_likelihood_grad(dec_out, x, model.likelihood))
    w = softmax(log_q, axis=0)[..., None]
    resid = (eta[None] - mu) / var
    d_eta = dec_grads.inputs + g * beta * eta - g * beta * np.sum(w * resid, axis=0)
    d_mu = g * beta * w * resid
    d_lv = g * beta * w * (-0.5 + 0.5 * resid * (eta[None] - mu))
    d_mu[0] += d_eta
    d_lv[0] += d_eta * 0.5 * np.sqrt(var[0]) * eps
    d_lv = d_lv.reshape(n_comp * b, d) * live
    d_out = np.concatenate([d_mu.reshape(n_comp * b, d), d_lv], axis=1)
    enc_grads = backward_from_output(model.encoder, enc_cache, d_out)
    return per_example, log_q, mix, enc_grads, dec_grads


def sivae_objective(model: SivaeModel, x, n_aux: int, rng, *, masks=None, aux_masks=None, eps=None, grads=True):
    """Batch-mean SIVAE loss with pathwise encoder/decoder gradients.

    Draw order from ``rng`` is: own masks, then ``eta`` noise, then auxiliary
    masks, so reseeding reproduces the same noise regardless of parameters.
    Explicit ``masks``/``aux_masks``/``eps`` override the draws.
    """
    if n_aux < 0:
        raise ConfigError("the number of auxiliary masks V must be nonnegative")
    gen, _ = as_generator(rng)
    x = np.asarray(x, dtype=np.float64)
    b, k, d = len(x), model.n_gate_logits, model.latent_dim
    p = sigmoid(model.encoder.gate_logits())
    draw_own = gen.random((b, k)) < p
    draw_eps = gen.standard_normal((b, d))
    draw_aux = gen.random((n_aux, b, k)) < p
    own = (draw_own if masks is None else np.asarray(masks)).astype(np.float64)
    noise = draw_eps if eps is None else np.asarray(eps, dtype=np.float64)
    aux = (draw_aux if aux_masks is None else np.asarray(aux_masks)).astype(np.float64).reshape(n_aux, b, k)

    per_example, log_q, mix, enc_g, dec_g = _evaluate(model, x, own, aux, noise, grads)

    def mask_objective(z: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Per-example loss as a function of the flattened (own, aux...) masks."""
        if rows.size == 0:
            return np.zeros(0)
        z = np.asarray(z, dtype=np.float64).reshape(len(rows), n_aux + 1, k)
        own_r = z[:, 0]
        aux_r = np.moveaxis(z[:, 1:], 1, 0)
        return _evaluate(model, x[rows], own_r, aux_r, noise[rows], False)[0]

    return SivaeResult(
        loss=float(per_example.mean()),
        per_example=per_example,
        encoder_grads=enc_g,
        decoder_grads=dec_g,
        masks=own,
        aux_masks=aux,
        eps=noise,
        log_q=log_q,
        mixture_log_q=mix,
        mask_objective=mask_objective,
    )


def sivae_alpha_gradient(model: SivaeModel, result: SivaeResult, rng, n_samples: int = 1) -> GradEstimate:
    """ARM gradient of the batch-mean loss for the encoder gate logits.

    All ``V + 1`` masks of an example are Bernoulli draws with the same
    logits, so ARM runs on the concatenated bits and the per-copy gradients
    are summed.
    """
    gen, seed = as_generator(rng)
    logits = model.encoder.gate_logits()
    n_comp = result.aux_masks.shape[0] + 1
    b = len(result.eps)
    samples = arm_from_rows(result.mask_objective, np.tile(logits, n_comp), b, gen, n_samples, 1.0 / b)
    samples = samples.reshape(n_samples, n_comp, logits.size).sum(axis=1)
    return GradEstimate(samples.mean(axis=0), "arm", n_samples, seed, samples)
