"""Toy regression study: 1 input, 2 gated ReLU hidden units, 1 output.

The network weights are drawn once (standard normal / sqrt(fan_in)) and held
fixed; only the two gate logits vary.  The exact gradient comes from
enumerating the four hidden masks.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..estimators import (
    arm_gradient,
    concrete_gradient,
    estimator_diagnostics,
    exact_gate_gradient,
    reinforce_gradient,
)
from ..gates import GateSpec
from ..net import MlpModel
from ..rng import substream
from .config import RunConfig
from .data import generate_toy_dataset

log = logging.getLogger(__name__)

GRID_HEADER = ["keep1", "keep2", "estimator", "coordinate", "bias", "std", "mse", "exact", "n_samples"]
TRACE_HEADER = ["step", "coordinate", "true_grad", "arm_estimate", "concrete_estimate"]
LOSS = "squared-error"


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def toy_model(rng: np.random.Generator) -> MlpModel:
    return MlpModel.init([1, 2, 1], ["relu", "identity"], rng, [None, GateSpec.uniform(2)])


def toy_setup(cfg: RunConfig):
    """Fixed network and dataset for a seed (both from their own substreams)."""
    x, y = generate_toy_dataset(cfg.toy_n, substream(cfg.seed, 0), cfg.toy_slope, cfg.toy_noise_sd)
    return toy_model(substream(cfg.seed, 1)), x, y


def grid_values(cfg: RunConfig) -> np.ndarray:
    n = int(round((cfg.toy_grid_hi - cfg.toy_grid_lo) / cfg.toy_grid_step)) + 1
    return np.round(cfg.toy_grid_lo + cfg.toy_grid_step * np.arange(n), 10)


def _estimate(name, model, batch, rng, n, cfg):
    shared = cfg.toy_mask_sharing == "shared"
    if name == "arm":
        return arm_gradient(model, batch, rng, n, LOSS, shared_masks=shared)
    if name == "reinforce":
        return reinforce_gradient(model, batch, rng, n, LOSS, shared_masks=shared)
    relaxed = model.with_gates(kind="concrete", concrete_temperature=cfg.concrete_temperature)
    return concrete_gradient(relaxed, batch, rng, n, LOSS, shared_masks=shared)


def grid_point_rows(cfg: RunConfig, base: MlpModel, x, y, index: int, keep) -> list[list]:
    model = base.copy()
    model.set_gate_logits(logit(keep))
    exact = exact_gate_gradient(model, (x, y), LOSS)
    rows = []
    for e_idx, name in enumerate(cfg.toy_estimator_list()):
        est = _estimate(name, model, (x, y), substream(cfg.seed, 2, index, e_idx), cfg.toy_samples, cfg)
        diag = estimator_diagnostics(est, exact)
        for k in range(2):
            rows.append([keep[0], keep[1], name, k + 1, diag.bias[k], diag.std[k], diag.mse[k], exact.grads[k], diag.n])
    return rows


def run_toy_grid(cfg: RunConfig) -> list[list]:
    """Bias / STD / MSE of each estimator at every point of the keep-rate grid."""
    base, x, y = toy_setup(cfg)
    vals = grid_values(cfg)
    points = [(float(a), float(b)) for a in vals for b in vals]

    def task(i):
        return grid_point_rows(cfg, base, x, y, i, points[i])

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(task, range(len(points))))
    else:
        chunks = [task(i) for i in range(len(points))]
    rows = [r for chunk in chunks for r in chunk]
    order = {name: i for i, name in enumerate(cfg.toy_estimator_list())}
    rows.sort(key=lambda r: (r[0], r[1], order[r[2]], r[3]))
    return rows


def run_toy_trace(cfg: RunConfig) -> list[list]:
    """Gradient descent on the exact gradient, logging both estimators at every step."""
    model, x, y = toy_setup(cfg)
    model.set_gate_logits(logit(cfg.trace_keep()))
    relaxed_kw = dict(kind="concrete", concrete_temperature=cfg.concrete_temperature)
    shared = cfg.toy_mask_sharing == "shared"
    rows = []
    for step in range(cfg.trace_steps):
        exact = exact_gate_gradient(model, (x, y), LOSS)
        arm = arm_gradient(model, (x, y), substream(cfg.seed, 3, step, 0), cfg.trace_samples, LOSS, shared_masks=shared)
        con = concrete_gradient(
            model.with_gates(**relaxed_kw), (x, y), substream(cfg.seed, 3, step, 1), cfg.trace_samples, LOSS,
            shared_masks=shared,
        )
        for k in range(2):
            rows.append([step, k + 1, exact.grads[k], arm.grads[k], con.grads[k]])
        model.set_gate_logits(model.gate_logits() - cfg.trace_lr * exact.grads)
    return rows
