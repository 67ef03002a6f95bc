"""Dense feed-forward network with explicit forward and backward passes.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``h`` of
shape ``(batch, fan_in)`` maps to ``h @ W + b``.  A gate attached to layer
``j`` multiplies that layer's input element-wise; zeroing coordinate ``k``
is the same as zeroing row ``k`` of ``W_j``.  Biases are never masked.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import ConfigError, ConsistencyError, DimensionError, NumericError
from .gates import GateSpec

ACTIVATIONS = ("relu", "identity", "sigmoid", "softmax", "tanh")
LOSS_KINDS = ("squared-error", "softmax-cross-entropy", "multinomial-log-lik")

_model_ids = itertools.count()


@dataclass
class MlpModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    gates: list[GateSpec | None] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.layer_sizes) - 1
        if n < 1:
            raise DimensionError("a network needs at least one layer")
        if not self.gates:
            self.gates = [None] * n
        if not (len(self.weights) == len(self.biases) == len(self.activations) == len(self.gates) == n):
            raise DimensionError("weights, biases, activations and gates need one entry per layer")
        for j in range(n):
            self.weights[j] = np.asarray(self.weights[j], dtype=np.float64)
            self.biases[j] = np.asarray(self.biases[j], dtype=np.float64).reshape(-1)
            shape = (self.layer_sizes[j], self.layer_sizes[j + 1])
            if self.weights[j].shape != shape:
                raise DimensionError(f"layer {j}: weight shape {self.weights[j].shape}, expected {shape}")
            if self.biases[j].shape != (shape[1],):
                raise DimensionError(f"layer {j}: bias length {self.biases[j].size}, expected {shape[1]}")
            if self.activations[j] not in ACTIVATIONS:
                raise ConfigError(f"layer {j}: unknown activation {self.activations[j]!r}")
            gate = self.gates[j]
            if gate is not None and gate.kind == "none":
                self.gates[j] = None
            elif gate is not None and gate.size not in (1, shape[0]):
                raise DimensionError(f"layer {j}: gate has {gate.size} logits for {shape[0]} inputs")
            elif gate is not None and gate.granularity == "per-neuron" and gate.size != shape[0]:
                raise DimensionError(f"layer {j}: per-neuron gate needs {shape[0]} logits")
        self.uid = next(_model_ids)
        self.version = 0

    @classmethod
    def init(cls, layer_sizes, activations, rng: np.random.Generator, gates=None, bias: float = 0.0):
        """Standard-normal weights scaled by 1/sqrt(fan_in)."""
        weights = [rng.standard_normal((a, b)) / np.sqrt(a) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.full(b, bias) for b in layer_sizes[1:]]
        return cls(list(layer_sizes), weights, biases, list(activations), list(gates or []))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def gated_layers(self) -> list[int]:
        return [j for j, g in enumerate(self.gates) if g is not None]

    def gate_width(self, j: int) -> int:
        return self.layer_sizes[j]

    @property
    def n_gate_logits(self) -> int:
        return sum(self.gates[j].size for j in self.gated_layers)

    def gate_logits(self) -> np.ndarray:
        if not self.gated_layers:
            return np.zeros(0)
        return np.concatenate([self.gates[j].logits for j in self.gated_layers])

    def set_gate_logits(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_gate_logits:
            raise DimensionError(f"{flat.size} logits given, model has {self.n_gate_logits}")
        start = 0
        for j in self.gated_layers:
            g = self.gates[j]
            g.logits[:] = flat[start : start + g.size]
            g.clamp()
            start += g.size
        self.touch()

    def split_gate_vector(self, flat) -> dict[int, np.ndarray]:
        """Cut a vector over all gate logits into per-layer pieces (last axis)."""
        out, start = {}, 0
        for j in self.gated_layers:
            n = self.gates[j].size
            out[j] = flat[..., start : start + n]
            start += n
        return out

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for j in range(self.n_layers):
            p[f"W{j}"] = self.weights[j]
            p[f"b{j}"] = self.biases[j]
        return p

    def touch(self) -> None:
        """Mark the parameters as changed; outstanding caches become stale."""
        self.version += 1

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            [None if g is None else g.copy() for g in self.gates],
        )

    def with_gates(self, **changes) -> "MlpModel":
        """Copy with every gate rebuilt via ``GateSpec.copy(**changes)``."""
        m = self.copy()
        m.gates = [None if g is None else g.copy(**changes) for g in m.gates]
        return m


@dataclass
class ActivationCache:
    inputs: list[np.ndarray]
    masked_inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    outputs: list[np.ndarray]
    masks: dict[int, np.ndarray]
    model_uid: int
    model_version: int


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    masks: dict[int, np.ndarray]
    inputs: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        d = {}
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            d[f"W{j}"] = w
            d[f"b{j}"] = b
        return d

    def __iadd__(self, other: "Gradients"):
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "tanh":
        return np.tanh(z)
    return softmax(z, axis=1)


def _activate_backward(kind: str, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return da * (z > 0)
    if kind == "identity":
        return da
    if kind == "sigmoid":
        return da * a * (1.0 - a)
    if kind == "tanh":
        return da * (1.0 - a * a)
    return a * (da - np.sum(da * a, axis=1, keepdims=True))


def _check_mask(model: MlpModel, j: int, mask, batch: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 1:
        mask = mask[None, :]
    width = model.layer_sizes[j]
    if mask.ndim != 2 or mask.shape[0] not in (1, batch) or mask.shape[1] not in (1, width):
        raise DimensionError(f"layer {j}: mask shape {mask.shape} does not fit batch {batch} x width {width}")
    return mask


def forward_pass(model: MlpModel, inputs, masks: dict[int, np.ndarray] | None = None):
    """Run the network on a batch.

    ``masks`` maps each gated layer index to a mask of shape ``(batch, width)``;
    rows of length 1 or a single shared row broadcast.  ``None`` means every
    gate is the identity (deterministic evaluation).
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise DimensionError(f"layer 0: input shape {x.shape}, expected (batch, {model.layer_sizes[0]})")
    batch = x.shape[0]
    if masks is None:
        masks = {}
    else:
        extra = set(masks) - set(model.gated_layers)
        missing = set(model.gated_layers) - set(masks)
        if extra or missing:
            raise DimensionError(f"masks given for layers {sorted(masks)}, gated layers are {model.gated_layers}")
    masks = {j: _check_mask(model, j, m, batch) for j, m in masks.items()}

    cache = ActivationCache([], [], [], [], masks, model.uid, model.version)
    h = x
    for j in range(model.n_layers):
        hm = h * masks[j] if j in masks else h
        z = hm @ model.weights[j] + model.biases[j]
        a = _activate(model.activations[j], z)
        cache.inputs.append(h)
        cache.masked_inputs.append(hm)
        cache.pre_activations.append(z)
        cache.outputs.append(a)
        h = a
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite network output")
    return h, cache


def backward_from_output(model: MlpModel, cache: ActivationCache, d_out) -> Gradients:
    """Backpropagate an upstream gradient with respect to the network outputs."""
    if cache.model_uid != model.uid or cache.model_version != model.version:
        raise ConsistencyError("activation cache was produced by a different model state")
    d = np.asarray(d_out, dtype=np.float64)
    n = model.n_layers
    gw, gb, gm = [None] * n, [None] * n, {}
    for j in range(n - 1, -1, -1):
        dz = _activate_backward(model.activations[j], cache.pre_activations[j], cache.outputs[j], d)
        gw[j] = cache.masked_inputs[j].T @ dz
        gb[j] = dz.sum(axis=0)
        dhm = dz @ model.weights[j].T
        if j in cache.masks:
            mask = cache.masks[j]
            dmask = dhm * cache.inputs[j]
            if mask.shape[1] == 1:
                dmask = dmask.sum(axis=1, keepdims=True)
            if mask.shape[0] == 1:
                dmask = dmask.sum(axis=0, keepdims=True)
            gm[j] = dmask
            d = dhm * mask
        else:
            d = dhm
    return Gradients(gw, gb, gm, d)


def _targets_like(outputs: np.ndarray, targets, kind: str) -> np.ndarray:
    t = np.asarray(targets)
    if kind == "softmax-cross-entropy" and t.ndim == 1 and outputs.shape[1] > 1 and np.issubdtype(t.dtype, np.integer):
        onehot = np.zeros_like(outputs)
        onehot[np.arange(t.size), t] = 1.0
        return onehot
    t = t.astype(np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != outputs.shape:
        raise DimensionError(f"targets shape {t.shape} does not match outputs {outputs.shape}")
    return t


def per_example_loss(outputs, targets, kind: str) -> np.ndarray:
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}")
    f = np.asarray(outputs, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite network output")
    t = _targets_like(f, targets, kind)
    if kind == "squared-error":
        return np.sum((t - f) ** 2, axis=1)
    if kind == "multinomial-log-lik" and np.any(t < 0):
        raise ConfigError("multinomial targets must be nonnegative")
    return -np.sum(t * log_softmax(f, axis=1), axis=1)


def empirical_loss(outputs, targets, kind: str) -> float:
    """Batch mean of the per-example loss."""
    return float(np.mean(per_example_loss(outputs, targets, kind)))


def loss_output_grad(outputs, targets, kind: str) -> np.ndarray:
    """Gradient of ``empirical_loss`` with respect to the outputs."""
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}")
    f = np.asarray(outputs, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    t = _targets_like(f, targets, kind)
    batch = f.shape[0]
    if kind == "squared-error":
        return 2.0 * (f - t) / batch
    return (softmax(f, axis=1) * t.sum(axis=1, keepdims=True) - t) / batch


def backward_pass(model: MlpModel, cache: ActivationCache, targets, kind: str) -> Gradients:
    """Exact gradients of ``empirical_loss`` for weights and biases, masks held fixed."""
    return backward_from_output(model, cache, loss_output_grad(cache.outputs[-1], targets, kind))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if m.shape != p.shape:
            raise DimensionError(f"optimizer state for {name} has shape {m.shape}, parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state
