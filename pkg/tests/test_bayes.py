import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import assert_rel_close, central_differences
from lbdrop.bayes import (
    PredictiveSummary,
    kl_regularizer,
    pavpu,
    pavpu_sweep,
    predictive_entropy,
    predictive_posterior,
)
from lbdrop.errors import ConfigError, UnsupportedEstimatorError
from lbdrop.gates import GateSpec
from lbdrop.net import MlpModel, forward_pass


def one_unit_model(weights_row, alpha=0.0):
    w = np.asarray([weights_row], dtype=float)
    return MlpModel([1, w.shape[1]], [w], [np.zeros(w.shape[1])], ["identity"], [GateSpec(logits=[alpha])])


def test_kl_hand_values():
    kl = kl_regularizer(one_unit_model([1.0, 1.0]), 1.0)
    assert kl.value == pytest.approx(0.5 * 2 / 2 - np.log(2), abs=1e-15)
    assert kl.value == pytest.approx(-0.1931, abs=1e-4)
    assert kl_regularizer(one_unit_model([0.0, 0.0]), 1.0).value == pytest.approx(-np.log(2), abs=1e-15)


def bayes_model(seed):
    r = np.random.default_rng(seed)
    gates = [GateSpec(logits=r.uniform(-3, 3, 3)), GateSpec(logits=r.uniform(-3, 3, 4))]
    return MlpModel.init([3, 4, 2], ["relu", "identity"], r, gates)


@pytest.mark.parametrize("seed", range(5))
def test_kl_gradients_match_finite_differences(seed):
    m = bayes_model(seed)
    s2 = 0.7
    kl = kl_regularizer(m, s2)
    logits = [m.gates[j].logits for j in m.gated_layers]
    num_alpha = central_differences(lambda: kl_regularizer(m, s2).value, logits)
    assert_rel_close(kl.grad_alpha, np.concatenate(num_alpha), rtol=1e-6, scale=1 + abs(kl.value))
    num_w = central_differences(lambda: kl_regularizer(m, s2).value, m.weights)
    for j in m.gated_layers:
        assert_rel_close(kl.grad_weights[j], num_w[j], rtol=1e-6, scale=1 + abs(kl.value))


def test_kl_decomposition_and_prior_scaling():
    m = bayes_model(3)
    a, b = kl_regularizer(m, 1.3), kl_regularizer(m, 2.6)
    assert b.weight_part == pytest.approx(a.weight_part / 2, rel=1e-15)
    assert b.entropy_part == a.entropy_part
    per_column = 0.0
    for j in m.gated_layers:
        for k in range(m.layer_sizes[j]):
            p = 1 / (1 + np.exp(-m.gates[j].logits[k]))
            h = -(p * np.log(p) + (1 - p) * np.log(1 - p))
            per_column += p / (2 * 1.3) * np.sum(m.weights[j][k] ** 2) - h
    assert a.value == pytest.approx(per_column, rel=1e-12)


def test_kl_rejects_per_layer_and_non_bernoulli(rng):
    m = MlpModel.init([3, 1], ["identity"], rng, [GateSpec(granularity="per-layer", logits=[0.0])])
    with pytest.raises(UnsupportedEstimatorError):
        kl_regularizer(m, 1.0)
    with pytest.raises(UnsupportedEstimatorError):
        kl_regularizer(bayes_model(0).with_gates(kind="concrete"), 1.0)


def test_entropy_boundaries():
    assert predictive_entropy(np.full((1, 5), 0.2))[0] == pytest.approx(np.log(5), abs=1e-14)
    assert predictive_entropy(np.eye(4)[[2]])[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_entropy_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    p = r.dirichlet(np.ones(6), size=4)
    perm = r.permutation(6)
    np.testing.assert_allclose(predictive_entropy(p), predictive_entropy(p[:, perm]), rtol=1e-13, atol=1e-15)


def test_saturated_gates_match_single_pass(rng):
    m = MlpModel.init([2, 4, 3], ["relu", "identity"], rng, [GateSpec.uniform(2, keep=0.99999), GateSpec.uniform(4, keep=0.99999)])
    m.set_gate_logits(np.full(6, 8.0))
    x = rng.standard_normal((40, 2))
    s = predictive_posterior(m, x, 10, np.random.default_rng(1))
    out, _ = forward_pass(m, x)
    p = np.exp(out - out.max(axis=1, keepdims=True))
    single = predictive_entropy(p / p.sum(axis=1, keepdims=True))
    assert np.mean(np.abs(s.predictive_entropy - single)) <= 1e-3
    np.testing.assert_allclose(s.mean_probs.sum(axis=1), 1.0, atol=1e-9)


def summary_from(accurate, entropy, n_classes=3):
    """Predictions are class 0; label 0 when accurate, 1 otherwise."""
    n = len(accurate)
    probs = np.full((n, n_classes), 0.1)
    probs[:, 0] = 0.8
    return PredictiveSummary(probs, np.asarray(entropy, float)), np.where(accurate, 0, 1)


def test_pavpu_hand_case():
    accurate = [True] * 8 + [False, False]
    entropy = [0.1] * 8 + [0.1, 0.9]  # 8 ac, 1 ic, 1 iu
    s, labels = summary_from(accurate, entropy)
    r = pavpu(s, labels, 0.5)
    assert (r.n_ac, r.n_ic, r.n_au, r.n_iu) == (8, 1, 0, 1)
    assert r.pavpu == pytest.approx(0.9, abs=1e-15)
    assert r.n_ac + r.n_ic + r.n_au + r.n_iu == 10


def test_pavpu_t1_is_accuracy(rng):
    accurate = rng.random(50) < 0.7
    s, labels = summary_from(accurate, rng.random(50))
    assert pavpu(s, labels, 1.0).pavpu == np.mean(accurate)


def test_pavpu_all_accurate_certain():
    s, labels = summary_from([True] * 5, [0.3] * 5)
    assert pavpu(s, labels, 0.0).pavpu == 1.0


def test_pavpu_errors():
    s, labels = summary_from([True], [0.1])
    with pytest.raises(ConfigError):
        pavpu(s, labels, 1.5)
    with pytest.raises(ConfigError):
        pavpu(PredictiveSummary(np.zeros((0, 2)), np.zeros(0)), np.zeros(0), 0.5)


def test_sweep_ordering_and_mean(rng):
    accurate = rng.random(30) < 0.6
    s, labels = summary_from(accurate, rng.random(30))
    ts = [1.0, 0.0, 0.5, 0.25, 0.75]
    sweep = pavpu_sweep(s, labels, ts)
    assert [r.threshold_t for r in sweep.reports] == sorted(ts)
    assert sweep.mean_pavpu == pytest.approx(np.mean([r.pavpu for r in sweep.reports]), abs=1e-12)
    for r in sweep.reports:
        assert 0.0 <= r.pavpu <= 1.0


def test_sweep_constant_entropy():
    s, labels = summary_from([True, False, True], [0.4, 0.4, 0.4])
    reports = pavpu_sweep(s, labels, [0.25, 0.5, 1.0]).reports
    key = {(r.n_ac, r.n_ic, r.n_au, r.n_iu, r.pavpu) for r in reports}
    assert len(key) == 1
