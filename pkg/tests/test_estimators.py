import numpy as np
import pytest
from scipy import stats

from conftest import central_differences
from lbdrop.errors import ConfigError, DimensionError, UnsupportedEstimatorError
from lbdrop.estimators import (
    arm_from_configs,
    arm_from_rows,
    arm_gradient,
    concrete_gradient,
    config_objective,
    enumerate_configs,
    config_probabilities,
    estimator_diagnostics,
    exact_from_configs,
    exact_gate_gradient,
    reinforce_gradient,
    row_objective,
)
from lbdrop.gates import GateSpec
from lbdrop.net import MlpModel, empirical_loss, forward_pass


class FixedUniform:
    """Stand-in generator whose uniforms are a fixed value."""

    def __init__(self, value):
        self.value = value

    def random(self, shape):
        return np.broadcast_to(np.asarray(self.value, dtype=float), shape).copy()


def small_model(seed=0, alphas=(0.3, -0.4, 1.0), hidden=3):
    r = np.random.default_rng(seed)
    gates = [None, GateSpec(logits=np.array(alphas[:hidden]))]
    m = MlpModel.init([2, hidden, 1], ["relu", "identity"], r, gates)
    m.biases[0][:] = 0.3
    x = r.uniform(-1, 1, (12, 2))
    y = r.standard_normal((12, 1))
    return m, x, y


def score_enumeration(model, x, y):
    """Independent oracle: sum_z p(z) L(z) (z - sigmoid(a))."""
    a = model.gate_logits()
    configs = enumerate_configs(a.size)
    prob = config_probabilities(configs, a)
    vals = np.array(
        [empirical_loss(forward_pass(model, x, model.split_gate_vector(z[None]))[0], y, "squared-error") for z in configs]
    )
    return (prob * vals) @ (configs - 1 / (1 + np.exp(-a)))


def test_exact_linear_loss_closed_form():
    grad = exact_from_configs(lambda z: z @ np.array([1.0, 2.0]), np.zeros(2))
    np.testing.assert_allclose(grad, [0.25, 0.5], rtol=1e-15)


def test_exact_constant_loss_zero():
    np.testing.assert_array_equal(exact_from_configs(lambda z: np.full(len(z), 3.0), np.array([0.1, -2, 5])), 0.0)


def test_exact_matches_score_enumeration_and_fd():
    m, x, y = small_model()
    exact = exact_gate_gradient(m, (x, y)).grads
    np.testing.assert_allclose(exact, score_enumeration(m, x, y), rtol=1e-12, atol=1e-15)
    a = m.gates[1].logits

    def expected():
        objective = config_objective(m, x, y, "squared-error", 1 / len(x))
        configs = enumerate_configs(a.size)
        return float(config_probabilities(configs, a) @ objective(configs))

    (fd,) = central_differences(expected, [a], h=1e-6)
    np.testing.assert_allclose(exact, fd, rtol=1e-6)


def test_exact_refuses_large_enumeration(rng):
    m = MlpModel.init([21, 1], ["identity"], rng, [GateSpec.uniform(21)])
    with pytest.raises(ConfigError):
        exact_gate_gradient(m, (np.ones((1, 21)), np.ones((1, 1))))


def test_arm_zero_when_loss_ignores_masks():
    m, x, y = small_model()
    x0 = np.zeros_like(x)
    m.weights[0][:] = 0.0
    m.biases[0][:] = 0.0  # gated layer inputs are identically zero
    est = arm_gradient(m, (x0, y), 5, n_samples=20)
    assert np.all(est.samples == 0.0)


def test_arm_agreeing_masks_contribute_nothing():
    m, x, y = small_model(alphas=(4.0, 4.0, 4.0))
    obj = row_objective(m, x, y, "squared-error")
    out = arm_from_rows(obj, m.gate_logits(), len(x), FixedUniform(0.5), 3, 1.0)
    assert np.all(out == 0.0)


def test_arm_swapping_u_leaves_contribution_invariant(rng):
    m, x, y = small_model(alphas=(0.0, 0.0, 0.0))
    obj = config_objective(m, x, y, "squared-error", 1.0)
    for _ in range(50):
        u = rng.random(3)
        a = arm_from_configs(obj, np.zeros(3), FixedUniform(u), 1)
        b = arm_from_configs(obj, np.zeros(3), FixedUniform(1 - u), 1)
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("shared", [False, True])
def test_arm_unbiased(shared):
    m, x, y = small_model(seed=4)
    exact = exact_gate_gradient(m, (x, y)).grads
    est = arm_gradient(m, (x, y), 123, n_samples=10_000, shared_masks=shared)
    se = est.samples.std(axis=0, ddof=1) / np.sqrt(est.n_samples)
    assert np.all(np.abs(est.grads - exact) <= 4 * se)


def test_reinforce_unbiased():
    m, x, y = small_model(seed=5)
    exact = exact_gate_gradient(m, (x, y)).grads
    est = reinforce_gradient(m, (x, y), 9, n_samples=10_000)
    se = est.samples.std(axis=0, ddof=1) / np.sqrt(est.n_samples)
    assert np.all(np.abs(est.grads - exact) <= 4 * se)


def test_reinforce_constant_loss_mean_zero():
    m, x, y = small_model()
    m.weights[1][:] = 0.0  # output no longer depends on the gated layer
    est = reinforce_gradient(m, (x, y), 11, n_samples=100_000)
    se = est.samples.std(axis=0, ddof=1) / np.sqrt(est.n_samples)
    assert np.all(np.abs(est.grads) <= 4 * se)


def test_reinforce_single_sample_formula():
    # one example, loss (0 - 1.414..)^2 = 2, sigmoid(a) = 0.5: contribution 2 * (z - 0.5) = +-1
    m = MlpModel([1, 1], [np.zeros((1, 1))], [np.array([np.sqrt(2.0)])], ["identity"], [GateSpec(logits=[0.0])])
    est = reinforce_gradient(m, (np.ones((1, 1)), np.zeros((1, 1))), 2, n_samples=50)
    np.testing.assert_allclose(np.abs(est.samples), 1.0, rtol=1e-14)


def test_single_sample_expectation_matches_many_sample():
    m, x, y = small_model(seed=6)
    one = arm_gradient(m, (x, y), 1, n_samples=4000).samples
    many = np.stack([arm_gradient(m, (x, y), 1000 + i, n_samples=100).grads for i in range(200)])
    for k in range(one.shape[1]):
        assert stats.ttest_ind(one[:, k], many[:, k], equal_var=False).pvalue > 1e-3


def test_fixed_seed_bitwise_deterministic():
    m, x, y = small_model()
    a = arm_gradient(m, (x, y), 77, n_samples=30)
    b = arm_gradient(m, (x, y), 77, n_samples=30)
    assert a.grads.tobytes() == b.grads.tobytes()
    assert a.seed == 77


def test_wrong_gate_kind_rejected():
    m, x, y = small_model()
    mc = m.with_gates(kind="concrete")
    with pytest.raises(UnsupportedEstimatorError):
        arm_gradient(mc, (x, y), 0)
    with pytest.raises(UnsupportedEstimatorError):
        concrete_gradient(m, (x, y), 0)


def test_regularizer_gradient_added():
    m, x, y = small_model()
    reg = np.array([1.0, 2.0, 3.0])
    a = arm_gradient(m, (x, y), 3, n_samples=5)
    b = arm_gradient(m, (x, y), 3, n_samples=5, regularizer_grad=reg)
    np.testing.assert_allclose(b.grads - a.grads, reg, rtol=1e-12)


def test_concrete_zero_when_loss_ignores_masks():
    m, x, y = small_model()
    m.weights[0][:] = 0.0
    m.biases[0][:] = 0.0
    est = concrete_gradient(m.with_gates(kind="concrete"), (x, y), 0, n_samples=10)
    assert np.all(est.samples == 0.0)


def test_concrete_high_temperature_limit():
    # At large tau the relaxed mask concentrates at sigmoid(a / tau) (logit(u) has mean 0),
    # so the estimator approaches the gradient of the network with that deterministic scaling.
    m, x, y = small_model(seed=8)
    tau = 100.0
    mc = m.with_gates(kind="concrete", concrete_temperature=tau)
    est = concrete_gradient(mc, (x, y), 21, n_samples=20_000)
    a = mc.gates[1].logits.copy()

    def det_loss():
        out, _ = forward_pass(m, x, {1: 1 / (1 + np.exp(-a / tau))})
        return empirical_loss(out, y, "squared-error")

    (fd,) = central_differences(det_loss, [a], h=1e-4)
    np.testing.assert_allclose(est.grads, fd, rtol=1e-3)


def test_diagnostics_examples():
    exact = np.array([0.5, -1.0])
    d = estimator_diagnostics(np.tile(exact, (4, 1)), exact)
    assert np.all(d.bias == 0) and np.all(d.std == 0) and np.all(d.mse == 0)
    d = estimator_diagnostics(np.stack([exact + 1, exact - 1]), exact)
    np.testing.assert_allclose(d.bias, 0, atol=1e-15)
    np.testing.assert_allclose(d.std, np.sqrt(2), rtol=1e-15)
    np.testing.assert_allclose(d.mse, 1, rtol=1e-15)
    with pytest.raises(DimensionError):
        estimator_diagnostics(np.zeros((3, 3)), exact)
    with pytest.raises(ConfigError):
        estimator_diagnostics(np.zeros((1, 2)), exact)


def test_diagnostics_mse_decomposition(rng):
    for _ in range(50):
        n = int(rng.integers(2, 40))
        s = rng.standard_normal((n, 4)) * rng.uniform(0.1, 10)
        exact = rng.standard_normal(4)
        d = estimator_diagnostics(s, exact)
        np.testing.assert_allclose(d.mse, d.bias**2 + (1 - 1 / n) * d.std**2, rtol=1e-9)
