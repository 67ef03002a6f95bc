import numpy as np
import pytest
from scipy import stats

from lbdrop.errors import ConfigError, DimensionError
from lbdrop.gates import (
    GateSpec,
    arm_mask_pair,
    concrete_from_uniform,
    keep_probability,
    sample_bernoulli_masks,
    sample_concrete_mask,
    sample_gaussian_mask,
)


def gate(alpha, kind="bernoulli", **kw):
    return GateSpec(kind=kind, logits=np.atleast_1d(alpha), **kw)


def test_keep_probability_values():
    assert keep_probability(gate(0.0))[0] == 0.5
    assert keep_probability(gate(8.0))[0] == pytest.approx(1 / (1 + np.exp(-8)), rel=1e-15)
    assert keep_probability(gate(8.0))[0] == pytest.approx(0.99966465, abs=1e-8)
    assert keep_probability(gate(-8.0))[0] == pytest.approx(0.00033535, abs=1e-8)


def test_logits_clamped():
    g = gate([-30.0, 3.0, 12.0])
    np.testing.assert_array_equal(g.logits, [-8.0, 3.0, 8.0])
    p = keep_probability(g)
    assert np.all((p > 0) & (p < 1))


def test_spec_validation():
    with pytest.raises(ConfigError):
        GateSpec(kind="laplace")
    with pytest.raises(DimensionError):
        GateSpec(granularity="per-layer", logits=np.zeros(3))
    with pytest.raises(ConfigError):
        GateSpec(kind="concrete", concrete_temperature=0.0)


def test_bernoulli_saturated_fraction(rng):
    m = sample_bernoulli_masks(gate(8.0), 100_000, rng)
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert 0.998 <= m.mean() <= 1.0


def test_bernoulli_half(rng):
    m = sample_bernoulli_masks(gate(0.0), 100_000, rng)
    assert abs(m.mean() - 0.5) <= 0.006


def test_per_layer_broadcast(rng):
    g = GateSpec(granularity="per-layer", logits=[0.0])
    m = sample_bernoulli_masks(g, 50, rng, width=5)
    assert m.shape == (50, 5)
    assert np.all(m == m[:, :1])


def test_arm_pair_examples():
    assert arm_mask_pair(gate(0.0), [0.3]) == (np.array([0.0]), np.array([1.0]))
    assert arm_mask_pair(gate(0.0), [0.7]) == (np.array([1.0]), np.array([0.0]))
    p, t = arm_mask_pair(gate(4.0), [0.5])
    assert p[0] == t[0] == 1.0
    with pytest.raises(DimensionError):
        arm_mask_pair(gate([0.0, 1.0]), [0.5])


def test_arm_true_mask_marginal_chi_square(rng):
    alpha = np.array([-1.5, 0.0, 0.7, 3.0])
    u = rng.random((100_000, 4))
    _, t = arm_mask_pair(alpha, u)
    p = 1 / (1 + np.exp(-alpha))
    for k in range(4):
        ones = t[:, k].sum()
        obs = [len(t) - ones, ones]
        exp = [len(t) * (1 - p[k]), len(t) * p[k]]
        assert stats.chisquare(obs, exp).pvalue > 0.001


def test_arm_antithetic_symmetry(rng):
    u = rng.random(10_000)
    u = u[u != 0.5][:, None]
    pseudo, _ = arm_mask_pair(np.zeros(1), u)
    _, true_flipped = arm_mask_pair(np.zeros(1), 1 - u)
    np.testing.assert_array_equal(pseudo, true_flipped)


@pytest.mark.parametrize("alpha", [-2.0, -0.3, 0.0, 1.1, 4.0])
def test_arm_agreement_zone(rng, alpha):
    # pseudo = 1[u > 1 - s], true = 1[u < s]: they agree strictly between
    # min(s, 1 - s) and max(s, 1 - s) and disagree outside that interval
    a = np.array([alpha])
    u = rng.random((100_000, 1))
    p, t = arm_mask_pair(a, u)
    s = 1 / (1 + np.exp(-alpha))
    lo, hi = min(s, 1 - s), max(s, 1 - s)
    inside = (u > lo) & (u < hi)
    assert np.all(p[inside] == t[inside])
    assert np.all(p[~inside] != t[~inside])
    frac = np.mean(p != t)
    target = 1 - abs(2 * s - 1)
    se = np.sqrt(target * (1 - target) / len(u))
    assert abs(frac - target) <= 4 * se + 1e-12


def test_concrete_examples(rng):
    m, dm = concrete_from_uniform(np.zeros(1), np.array([0.5]), 3.7)
    assert m[0] == 0.5
    _, dm = concrete_from_uniform(np.zeros(1), np.array([0.5]), 0.1)
    assert dm[0] == pytest.approx(2.5)


def test_concrete_low_temperature_matches_bernoulli(rng):
    g = gate(2.0, "concrete", concrete_temperature=0.01)
    m, _ = sample_concrete_mask(g, 100_000, rng)
    p = 1 / (1 + np.exp(-2.0))
    se = np.sqrt(p * (1 - p) / 100_000)
    assert abs(np.mean(m > 0.5) - p) <= 4 * se
    assert abs(m.mean() - p) <= 0.01


def test_concrete_derivative_matches_fd(rng):
    u = rng.random(20)
    a = rng.standard_normal(20)
    h = 1e-6
    _, dm = concrete_from_uniform(a, u, 0.3)
    fd = (concrete_from_uniform(a + h, u, 0.3)[0] - concrete_from_uniform(a - h, u, 0.3)[0]) / (2 * h)
    np.testing.assert_allclose(dm, fd, rtol=1e-6, atol=1e-9)


def test_gaussian_small_variance_tail(rng):
    g = gate(-8.0, "gaussian")
    m, _ = sample_gaussian_mask(g, 100_000, rng)
    sd = np.sqrt(1 / (1 + np.exp(8.0)))
    expected = 100_000 * 2 * stats.norm.sf(0.1 / sd)
    outside = np.sum(np.abs(m - 1) > 0.1)
    assert outside <= stats.poisson.ppf(1 - 1e-6, expected)


def test_gaussian_moments(rng):
    m, _ = sample_gaussian_mask(gate(0.0, "gaussian"), 100_000, rng)
    assert abs(m.var(ddof=1) - 0.5) <= 0.01
    assert abs(m.mean() - 1.0) <= 0.01


def test_gaussian_pathwise_derivative(rng):
    g = gate([0.4, -1.2], "gaussian", gaussian_variance_cap=0.8)
    _, dm = sample_gaussian_mask(g, 6, np.random.default_rng(3))
    h = 1e-6
    up, _ = sample_gaussian_mask(gate(g.logits + h, "gaussian", gaussian_variance_cap=0.8), 6, np.random.default_rng(3))
    dn, _ = sample_gaussian_mask(gate(g.logits - h, "gaussian", gaussian_variance_cap=0.8), 6, np.random.default_rng(3))
    np.testing.assert_allclose(dm, (up - dn) / (2 * h), rtol=1e-6, atol=1e-10)
