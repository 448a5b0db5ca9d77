import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covmany.matcore import d_prop, d_zero, normalize_prop_basis, sigma_inner
from covmany.simgen import case_b_pair
from covmany.theory import (
    PopulationSpec,
    VarianceDecomposition,
    eq_variance,
    group_diagnostics,
    mean_drift_eq,
    mean_drift_prop,
    needle_power_eq,
    needle_power_prop,
    power_general,
    prop_variance,
    upper_quantile,
)
from scipy.stats import norm


def specs_of(mats, nu4=3.0, n=10):
    return [PopulationSpec(M, nu4, n) for M in mats]


def random_psd(p, rng):
    G = rng.standard_normal((p, 2 * p))
    return G @ G.T / (2 * p)


def test_population_spec_invariants():
    s = PopulationSpec(np.eye(4), 3.0, 8)
    assert s.c == 0.5
    with pytest.raises(ValueError):
        PopulationSpec(np.eye(2), 0.5, 8)
    with pytest.raises(ValueError):
        PopulationSpec(np.eye(2), 3.0, 1)
    with pytest.raises(ValueError):
        PopulationSpec(np.diag([1.0, -1.0]), 3.0, 5)


def test_mean_drift_prop_examples():
    S = np.diag([1.0, 2.0, 3.0])
    assert mean_drift_prop(specs_of([S, 2 * S, 0.5 * S])) == pytest.approx(0.0, abs=1e-14)
    assert mean_drift_prop(specs_of([np.eye(2), np.diag([1.0, 3.0])])) == pytest.approx(2.0)
    out = np.diag([1.0, 5.0, 2.0])
    assert mean_drift_prop(specs_of([S, S, out])) == pytest.approx(2 / 3 * d_prop(S, out))
    with pytest.raises(ValueError):
        mean_drift_prop(specs_of([S]))


def test_mean_drift_eq_examples():
    S = np.diag([1.0, 2.0, 3.0])
    assert mean_drift_eq(specs_of([S, S, S])) == 0
    assert mean_drift_eq(specs_of([np.diag([1.0, 2.0]), np.diag([2.0, 1.0])])) == pytest.approx(2.0)
    out = np.diag([1.0, 5.0, 2.0])
    assert mean_drift_eq(specs_of([S, S, out])) == pytest.approx(2 / 3 * d_zero(S, out))


def test_mean_drift_prop_zero_under_rescaling():
    rng = np.random.default_rng(0)
    S = random_psd(5, rng)
    mats = [w * S for w in rng.uniform(0.5, 1.5, 6)]
    assert mean_drift_prop(specs_of(mats)) <= 1e-12
    assert mean_drift_prop(specs_of([3.0 * M for M in mats])) <= 1e-12


def test_prop_variance_examples():
    d = prop_variance(specs_of([np.eye(6)] * 4, n=6))
    assert d.sigma0_sq == pytest.approx(16.0)
    assert d.sigmar_sq == pytest.approx(0.0, abs=1e-12)
    assert d.total_sq == d.sigma0_sq + d.sigmar_sq


def test_prop_variance_needle_remainder_is_order_one_over_q():
    rng = np.random.default_rng(1)
    p = 20
    S0, L0 = normalize_prop_basis(*case_b_pair(p, rng, "prop"))
    out = S0 + np.sqrt(0.5) * L0
    rem = []
    for q in (50, 100, 200):
        mats = [w * S0 for w in rng.uniform(0.5, 1.5, q - 1)] + [out]
        rem.append(prop_variance(specs_of(mats, n=40)).sigmar_sq)
    for a, b in zip(rem, rem[1:]):
        assert b / a == pytest.approx(0.5, rel=0.30)


def test_eq_variance_examples():
    d = eq_variance(specs_of([np.eye(5)] * 3, n=5))
    assert d.sigma0_sq == pytest.approx(16.0)
    assert d.sigmar_sq == pytest.approx(0.0, abs=1e-12)


def test_eq_variance_alternating_hand_value():
    p, q, n, nu4 = 4, 6, 8, 4.5
    mats = [np.eye(p) if i % 2 == 0 else 2 * np.eye(p) for i in range(q)]
    d = eq_variance(specs_of(mats, nu4=nu4, n=n))
    c = p / n
    k = q / (2 * (q - 1))
    # Gamma_i = -k I for Sigma = I and +k I for Sigma = 2I
    inner_1 = sigma_inner(k * np.eye(p), k * np.eye(p), np.eye(p), nu4)
    inner_2 = sigma_inner(k * np.eye(p), k * np.eye(p), 2 * np.eye(p), nu4)
    assert inner_1 == pytest.approx((2 + nu4 - 3) * k**2)
    hand_r = 16 / q * (q / 2) * c * (inner_1 + inner_2)
    hand_0 = 16 / q * (q / 2) * c**2 * (1 + 16)
    assert d.sigmar_sq == pytest.approx(hand_r, rel=1e-9)
    assert d.sigma0_sq == pytest.approx(hand_0, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), q=st.integers(2, 8), nu4=st.sampled_from([1.5, 3.0, 4.5, 9.0]))
def test_null_degeneracy(seed, q, nu4):
    rng = np.random.default_rng(seed)
    S = random_psd(6, rng)
    ns = rng.integers(3, 30, q)
    prop = [PopulationSpec(w * S, nu4, int(n)) for w, n in zip(rng.uniform(0.1, 5, q), ns)]
    d = prop_variance(prop)
    assert abs(d.sigmar_sq) <= 1e-10 * d.sigma0_sq
    d = eq_variance([PopulationSpec(S, nu4, int(n)) for n in ns])
    assert abs(d.sigmar_sq) <= 1e-10 * d.sigma0_sq


def test_power_general_examples():
    for alpha in (0.01, 0.05, 0.1):
        assert power_general(0.0, VarianceDecomposition(3.0, 0.0), 40, alpha) == pytest.approx(alpha, abs=1e-12)
    d = VarianceDecomposition(4.0, 0.0)
    assert power_general(1.0, d, 100, 0.05) == pytest.approx(norm.cdf(5 - 1.6448536269514722), abs=1e-10)
    assert power_general(1.0, d, 100, 0.05) == pytest.approx(0.99960, abs=5e-6)
    vals = [power_general(m, d, 50, 0.05) for m in np.linspace(0, 3, 20)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert power_general(1e6, d, 50, 0.05) == 1.0
    with pytest.raises(ValueError):
        power_general(1.0, VarianceDecomposition(0.0, 0.0), 50, 0.05)
    with pytest.raises(ValueError):
        power_general(1.0, d, 50, 1.5)


def test_needle_power_prop_examples():
    assert needle_power_prop(0.0, 100, 50, 1.0, 1.0, 0.05) == pytest.approx(0.05, abs=1e-12)
    assert needle_power_prop(0.5, 100, 50, 1.0, 1.0, 0.05) == pytest.approx(0.9707, abs=5e-5)
    vals = [needle_power_prop(b, 100, 50, 1.3, 2.0, 0.05) for b in np.linspace(0, 2, 30)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        needle_power_prop(0.5, 100, 50, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        needle_power_prop(0.5, 100, 50, 0.0, 1.0, 0.05)


def test_needle_power_eq_examples():
    assert needle_power_eq(0.0, 100, 100, 1.0, 0.05) == pytest.approx(0.05, abs=1e-12)
    assert needle_power_eq(0.4, 100, 100, 1.0, 0.05) == pytest.approx(0.6388, abs=5e-5)
    vals = [needle_power_eq(b, 100, 100, 0.7, 0.05) for b in np.linspace(0, 2, 30)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        needle_power_eq(0.4, 100, 100, 1.0, 1.0)


def test_upper_quantile_accuracy():
    for a in (0.001, 0.01, 0.05, 0.1, 0.5):
        assert upper_quantile(a) == pytest.approx(norm.isf(a), abs=1e-10)


def test_group_diagnostics():
    S = np.diag([1.0, 2.0])
    assert group_diagnostics(specs_of([S, 2 * S, 3 * S]))[:2] == (0.0, 0.0)
    dp = d_prop(np.eye(2), np.diag([1.0, 3.0]))
    dz = d_zero(np.eye(2), np.diag([1.0, 3.0]))
    assert group_diagnostics(specs_of([np.eye(2), np.diag([1.0, 3.0])])) == pytest.approx((dp, dp, dz, dz))
    out = group_diagnostics(specs_of([np.eye(2), np.eye(2), np.diag([1.0, 3.0])]))
    assert out[:2] == pytest.approx((0.0, 2.0))
