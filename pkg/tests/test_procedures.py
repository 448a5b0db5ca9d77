import numpy as np
import pytest

from covmany.estimators import NumericalError, g_kernel, lambda_hat_sq
from covmany.procedures import (
    TransposableSample,
    center_sample,
    classify,
    decision,
    eq_test,
    kron_spec_test,
    pairwise_contributions,
    prop_test,
    subsampled_eq_scan,
)
from covmany.simgen import kron_sample
from covmany.theory import upper_quantile


def null_samples(rng, q, p, lo=20, hi=40, scale=True):
    root = rng.standard_normal((p, p)) / np.sqrt(p) + np.eye(p)
    out = []
    for _ in range(q):
        w = rng.uniform(0.5, 1.5) if scale else 1.0
        out.append(np.sqrt(w) * root @ rng.standard_normal((p, int(rng.integers(lo, hi)))))
    return out


def test_decision_logic_example():
    p_value, reject = decision(13.592, 0.05)
    assert reject
    assert p_value < 1e-40
    assert decision(1.0, 0.05) == (pytest.approx(0.15865525393145707), False)


def test_report_fields_and_consistency():
    rng = np.random.default_rng(0)
    for test in (prop_test, eq_test):
        for alpha in (0.01, 0.05, 0.2):
            rep = test(null_samples(rng, 6, 10), alpha)
            assert rep.reject == (rep.z > upper_quantile(alpha)) == (rep.p_value < alpha)
            assert 0 <= rep.p_value <= 1
            assert rep.q == 6 and rep.p == 10
            assert rep.n_list == sorted(rep.n_list)
            assert rep.z == pytest.approx(np.sqrt(6) * rep.statistic / np.sqrt(rep.variance_hat))
    assert prop_test(null_samples(rng, 3, 4)).kind == "proportionality"
    assert eq_test(null_samples(rng, 3, 4)).kind == "equality"


def test_permutation_invariance_is_exact():
    rng = np.random.default_rng(1)
    samples = null_samples(rng, 9, 12)
    for _ in range(3):
        perm = [samples[i] for i in rng.permutation(9)]
        assert prop_test(perm) == prop_test(samples)
        assert eq_test(perm) == eq_test(samples)


def test_input_errors():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        prop_test(null_samples(rng, 1, 5))
    with pytest.raises(ValueError):
        eq_test(null_samples(rng, 3, 5), alpha=0.0)
    zeros = [np.zeros((4, 6)) for _ in range(3)]
    with pytest.raises(NumericalError):
        prop_test(zeros)
    with pytest.raises(NumericalError):
        eq_test(zeros)


def test_kron_spec_test_equals_prop_test_on_columns():
    rng = np.random.default_rng(3)
    obs = rng.standard_normal((30, 8, 5))
    t = TransposableSample(obs)
    assert (t.n, t.p, t.q) == (30, 8, 5)
    rep = kron_spec_test(t, 0.05)
    ref = prop_test([obs[:, :, i].T for i in range(5)], 0.05)
    assert rep.kind == "kronecker_spec"
    assert {**rep.to_dict(), "kind": None} == {**ref.to_dict(), "kind": None}
    with pytest.raises(ValueError):
        TransposableSample(rng.standard_normal((1, 8, 5)))
    with pytest.raises(ValueError):
        TransposableSample(rng.standard_normal((8, 5)))


def test_kron_spec_size_under_diagonal_column_factor():
    rng = np.random.default_rng(4)
    p, q, n = 30, 12, 60
    SigmaR = np.diag(rng.uniform(0.5, 2.0, p))
    rejects = 0
    reps = 300
    for _ in range(reps):
        A = np.diag(rng.uniform(0.5, 1.5, q))
        rejects += kron_spec_test(kron_sample(SigmaR, A, n, "gaussian", rng)).reject
    assert 0.01 <= rejects / reps <= 0.11


def test_pairwise_matrix_structure():
    rng = np.random.default_rng(5)
    samples = null_samples(rng, 7, 10)
    rep = pairwise_contributions(samples)
    G = rep.g_matrix
    assert np.array_equal(G, G.T)
    assert np.all(np.diag(G) == 0)
    assert np.all(np.diag(rep.class_matrix) == 0)
    avg = G.sum(axis=1) / 6
    assert list(np.argsort(-avg, kind="stable")) == rep.row_order
    q25, q50, q75 = rep.quartiles
    iu = np.triu_indices(7, 1)
    for v, c in zip(G[iu], rep.class_matrix[iu]):
        expected = 1 if v <= q25 else 2 if v <= q50 else 3 if v <= q75 else 4
        assert c == expected
    # class labels are monotone in the value
    order = np.argsort(G[iu])
    assert np.all(np.diff(rep.class_matrix[iu][order]) >= 0)


def test_classify_ties_go_low():
    G = np.array([[0, 1, 1, 2], [1, 0, 3, 4], [1, 3, 0, 5], [2, 4, 5, 0]], dtype=float)
    quart, classes = classify(G)
    assert quart == pytest.approx((1.25, 2.5, 3.75))
    assert classes[0, 1] == 1 and classes[0, 3] == 2 and classes[1, 2] == 3 and classes[2, 3] == 4


def test_pairwise_two_populations():
    rng = np.random.default_rng(6)
    X1, X2 = rng.standard_normal((5, 12)), 2 * rng.standard_normal((5, 15))
    G = pairwise_contributions([X1, X2]).g_matrix
    expected = np.sqrt(2) * g_kernel(X1, X2) / np.sqrt(lambda_hat_sq([X1, X2]))
    assert G[0, 1] == pytest.approx(expected, rel=1e-10)
    assert G[1, 0] == G[0, 1]


def test_distinct_population_has_largest_row_average():
    rng = np.random.default_rng(7)
    p, hits = 20, 0
    for _ in range(100):
        Xs = [rng.standard_normal((p, 40)) for _ in range(2)]
        Xs.append(np.sqrt(3.0) * rng.standard_normal((p, 40)))
        hits += pairwise_contributions(Xs).row_order[0] == 2
    assert hits == 100


def test_scan_full_dimension_single_rep_is_eq_test():
    rng = np.random.default_rng(8)
    samples = null_samples(rng, 5, 9, scale=False)
    res = subsampled_eq_scan(samples, p_sub=9, n_rep=1, alpha=0.05, rng=0)
    z = eq_test(samples).z
    assert res.z_min == res.z_max == res.z_mean == z
    assert np.allclose(res.mean_pairwise.g_matrix, pairwise_contributions(samples).g_matrix)


def test_scan_rejection_rate_under_null():
    rng = np.random.default_rng(9)
    rejects = total = 0
    for _ in range(100):
        samples = null_samples(rng, 15, 40, lo=40, hi=60, scale=False)
        res = subsampled_eq_scan(samples, p_sub=20, n_rep=2, alpha=0.05, rng=rng)
        rejects += round(res.reject_rate * 2)
        total += 2
    assert 0.01 <= rejects / total <= 0.11


def test_scan_shares_the_subset_and_checks_inputs():
    rng = np.random.default_rng(10)
    samples = null_samples(rng, 4, 10)
    with pytest.raises(ValueError):
        subsampled_eq_scan(samples, p_sub=11, n_rep=1)
    with pytest.raises(ValueError):
        subsampled_eq_scan(samples, p_sub=5, n_rep=0)
    a = subsampled_eq_scan(samples, 5, 4, 0.05, rng=3)
    b = subsampled_eq_scan(samples, 5, 4, 0.05, rng=3)
    assert a.z_values == b.z_values
    with pytest.raises(NumericalError):
        subsampled_eq_scan([np.zeros((10, 5))] * 3, 4, 1)
    # identical populations give identical reduced data, so all G_ij coincide
    X = rng.standard_normal((10, 30))
    G = subsampled_eq_scan([X, X.copy(), X.copy()], 4, 3, 0.05, rng=1).mean_pairwise.g_matrix
    iu = np.triu_indices(3, 1)
    assert np.allclose(G[iu], G[0, 1])


def test_center_sample():
    X = np.array([[1.0, 2.0, 6.0], [3.0, 3.0, 0.0]])
    C = center_sample(X)
    assert np.all(np.abs(C.sum(axis=1)) <= 1e-12)
    res = subsampled_eq_scan([X + 5, X * 2 - 1], 2, 1, center=True)
    assert np.isfinite(res.z_mean)
