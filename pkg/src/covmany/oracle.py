"""Brute-force Monte Carlo checks of the moment and covariance formulas.

Everything here is computed from raw draws with the most literal formula
available (pair sums instead of single sums, explicit traces), and nothing
is imported from :mod:`covmany.estimators`, so a shared bug cannot make an
estimator agree with its own oracle.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .matcore import certify_psd, as_symmetric, psd_sqrt, sigma_inner
from .simgen import NoiseKind, draw_noise

CHUNK_ENTRIES = 4_000_000


@dataclass(frozen=True)
class OracleReport:
    """Analytic target versus Monte Carlo estimate.

    ``rule`` is ``"4se"`` for exact finite-sample targets (pass when
    ``|z| <= 4``) or ``"10pct_or_4se"`` for leading-order targets (pass when
    the relative error is at most 10% or ``|z| <= 4``).
    """

    target_name: str
    analytic: float
    mc_mean: float
    mc_se: float
    n_draws: int
    z_score: float
    passed: bool
    rule: str = "4se"
    rel_error: float = float("nan")

    @property
    def pass_(self):
        return self.passed

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _report(name, analytic, mc_mean, mc_se, n_draws, rule="4se"):
    analytic, mc_mean, mc_se = float(analytic), float(mc_mean), float(mc_se)
    diff = mc_mean - analytic
    if mc_se > 0:
        z = diff / mc_se
    else:
        # a constant statistic: exact agreement or an infinite miss
        z = 0.0 if diff == 0 else float("inf") * np.sign(diff)
    rel = abs(diff) / abs(analytic) if analytic != 0 else float("nan")
    ok = abs(z) <= 4
    if rule == "10pct_or_4se":
        ok = ok or (analytic != 0 and rel <= 0.10)
    return OracleReport(name, analytic, mc_mean, mc_se, int(n_draws), float(z), bool(ok), rule, rel)


def _mean_se(values):
    values = np.asarray(values, dtype=np.float64)
    return values.mean(), values.std(ddof=1) / np.sqrt(len(values))


def _draws(N, p, n, kind, rng):
    # yield (m, p, n) chunks of standardized noise
    per = max(1, CHUNK_ENTRIES // (p * n))
    done = 0
    while done < N:
        m = min(per, N - done)
        yield draw_noise(kind, m * p, n, rng).reshape(m, p, n)
        done += m


def _check_N(N, minimum):
    if N < minimum:
        raise ValueError(f"N must be at least {minimum}, got {N}")


def _check_dims(Sigma, A=None):
    Sigma = certify_psd(Sigma)
    if A is not None:
        A = as_symmetric(A)
        if A.shape != Sigma.shape:
            raise ValueError(f"dimension mismatch: {A.shape} vs {Sigma.shape}")
    return Sigma, A


def population_mus(Sigma, A, nu4):
    """``(mu2(A), mu12(A), mu4(A))`` evaluated from ``Sigma`` directly."""
    p = Sigma.shape[0]
    root = psd_sqrt(Sigma)
    At = root @ A @ root
    mu2 = np.trace(Sigma @ Sigma @ A) / p
    mu12 = (np.trace(Sigma) / p) * (np.trace(Sigma @ A) / p)
    mu4 = (nu4 - 3) / p * np.dot(np.diagonal(Sigma), np.diagonal(At))
    return np.array([mu2, mu12, mu4])


def coefficient_matrix(p, n):
    return np.array(
        [
            [1 + 1 / n, p / n, 1 / n],
            [2 / (p * n), 1.0, 1 / (p * n)],
            [2.0, 0.0, 1.0],
        ]
    )


def _plugin_stats(X, A):
    """Per-draw ``(nu2, nu12, nu4)`` with ``nu4`` as an explicit pair sum."""
    m, p, n = X.shape
    S = X @ np.swapaxes(X, 1, 2) / n
    SA = S @ A
    nu2 = np.einsum("mij,ji->m", S @ S, A) / p
    nu12 = (np.trace(S, axis1=1, axis2=2) / p) * (np.trace(SA, axis1=1, axis2=2) / p)
    a = np.einsum("mik,mik->mk", X, X)
    b = np.einsum("mik,ij,mjk->mk", X, A, X)
    da = a[:, :, None] - a[:, None, :]
    db = b[:, :, None] - b[:, None, :]
    # each unordered pair appears twice in the full double sum
    nu4 = np.sum(da * db, axis=(1, 2)) / 2 / (p * n * (n - 1))
    return nu2, nu12, nu4


def check_lemma1(Sigma, n, A, kind, N, rng):
    """Means of the three plug-in statistics against the linear moment system."""
    _check_N(N, 10_000)
    Sigma, A = _check_dims(Sigma, A)
    kind = NoiseKind.parse(kind)
    p = Sigma.shape[0]
    root = psd_sqrt(Sigma)
    target = coefficient_matrix(p, n) @ population_mus(Sigma, A, kind.nu4)
    cols = [[], [], []]
    for Z in _draws(N, p, n, kind, rng):
        for k, v in enumerate(_plugin_stats(root @ Z, A)):
            cols[k].append(v)
    names = ("nu2_hat", "nu12_hat", "nu4_hat")
    out = []
    for name, t, vals in zip(names, target, cols):
        mean, se = _mean_se(np.concatenate(vals))
        out.append(_report(name, t, mean, se, N))
    return out


def check_expectations_A1(Sigma, n, kind, N, rng, A=None):
    """Exact finite-``n`` means of ``p^-1 tr S^2`` and ``(p^-1 tr S)(p^-1 tr SA)``."""
    _check_N(N, 10_000)
    Sigma, A = _check_dims(Sigma, A)
    kind = NoiseKind.parse(kind)
    p = Sigma.shape[0]
    if A is None:
        A = np.eye(p)
    root = psd_sqrt(Sigma)
    m1 = np.trace(Sigma) / p
    m2 = np.sum(Sigma * Sigma) / p
    d2 = np.sum(np.diagonal(Sigma) ** 2) / p
    t1 = m2 + p / n * m1**2 + (m2 + (kind.nu4 - 3) * d2) / n
    t2 = m1 * np.trace(Sigma @ A) / p + sigma_inner(np.eye(p), A, Sigma, kind.nu4, root) / (p * n)
    v1, v2 = [], []
    for Z in _draws(N, p, n, kind, rng):
        X = root @ Z
        S = X @ np.swapaxes(X, 1, 2) / n
        v1.append(np.sum(S * S, axis=(1, 2)) / p)
        v2.append(np.trace(S, axis1=1, axis2=2) / p * np.einsum("mij,ji->m", S, A) / p)
    return [
        _report("mean_tr_S2", t1, *_mean_se(np.concatenate(v1)), N),
        _report("mean_trS_trSA", t2, *_mean_se(np.concatenate(v2)), N),
    ]


def _var_se(values):
    # sample variance and the delta-method SE of a variance estimate
    x = np.asarray(values, dtype=np.float64)
    N = len(x)
    dev = x - x.mean()
    var = np.sum(dev**2) / (N - 1)
    se = np.sqrt(max(np.mean(dev**4) - var**2, 0.0) / N)
    return var, se


def check_variance_A5(Sigma, n, kind, N, rng):
    """Variance of ``tr(S^2) - (tr S)^2 / n`` against its leading-order value."""
    _check_N(N, 10_000)
    Sigma, _ = _check_dims(Sigma)
    kind = NoiseKind.parse(kind)
    p = Sigma.shape[0]
    root = psd_sqrt(Sigma)
    c = p / n
    m2 = np.sum(Sigma * Sigma) / p
    target = 4 * c**2 * m2**2 + 4 * c * sigma_inner(Sigma, Sigma, Sigma, kind.nu4, root)
    vals = []
    for Z in _draws(N, p, n, kind, rng):
        X = root @ Z
        S = X @ np.swapaxes(X, 1, 2) / n
        trS = np.trace(S, axis1=1, axis2=2)
        vals.append(np.sum(S * S, axis=(1, 2)) - trS**2 / n)
    var, se = _var_se(np.concatenate(vals))
    return _report("var_trS2_minus_trS_sq_over_n", target, var, se, N, rule="10pct_or_4se")


def _pair_cov(nu4, A, B):
    # exact Cov(z'Az, z'Bz) for i.i.d. unit-variance entries
    return 2 * np.sum(A * B) + (nu4 - 3) * np.dot(np.diagonal(A), np.diagonal(B))


def quadform_targets(A1, A2, A3, A4, nu4):
    """Leading terms of Cov(q1 q2, q3 q4) and Cov(q1 q2, q3) with
    ``q_k = z' A_k z``; the four-matrix term sums over the four ways of
    pairing one factor from each side."""
    tr = [np.trace(M) for M in (A1, A2, A3, A4)]
    C = lambda X, Y: _pair_cov(nu4, X, Y)  # noqa: E731
    four = (
        tr[1] * tr[3] * C(A1, A3)
        + tr[1] * tr[2] * C(A1, A4)
        + tr[0] * tr[3] * C(A2, A3)
        + tr[0] * tr[2] * C(A2, A4)
    )
    three = tr[1] * C(A1, A3) + tr[0] * C(A2, A3)
    return float(four), float(three)


def _cov_se(x, y):
    dx, dy = x - x.mean(), y - y.mean()
    u = dx * dy
    N = len(x)
    return np.sum(u) / (N - 1), u.std(ddof=1) / np.sqrt(N)


def check_quadform_H1(A1, A2, A3, A4, kind, N, rng, rule="10pct_or_4se"):
    """Covariances of products of quadratic forms in a noise vector.

    The targets drop remainders of relative order ``1/p``, so use a
    moderately large dimension for the 10% band to be meaningful.
    """
    _check_N(N, 100_000)
    mats = [as_symmetric(M) for M in (A1, A2, A3, A4)]
    p = mats[0].shape[0]
    if any(M.shape != (p, p) for M in mats):
        raise ValueError("all matrices must share one dimension")
    kind = NoiseKind.parse(kind)
    four, three = quadform_targets(*mats, kind.nu4)
    qs = [[] for _ in mats]
    per = max(1, CHUNK_ENTRIES // p)
    done = 0
    while done < N:
        m = min(per, N - done)
        z = draw_noise(kind, m, p, rng)
        for k, M in enumerate(mats):
            qs[k].append(np.einsum("mi,mi->m", z @ M, z))
        done += m
    q1, q2, q3, q4 = (np.concatenate(v) for v in qs)
    c4, se4 = _cov_se(q1 * q2, q3 * q4)
    c3, se3 = _cov_se(q1 * q2, q3)
    return [
        _report("cov_q1q2_q3q4", four, c4, se4, N, rule=rule),
        _report("cov_q1q2_q3", three, c3, se3, N, rule=rule),
    ]
