"""Unbiased spectral-moment estimators and the many-sample U-statistics.

A sample is a ``p x n`` array whose columns are observations. The sample
covariance is ``S = X X^T / n`` with no centering. Single-population
functions accept stacked samples of shape ``(..., p, n)`` and broadcast over
the leading axes, which is what the Monte Carlo batteries rely on.
"""

from dataclasses import dataclass, field
import hashlib

import numpy as np


class NumericalError(ArithmeticError):
    """Raised when a variance estimate is unusable (non-positive)."""


def as_sample(X):
    """Validate a ``p x n`` data matrix and return it as a C-contiguous
    float64 array (a fixed layout keeps the arithmetic path identical)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"a sample must be a p x n matrix, got shape {X.shape}")
    if X.shape[1] < 2:
        raise ValueError(f"sample size must be at least 2, got n={X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("sample has non-finite entries")
    return X


def _shape(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2:
        raise ValueError(f"expected (..., p, n) data, got shape {X.shape}")
    p, n = X.shape[-2:]
    if n < 2:
        raise ValueError(f"sample size must be at least 2, got n={n}")
    return X, p, n


def _t(M):
    return np.swapaxes(M, -1, -2)


def _tr(M):
    return np.trace(M, axis1=-2, axis2=-1)


def _frob_inner(A, B):
    # tr(A B) for symmetric A, B
    return np.sum(A * B, axis=(-2, -1))


def sample_cov(X):
    """``S = X X^T / n`` (no centering)."""
    X, p, n = _shape(X)
    return X @ _t(X) / n


def weighted_gram(X):
    """``X D(X^T X) X^T``, i.e. ``sum_k |x_k|^2 x_k x_k^T``.

    Never forms the ``n x n`` Gram matrix.
    """
    X, p, n = _shape(X)
    norms = np.sum(X * X, axis=-2)
    return (X * norms[..., None, :]) @ _t(X)


def nu_hats(X, A):
    """The three plug-in statistics whose expectations form the moment system.

    Returns ``(nu2, nu12, nu4)`` where ``nu2 = p^-1 tr(S^2 A)``,
    ``nu12 = (p^-1 tr S)(p^-1 tr SA)`` and ``nu4`` is the pairwise
    U-statistic evaluated through its single-sum form.
    """
    X, p, n = _shape(X)
    A = np.asarray(A, dtype=np.float64)
    if A.shape[-2:] != (p, p):
        raise ValueError(f"dimension mismatch: A is {A.shape[-2:]}, sample has p={p}")
    S = X @ _t(X) / n
    trS = _tr(S)
    trSA = _frob_inner(S, A)
    nu2 = _frob_inner(S @ S, A) / p
    nu12 = (trS / p) * (trSA / p)
    a = np.sum(X * X, axis=-2)
    b = np.sum(X * (A @ X), axis=-2)
    nu4 = (np.sum(a * b, axis=-1) - n * trS * trSA) / (p * (n - 1))
    return nu2, nu12, nu4


@dataclass(frozen=True)
class MomentSystem:
    """Coefficient matrix linking ``E[nu_hats]`` to the population moments."""

    F: np.ndarray
    Finv: np.ndarray
    p: int
    n: int

    @property
    def det(self):
        return 1.0 - 1.0 / self.n


def moment_system(p, n):
    """Build the 3x3 system and its closed-form inverse for dimension ``p``
    and sample size ``n``."""
    if p < 1:
        raise ValueError(f"p must be positive, got {p}")
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    c = p / n
    F = np.array(
        [
            [1 + 1 / n, c, 1 / n],
            [2 / (p * n), 1.0, 1 / (p * n)],
            [2.0, 0.0, 1.0],
        ]
    )
    k = n / (n - 1)
    Finv = k * np.array(
        [
            [1.0, -c, -(n - 1) / n**2],
            [0.0, (n - 1) / n, -(n - 1) / (p * n**2)],
            [-2.0, 2 * c, (n - 1) * (n + 2) / n**2],
        ]
    )
    return MomentSystem(F=F, Finv=Finv, p=p, n=n)


@dataclass(frozen=True)
class RMatrices:
    r12: np.ndarray
    r2: np.ndarray
    r4: np.ndarray


def r_matrices(X):
    """Matrices whose normalized inner products with any fixed ``A`` are
    unbiased for ``mu12(A)``, ``mu2(A)`` and ``mu4(A)``."""
    X, p, n = _shape(X)
    S = X @ _t(X) / n
    W = weighted_gram(X)
    trS = _tr(S)[..., None, None]
    S2 = S @ S
    r12 = n / (p * (n - 1)) * trS * S - W / (p * n * (n - 1))
    r2 = n / (n - 1) * S2 - W / (n * (n - 1))
    r4 = (n + 2) / (n * (n - 1)) * W - 2 * n / (n - 1) * S2 - n / (n - 1) * trS * S
    sym = lambda M: (M + _t(M)) / 2  # noqa: E731
    return RMatrices(r12=sym(r12), r2=sym(r2), r4=sym(r4))


def mu_hats(X):
    """Unbiased estimators ``(mu12_hat, mu2_hat)`` of ``(p^-1 tr Sigma)^2``
    and ``p^-1 tr Sigma^2``.

    Computed from traces only; equal to ``p^-1 tr R12`` and ``p^-1 tr R2``.
    """
    X, p, n = _shape(X)
    norms = np.sum(X * X, axis=-2)
    trS = np.sum(norms, axis=-1) / n
    trW = np.sum(norms * norms, axis=-1)
    S = X @ _t(X) / n
    trS2 = _frob_inner(S, S)
    mu12 = (n / (p * (n - 1)) * trS**2 - trW / (p * n * (n - 1))) / p
    mu2 = (n / (n - 1) * trS2 - trW / (n * (n - 1))) / p
    return mu12, mu2


def _check_pair(Xi, Xj):
    Xi, p, _ = _shape(Xi)
    Xj, pj, _ = _shape(Xj)
    if p != pj:
        raise ValueError(f"dimension mismatch: p={p} vs p={pj}")
    return Xi, Xj, p


def gamma_hat(Xi, Xj):
    """Unbiased cross term ``p^-1 tr(R_i12 R_j12)``."""
    Xi, Xj, p = _check_pair(Xi, Xj)
    return _frob_inner(r_matrices(Xi).r12, r_matrices(Xj).r12) / p


def h_kernel(Xi, Xj):
    """Pair kernel with expectation ``d_prop(Sigma_i, Sigma_j)``."""
    Xi, Xj, p = _check_pair(Xi, Xj)
    Ri, Rj = r_matrices(Xi), r_matrices(Xj)
    m12i, m2i = _tr(Ri.r12) / p, _tr(Ri.r2) / p
    m12j, m2j = _tr(Rj.r12) / p, _tr(Rj.r2) / p
    gam = _frob_inner(Ri.r12, Rj.r12) / p
    return p * (m2i * m12j + m2j * m12i - 2 * gam)


def g_kernel(Xi, Xj):
    """Pair kernel with expectation ``d_zero(Sigma_i, Sigma_j)``."""
    Xi, Xj, p = _check_pair(Xi, Xj)
    _, m2i = mu_hats(Xi)
    _, m2j = mu_hats(Xj)
    cross = _frob_inner(sample_cov(Xi), sample_cov(Xj)) / p
    return p * (m2i + m2j - 2 * cross)


@dataclass(frozen=True)
class PopulationMoments:
    """Per-population summaries reused by both statistics.

    ``key`` fixes a canonical, input-order-free ordering of populations.
    """

    p: int
    n: int
    mu12: float
    mu2: float
    S: np.ndarray = field(repr=False)
    tr_s2: float
    r12: np.ndarray | None = field(default=None, repr=False)
    tr_r12_sq: float | None = None
    key: tuple = field(default=(), repr=False)

    @property
    def c(self):
        return self.p / self.n


def population_moments(X, with_r12=True, keyed=True):
    """Summarize one sample. Set ``with_r12=False`` for the equality test
    only, which needs no ``R12`` matrix."""
    X = as_sample(X)
    p, n = X.shape
    norms = np.sum(X * X, axis=0)
    trS = norms.sum() / n
    trW = float(np.dot(norms, norms))
    S = X @ X.T / n
    S = (S + S.T) / 2
    tr_s2 = float(np.sum(S * S))
    mu12 = (n / (p * (n - 1)) * trS**2 - trW / (p * n * (n - 1))) / p
    mu2 = (n / (n - 1) * tr_s2 - trW / (n * (n - 1))) / p
    r12 = tr_r12_sq = None
    if with_r12:
        W = (X * norms) @ X.T
        r12 = n / (p * (n - 1)) * trS * S - (W + W.T) / (2 * p * n * (n - 1))
        tr_r12_sq = float(np.sum(r12 * r12))
    key = hashlib.blake2b(X.tobytes(), digest_size=16).digest() if keyed else b""
    return PopulationMoments(
        p=p, n=n, mu12=float(mu12), mu2=float(mu2), S=S, tr_s2=tr_s2,
        r12=r12, tr_r12_sq=tr_r12_sq, key=(n, key),
    )


def _canonical(moments):
    moments = list(moments)
    if len(moments) < 2:
        raise ValueError(f"need at least two populations, got q={len(moments)}")
    p = moments[0].p
    if any(m.p != p for m in moments):
        raise ValueError("all populations must share the same dimension p")
    return sorted(moments, key=lambda m: m.key), p


def u_from_moments(moments):
    """Proportionality statistic from per-population summaries (no pair sums)."""
    moms, p = _canonical(moments)
    if any(m.r12 is None for m in moms):
        raise ValueError("population summaries lack R12 matrices")
    q = len(moms)
    a = np.array([m.mu2 for m in moms])
    b = np.array([m.mu12 for m in moms])
    r_bar = np.mean(np.stack([m.r12 for m in moms]), axis=0)
    tr_rbar_sq = float(np.sum(r_bar * r_bar))
    mean_tr_r_sq = float(np.mean([m.tr_r12_sq for m in moms]))
    first = a.mean() * b.mean() - tr_rbar_sq / p
    second = np.mean(a * b) - mean_tr_r_sq / p
    return float(2 * p * q / (q - 1) * first - 2 * p / (q - 1) * second)


def v_from_moments(moments):
    """Equality statistic from per-population summaries (no pair sums)."""
    moms, p = _canonical(moments)
    q = len(moms)
    a = np.array([m.mu2 for m in moms])
    s_bar = np.mean(np.stack([m.S for m in moms]), axis=0)
    tr_sbar_sq = float(np.sum(s_bar * s_bar))
    mean_tr_s2 = float(np.mean([m.tr_s2 for m in moms]))
    return float(2 * p * a.mean() - 2 * q / (q - 1) * tr_sbar_sq + 2 / (q - 1) * mean_tr_s2)


def sigma_hat_sq_from_moments(moments):
    moms, _ = _canonical(moments)
    c2a2 = np.array([(m.c * m.mu2) ** 2 for m in moms])
    b = np.array([m.mu12 for m in moms])
    return float(16 * c2a2.mean() * b.mean() ** 2)


def lambda_hat_sq_from_moments(moments):
    moms, _ = _canonical(moments)
    c2a2 = np.array([(m.c * m.mu2) ** 2 for m in moms])
    return float(16 * c2a2.mean())


def _moments_of(samples, with_r12):
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError(f"need at least two populations, got q={len(samples)}")
    return [population_moments(X, with_r12=with_r12) for X in samples]


def u_statistic(samples):
    """Unbiased estimator of the mean pairwise proportionality distance."""
    return u_from_moments(_moments_of(samples, True))


def v_statistic(samples):
    """Unbiased estimator of the mean pairwise equality distance."""
    return v_from_moments(_moments_of(samples, False))


def sigma_hat_sq(samples):
    """Consistent null-variance estimate for the proportionality statistic."""
    return sigma_hat_sq_from_moments(_moments_of(samples, False))


def lambda_hat_sq(samples):
    """Consistent null-variance estimate for the equality statistic."""
    return lambda_hat_sq_from_moments(_moments_of(samples, False))
