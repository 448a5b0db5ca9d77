"""Population-side quantities: mean drifts, asymptotic variances, power.

These are evaluated from known covariance matrices and noise kurtosis, and
serve as targets for the Monte Carlo checks and the theoretical power curves.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import ndtr, ndtri

from .matcore import certify_psd, d_prop, d_zero, psd_sqrt, sigma_inner


@dataclass
class PopulationSpec:
    """True covariance, noise fourth moment and sample size of one population."""

    sigma: np.ndarray
    nu4: float
    n: int
    sqrt_sigma: np.ndarray | None = None

    def __post_init__(self):
        self.sigma = certify_psd(self.sigma)
        if self.nu4 < 1:
            raise ValueError(f"nu4 must be >= 1, got {self.nu4}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")

    @property
    def p(self):
        return self.sigma.shape[0]

    @property
    def c(self):
        return self.p / self.n

    def root(self):
        if self.sqrt_sigma is None:
            self.sqrt_sigma = psd_sqrt(self.sigma)
        return self.sqrt_sigma


@dataclass(frozen=True)
class VarianceDecomposition:
    """Null part plus non-negative remainder of an asymptotic variance."""

    sigma0_sq: float
    sigmar_sq: float

    @property
    def total_sq(self):
        return self.sigma0_sq + self.sigmar_sq


def upper_quantile(alpha):
    """``z_alpha`` with ``P(Z > z_alpha) = alpha``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(-ndtri(alpha))


def norm_cdf(x):
    return float(ndtr(x))


def _check_specs(specs):
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError(f"need at least two populations, got q={len(specs)}")
    p = specs[0].p
    if any(s.p != p for s in specs):
        raise ValueError("all populations must share the same dimension p")
    return specs


def _pairwise(specs, dist):
    return np.array([dist(a.sigma, b.sigma) for a, b in combinations(specs, 2)])


def mean_drift_prop(specs):
    """Average pairwise proportionality distance over all population pairs."""
    return float(_pairwise(_check_specs(specs), d_prop).mean())


def mean_drift_eq(specs):
    """Average pairwise equality distance over all population pairs."""
    return float(_pairwise(_check_specs(specs), d_zero).mean())


def group_diagnostics(specs):
    """Extreme pairwise distances ``(dprop_min, dprop_max, dzero_min, dzero_max)``."""
    specs = _check_specs(specs)
    dp = _pairwise(specs, d_prop)
    dz = _pairwise(specs, d_zero)
    return float(dp.min()), float(dp.max()), float(dz.min()), float(dz.max())


def prop_variance(specs):
    """Asymptotic variance of the proportionality statistic, split into the
    null part and the alternative-only remainder."""
    specs = _check_specs(specs)
    q = len(specs)
    p = specs[0].p
    eye = np.eye(p)
    mu1 = np.array([np.trace(s.sigma) / p for s in specs])
    mu2 = np.array([np.sum(s.sigma * s.sigma) / p for s in specs])
    weighted = np.stack([m * s.sigma for m, s in zip(mu1, specs)])
    total_w = weighted.sum(axis=0)
    sum_mu1_sq, sum_mu2 = np.sum(mu1**2), np.sum(mu2)

    s0 = sr = 0.0
    for i, s in enumerate(specs):
        alpha = (sum_mu1_sq - mu1[i] ** 2) / (q - 1)
        beta = (sum_mu2 - mu2[i]) / (q - 1)
        lam = (total_w - weighted[i]) / (q - 1)
        kappa = np.sum(lam * s.sigma) / p
        gam = alpha * s.sigma - mu1[i] * lam + (mu1[i] * beta - kappa) * eye
        s0 += s.c**2 * alpha**2 * mu2[i] ** 2
        sr += s.c * sigma_inner(gam, gam, s.sigma, s.nu4, sqrt_sigma=s.root())
    return VarianceDecomposition(sigma0_sq=float(16 * s0 / q), sigmar_sq=float(16 * sr / q))


def eq_variance(specs):
    """Asymptotic variance of the equality statistic (null part + remainder)."""
    specs = _check_specs(specs)
    q = len(specs)
    p = specs[0].p
    total = np.sum([s.sigma for s in specs], axis=0)
    l0 = lr = 0.0
    for s in specs:
        mu2 = np.sum(s.sigma * s.sigma) / p
        gam = s.sigma - (total - s.sigma) / (q - 1)
        l0 += s.c**2 * mu2**2
        lr += s.c * sigma_inner(gam, gam, s.sigma, s.nu4, sqrt_sigma=s.root())
    return VarianceDecomposition(sigma0_sq=float(16 * l0 / q), sigmar_sq=float(16 * lr / q))


def power_general(drift, decomposition, q, alpha):
    """Asymptotic rejection probability given the mean drift and variance."""
    z = upper_quantile(alpha)
    total = decomposition.total_sq
    if not total > 0:
        raise ValueError("degenerate asymptotic variance")
    sd = np.sqrt(total)
    return norm_cdf(np.sqrt(q) * drift / sd - np.sqrt(decomposition.sigma0_sq) / sd * z)


def needle_power_prop(beta, p, q, mu2, w2q, alpha):
    """Power against a single outlier for normalized bases (proportionality).

    ``w2q`` is the average of ``c_i^2 mu_{i,1}^4`` over the conforming
    populations and ``mu2 = p^-1 tr(Sigma0^2)``.
    """
    if mu2 <= 0 or w2q <= 0:
        raise ValueError("mu2 and w2q must be positive")
    return norm_cdf(beta * p / (2 * mu2 * np.sqrt(q * w2q)) - upper_quantile(alpha))


def needle_power_eq(beta, p, q, cbar12, alpha):
    """Power against a single outlier for Frobenius-normalized bases (equality)."""
    if cbar12 <= 0:
        raise ValueError("cbar12 must be positive")
    return norm_cdf(beta * p / (2 * np.sqrt(q * cbar12)) - upper_quantile(alpha))
