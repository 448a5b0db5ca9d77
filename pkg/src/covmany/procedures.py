"""User-facing test procedures built on the many-sample statistics.

All tests are one-sided: large values of the standardized statistic are
evidence against the null.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .estimators import (
    NumericalError,
    as_sample,
    lambda_hat_sq_from_moments,
    population_moments,
    sigma_hat_sq_from_moments,
    u_from_moments,
    v_from_moments,
)
from .theory import upper_quantile

KINDS = ("proportionality", "equality", "kronecker_spec")


@dataclass(frozen=True)
class TestReport:
    """Outcome of one proportionality, equality or Kronecker-specification test."""

    __test__ = False  # keep pytest from collecting this class

    kind: str
    p: int
    q: int
    n_list: list
    statistic: float
    variance_hat: float
    z: float
    p_value: float
    alpha: float
    reject: bool

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PairwiseReport:
    g_matrix: np.ndarray
    row_order: list
    quartiles: tuple
    class_matrix: np.ndarray

    def to_dict(self):
        return {
            "g_matrix": self.g_matrix.tolist(),
            "row_order": list(self.row_order),
            "quartiles": list(self.quartiles),
            "class_matrix": self.class_matrix.tolist(),
        }


@dataclass(frozen=True)
class TransposableSample:
    """``n`` i.i.d. ``p x q`` matrix observations stacked as ``(n, p, q)``."""

    observations: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim != 3:
            raise ValueError(f"expected an (n, p, q) array, got shape {obs.shape}")
        n, p, q = obs.shape
        if n < 2 or q < 2 or p < 1:
            raise ValueError(f"degenerate transposable sample with (n, p, q) = {obs.shape}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("transposable sample has non-finite entries")
        object.__setattr__(self, "observations", obs)

    @property
    def n(self):
        return self.observations.shape[0]

    @property
    def p(self):
        return self.observations.shape[1]

    @property
    def q(self):
        return self.observations.shape[2]

    def column_samples(self):
        """Column ``i`` across the ``n`` replicates, as a ``p x n`` sample."""
        return [np.ascontiguousarray(self.observations[:, :, i].T) for i in range(self.q)]


@dataclass
class ScanResult:
    z_min: float
    z_max: float
    z_mean: float
    mean_pairwise: PairwiseReport
    z_values: list = field(default_factory=list)
    reject_rate: float = 0.0


def decision(z, alpha):
    """One-sided p-value and decision for a standardized statistic ``z``."""
    z_alpha = upper_quantile(alpha)
    return float(ndtr(-z)), bool(z > z_alpha)


def _check_alpha(alpha):
    upper_quantile(alpha)
    return float(alpha)


def _report(kind, moments, stat, var, alpha):
    if not var > 0:
        raise NumericalError(f"variance estimate is not positive ({var!r})")
    q = len(moments)
    z = float(np.sqrt(q) * stat / np.sqrt(var))
    p_value, reject = decision(z, alpha)
    return TestReport(
        kind=kind,
        p=moments[0].p,
        q=q,
        n_list=sorted(m.n for m in moments),
        statistic=stat,
        variance_hat=var,
        z=z,
        p_value=p_value,
        alpha=alpha,
        reject=reject,
    )


def _moments(samples, with_r12):
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError(f"need at least two populations, got q={len(samples)}")
    return [population_moments(X, with_r12=with_r12) for X in samples]


def prop_test_from_moments(moments, alpha=0.05, kind="proportionality"):
    alpha = _check_alpha(alpha)
    stat = u_from_moments(moments)
    var = sigma_hat_sq_from_moments(moments)
    return _report(kind, moments, stat, var, alpha)


def eq_test_from_moments(moments, alpha=0.05):
    alpha = _check_alpha(alpha)
    stat = v_from_moments(moments)
    var = lambda_hat_sq_from_moments(moments)
    return _report("equality", moments, stat, var, alpha)


def prop_test(samples, alpha=0.05):
    """Test whether all population covariance matrices are proportional.

    Parameters
    ----------
    samples : sequence of ndarray
        ``q >= 2`` zero-mean samples, each ``p x n_i`` with columns as
        observations.
    alpha : float
        Nominal level.

    Returns
    -------
    TestReport
    """
    _check_alpha(alpha)
    return prop_test_from_moments(_moments(samples, True), alpha)


def eq_test(samples, alpha=0.05):
    """Test whether all population covariance matrices are equal."""
    _check_alpha(alpha)
    return eq_test_from_moments(_moments(samples, False), alpha)


def kron_spec_test(tdata, alpha=0.05):
    """Check a separable (Kronecker) covariance specification for matrix data.

    Columns are independent with proportional covariances exactly when the
    row/column covariance is Kronecker with a diagonal column factor, so the
    proportionality test is run on the column-sliced samples.
    """
    if not isinstance(tdata, TransposableSample):
        tdata = TransposableSample(tdata)
    _check_alpha(alpha)
    moments = _moments(tdata.column_samples(), True)
    return prop_test_from_moments(moments, alpha, kind="kronecker_spec")


def _g_matrix(moments):
    # G_ij = sqrt(q) g(X_i, X_j) / lambda_hat, without canonical reordering
    q = len(moments)
    p = moments[0].p
    lam = lambda_hat_sq_from_moments(moments)
    if not lam > 0:
        raise NumericalError(f"variance estimate is not positive ({lam!r})")
    flat = np.stack([m.S.ravel() for m in moments])
    cross = flat @ flat.T / p
    mu2 = np.array([m.mu2 for m in moments])
    g = p * (mu2[:, None] + mu2[None, :] - 2 * cross)
    g = (g + g.T) / 2
    np.fill_diagonal(g, 0.0)
    return np.sqrt(q) * g / np.sqrt(lam)


def classify(G):
    """Type-7 quartiles of the distinct off-diagonal values and 4-class labels.

    A value ``v`` gets class 1 if ``v <= Q25``, 2 if ``v <= Q50``, 3 if
    ``v <= Q75`` and 4 otherwise; the diagonal is class 0.
    """
    G = np.asarray(G, dtype=np.float64)
    iu = np.triu_indices(G.shape[0], k=1)
    quart = np.quantile(G[iu], [0.25, 0.5, 0.75], method="linear")
    classes = np.searchsorted(quart, G, side="left") + 1
    np.fill_diagonal(classes, 0)
    return tuple(float(v) for v in quart), classes.astype(int)


def pairwise_report(G):
    G = np.asarray(G, dtype=np.float64)
    q = G.shape[0]
    row_avg = G.sum(axis=1) / (q - 1)
    order = np.argsort(-row_avg, kind="stable")
    quart, classes = classify(G)
    return PairwiseReport(
        g_matrix=G, row_order=[int(i) for i in order], quartiles=quart, class_matrix=classes
    )


def pairwise_contributions(samples, n_rep=1, rng=None, p_sub=None, center=False):
    """Pairwise contributions ``G_ij`` to the equality statistic.

    With ``p_sub=None`` every repetition would see the same data, so a single
    full-dimension evaluation is returned. Otherwise the averaged matrix from
    :func:`subsampled_eq_scan` is used.
    """
    samples = [as_sample(X) for X in samples]
    if len(samples) < 2:
        raise ValueError(f"need at least two populations, got q={len(samples)}")
    if p_sub is None:
        if center:
            samples = [center_sample(X) for X in samples]
        return pairwise_report(_g_matrix(_moments(samples, False)))
    return subsampled_eq_scan(samples, p_sub, n_rep, 0.05, rng, center=center).mean_pairwise


def center_sample(X):
    """Subtract each variable's sample mean (rows of a ``p x n`` sample)."""
    X = as_sample(X)
    return X - X.mean(axis=1, keepdims=True)


def subsampled_eq_scan(populations, p_sub, n_rep, alpha=0.05, rng=None, center=False):
    """Repeat the equality test on random variable subsets.

    Each repetition draws ``p_sub`` variable indices without replacement,
    shared by all populations, and runs the equality test on the reduced
    samples. Returns the range and mean of the ``z`` values and the
    averaged pairwise matrix.
    """
    pops = [as_sample(X) for X in populations]
    if len(pops) < 2:
        raise ValueError(f"need at least two populations, got q={len(pops)}")
    p_total = pops[0].shape[0]
    if any(X.shape[0] != p_total for X in pops):
        raise ValueError("all populations must share the same dimension p")
    if not 1 <= p_sub <= p_total:
        raise ValueError(f"p_sub must lie in [1, {p_total}], got {p_sub}")
    if n_rep < 1:
        raise ValueError(f"n_rep must be at least 1, got {n_rep}")
    alpha = _check_alpha(alpha)
    rng = np.random.default_rng(rng)

    zs, rejects = [], 0
    g_sum = np.zeros((len(pops), len(pops)))
    for _ in range(n_rep):
        if p_sub == p_total:
            idx = np.arange(p_total)
        else:
            idx = np.sort(rng.choice(p_total, size=p_sub, replace=False))
        reduced = [X[idx] for X in pops]
        if center:
            reduced = [center_sample(X) for X in reduced]
        moments = _moments(reduced, False)
        rep = eq_test_from_moments(moments, alpha)
        zs.append(rep.z)
        rejects += rep.reject
        g_sum += _g_matrix(moments)
    return ScanResult(
        z_min=float(min(zs)),
        z_max=float(max(zs)),
        z_mean=float(np.mean(zs)),
        mean_pairwise=pairwise_report(g_sum / n_rep),
        z_values=zs,
        reject_rate=rejects / n_rep,
    )
