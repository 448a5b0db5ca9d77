"""Seeded data generation and the size/power experiment drivers.

Replication ``r`` of an experiment with seed ``s`` draws everything from its
own Philox stream keyed on ``(s, r)``, so serial and parallel runs agree and
any single replication can be replayed. Within a replication all random draws
happen before ``beta`` is applied, which makes the curves at different
``beta`` values (and the size experiment at ``beta = 0``) share their noise.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import os

import numpy as np
from scipy.special import ndtri

from .estimators import population_moments
from .matcore import certify_psd, normalize_frob, normalize_prop_basis, psd_sqrt
from .procedures import (
    TransposableSample,
    eq_test_from_moments,
    kron_spec_test,
    prop_test_from_moments,
)
from .theory import PopulationSpec, needle_power_eq, needle_power_prop, upper_quantile

SCENARIOS = ("prop_case_a", "prop_case_b", "eq_case_a", "eq_case_b", "kron_case_I", "kron_case_II")
SPECTRA = {"prop": (np.exp(-3.0), np.exp(3.0)), "eq": (0.1, 10.1)}
WEIGHT_RANGE = (0.5, 1.5)


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    GAMMA = "gamma_4_2"

    @property
    def nu4(self):
        return 3.0 if self is NoiseKind.GAUSSIAN else 4.5

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"gaussian": cls.GAUSSIAN, "normal": cls.GAUSSIAN, "gamma": cls.GAMMA,
                   "gamma_4_2": cls.GAMMA}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown noise kind {value!r}") from None


def rep_rng(seed, r):
    """Independent generator for replication ``r`` of master seed ``seed``."""
    if seed < 0 or r < 0:
        raise ValueError("seed and replication index must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(r)])))


def rand_orthogonal(p, rng):
    """Haar-distributed ``p x p`` orthogonal matrix (sign-corrected QR)."""
    if p < 1:
        raise ValueError(f"p must be positive, got {p}")
    Q, R = np.linalg.qr(rng.standard_normal((p, p)))
    signs = np.sign(np.diagonal(R))
    signs[signs == 0] = 1.0
    return Q * signs


def draw_noise(kind, rows, cols, rng):
    """i.i.d. zero-mean, unit-variance noise; the gamma kind is Gamma(4, rate 2) - 2."""
    kind = NoiseKind.parse(kind)
    if kind is NoiseKind.GAUSSIAN:
        return rng.standard_normal((rows, cols))
    return rng.gamma(4.0, 0.5, size=(rows, cols)) - 2.0


def sample_population(sqrt_sigma, kind, n, rng):
    """``p x n`` sample ``Sigma^{1/2} Z``."""
    sqrt_sigma = np.asarray(sqrt_sigma, dtype=np.float64)
    if sqrt_sigma.ndim != 2 or sqrt_sigma.shape[0] != sqrt_sigma.shape[1]:
        raise ValueError(f"square root must be square, got shape {sqrt_sigma.shape}")
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    return sqrt_sigma @ draw_noise(kind, sqrt_sigma.shape[0], n, rng)


def _spectral(p, rng, lo, hi):
    U = rand_orthogonal(p, rng)
    d = rng.uniform(lo, hi, size=p)
    M = (U * d) @ U.T
    return (M + M.T) / 2


def case_a_pair(p, rng):
    """``Sigma = I`` and a random rank-``p/2`` projection ``Lambda``."""
    if p < 2 or p % 2:
        raise ValueError(f"case (a) needs an even p >= 2, got {p}")
    U = rand_orthogonal(p, rng)
    half = U[:, : p // 2]
    Lam = half @ half.T
    return np.eye(p), certify_psd((Lam + Lam.T) / 2)


def case_b_pair(p, rng, spectrum="prop"):
    """Two independent random-eigenbasis matrices with uniform spectra."""
    if p < 1:
        raise ValueError(f"p must be positive, got {p}")
    lo, hi = SPECTRA[spectrum] if isinstance(spectrum, str) else spectrum
    Sigma = _spectral(p, rng, lo, hi)
    Lam = _spectral(p, rng, lo, hi)
    return certify_psd(Sigma), certify_psd(Lam)


@dataclass
class NeedleBasis:
    """Beta-free part of a needle scenario: conforming populations plus the
    direction in which the last population moves away."""

    test: str
    sigma0: np.ndarray
    lambda0: np.ndarray
    weights: np.ndarray
    n: np.ndarray
    sqrt_sigma0: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.sqrt_sigma0 is None:
            self.sqrt_sigma0 = psd_sqrt(self.sigma0)

    @property
    def p(self):
        return self.sigma0.shape[0]

    @property
    def q(self):
        return len(self.n)

    def outlier(self, beta):
        if beta < 0:
            raise ValueError(f"beta must be non-negative, got {beta}")
        return certify_psd(self.sigma0 + np.sqrt(beta) * self.lambda0)

    def specs(self, beta, nu4):
        out = [PopulationSpec(w * self.sigma0, nu4, int(n)) for w, n in zip(self.weights, self.n[:-1])]
        out.append(PopulationSpec(self.outlier(beta), nu4, int(self.n[-1])))
        return out

    def sqrt_sigmas(self, beta):
        roots = [np.sqrt(w) * self.sqrt_sigma0 for w in self.weights]
        roots.append(psd_sqrt(self.outlier(beta)))
        return roots

    def theoretical_power(self, beta, alpha):
        c = self.p / self.n[:-1]
        if self.test == "prop":
            mu2 = float(np.sum(self.sigma0 * self.sigma0)) / self.p
            w2q = float(np.mean(c**2 * self.weights**4))
            return needle_power_prop(beta, self.p, self.q, mu2, w2q, alpha)
        return needle_power_eq(beta, self.p, self.q, float(np.mean(c**2)), alpha)


def _n_draw(n_range, size, rng):
    lo, hi = n_range
    if lo < 2 or hi < lo:
        raise ValueError(f"invalid sample-size range {n_range}")
    return rng.integers(lo, hi, size=size, endpoint=True)


def needle_basis(test, case, p, q, n_range, rng):
    """Draw the beta-free part of a needle scenario.

    ``test`` is ``"prop"`` or ``"eq"`` and ``case`` is ``"a"`` or ``"b"``.
    """
    if q < 2:
        raise ValueError(f"q must be at least 2, got {q}")
    if case == "a":
        Sigma, Lam = case_a_pair(p, rng)
    elif case == "b":
        Sigma, Lam = case_b_pair(p, rng, spectrum=test)
    else:
        raise ValueError(f"unknown case {case!r}")
    if test == "prop":
        sigma0, lambda0 = normalize_prop_basis(Sigma, Lam)
        weights = rng.uniform(*WEIGHT_RANGE, size=q - 1)
    elif test == "eq":
        sigma0, lambda0 = normalize_frob(Sigma), normalize_frob(Lam)
        weights = np.ones(q - 1)
    else:
        raise ValueError(f"unknown test {test!r}")
    n = _n_draw(n_range, q, rng)
    return NeedleBasis(test=test, sigma0=sigma0, lambda0=lambda0, weights=weights, n=n)


def needle_scenario_prop(p, q, beta, n_range, noise, rng, case="a"):
    """Specs and square roots for ``q-1`` proportional populations plus one
    outlier ``Sigma0 + sqrt(beta) Lambda0``."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    basis = needle_basis("prop", case, p, q, n_range, rng)
    return basis.specs(beta, NoiseKind.parse(noise).nu4), basis.sqrt_sigmas(beta)


def needle_scenario_eq(p, q, beta, n_range, noise, rng, case="a"):
    """Specs for ``q-1`` identical populations plus one outlier."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    basis = needle_basis("eq", case, p, q, n_range, rng)
    return basis.specs(beta, NoiseKind.parse(noise).nu4)


def kron_sample(SigmaR, SigmaC_sqrt, n, noise, rng, sqrt_r=None):
    """``n`` draws of ``SigmaR^{1/2} Z SigmaC^{1/2}``."""
    SigmaC_sqrt = np.asarray(SigmaC_sqrt, dtype=np.float64)
    if sqrt_r is None:
        sqrt_r = psd_sqrt(SigmaR)
    p, q = sqrt_r.shape[0], SigmaC_sqrt.shape[0]
    if SigmaC_sqrt.shape != (q, q):
        raise ValueError(f"column factor must be square, got {SigmaC_sqrt.shape}")
    Z = draw_noise(noise, n * p, q, rng).reshape(n, p, q)
    return TransposableSample(sqrt_r @ Z @ SigmaC_sqrt)


@dataclass
class CaseIScenario:
    """Independent columns with covariances ``w_i[(1-beta)L0 + beta L_i]``."""

    lambdas: np.ndarray  # (q+1, p, p): L0 first
    weights: np.ndarray

    @property
    def q(self):
        return len(self.weights)

    def column_covs(self, beta):
        if not 0 <= beta <= 1:
            raise ValueError(f"beta must lie in [0, 1] for Case I, got {beta}")
        L0 = self.lambdas[0]
        return [w * ((1 - beta) * L0 + beta * Li) for w, Li in zip(self.weights, self.lambdas[1:])]

    def transform(self, Z, beta):
        roots = [psd_sqrt(S) for S in self.column_covs(beta)]
        cols = [roots[i] @ Z[:, :, i].T for i in range(self.q)]
        return TransposableSample(np.stack([c.T for c in cols], axis=2))


@dataclass
class CaseIIScenario:
    """Kronecker data whose column factor gains a rank-2 off-diagonal term."""

    sigma_r: np.ndarray
    sqrt_r: np.ndarray
    weights: np.ndarray

    @property
    def q(self):
        return len(self.weights)

    def column_factor(self, beta):
        if beta < 0:
            raise ValueError(f"beta must be non-negative, got {beta}")
        A = np.diag(self.weights)
        A[0, 1] += beta
        A[1, 0] += beta
        return A

    def column_covs(self, beta):
        A = self.column_factor(beta)
        return [float(A[:, j] @ A[:, j]) * self.sigma_r for j in range(self.q)]

    def transform(self, Z, beta):
        return TransposableSample(self.sqrt_r @ Z @ self.column_factor(beta))


def case_I_scenario(p, q, beta, rng):
    """Draw a Case I scenario; ``beta`` is validated against ``[0, 1]``."""
    if not 0 <= beta <= 1:
        raise ValueError(f"beta must lie in [0, 1] for Case I, got {beta}")
    lo, hi = SPECTRA["prop"]
    lambdas = np.stack([_spectral(p, rng, lo, hi) for _ in range(q + 1)])
    return CaseIScenario(lambdas=lambdas, weights=rng.uniform(*WEIGHT_RANGE, size=q))


def case_II_scenario(p, q, beta, rng):
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    lo, hi = SPECTRA["prop"]
    sigma_r = _spectral(p, rng, lo, hi)
    return CaseIIScenario(sigma_r=sigma_r, sqrt_r=psd_sqrt(sigma_r),
                          weights=rng.uniform(*WEIGHT_RANGE, size=q))


@dataclass
class ExperimentConfig:
    p: int
    q: int
    scenario: str
    n_range: tuple = (50, 150)
    noise: NoiseKind = NoiseKind.GAUSSIAN
    beta_grid: list = field(default_factory=lambda: [0.0])
    n_reps: int = 1000
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        self.noise = NoiseKind.parse(self.noise)
        self.n_range = tuple(int(v) for v in self.n_range)
        self.beta_grid = [float(b) for b in self.beta_grid]
        if not self.beta_grid or self.beta_grid[0] != 0.0 or any(
            b2 < b1 for b1, b2 in zip(self.beta_grid, self.beta_grid[1:])
        ):
            raise ValueError("beta_grid must be sorted ascending and start at 0")
        if self.n_reps < 1:
            raise ValueError(f"n_reps must be at least 1, got {self.n_reps}")
        if self.q < 2 or self.p < 1:
            raise ValueError(f"invalid dimensions p={self.p}, q={self.q}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit non-negative integer")
        upper_quantile(self.alpha)

    @property
    def test(self):
        return self.scenario.split("_")[0]

    @property
    def case(self):
        return self.scenario.split("_")[-1]


@dataclass
class SizeResult:
    rate: float
    se: float
    rejections: int
    n_reps: int


@dataclass
class PowerCurve:
    beta: list
    empirical: list
    theoretical: list
    n_reps: int
    seed: int

    def to_dict(self):
        return {
            "beta": list(self.beta),
            "empirical": list(self.empirical),
            "theoretical": [None if np.isnan(t) else t for t in self.theoretical],
            "n_reps": self.n_reps,
            "seed": self.seed,
        }


def _needle_rep(cfg, rng):
    basis = needle_basis(cfg.test, cfg.case, cfg.p, cfg.q, cfg.n_range, rng)
    noise = [draw_noise(cfg.noise, cfg.p, int(n), rng) for n in basis.n]
    with_r12 = cfg.test == "prop"
    fixed = [
        population_moments(np.sqrt(w) * (basis.sqrt_sigma0 @ Z), with_r12=with_r12)
        for w, Z in zip(basis.weights, noise[:-1])
    ]
    run = prop_test_from_moments if with_r12 else eq_test_from_moments
    rejects, theory = [], []
    for beta in cfg.beta_grid:
        X = psd_sqrt(basis.outlier(beta)) @ noise[-1]
        rep = run(fixed + [population_moments(X, with_r12=with_r12)], cfg.alpha)
        rejects.append(rep.reject)
        theory.append(basis.theoretical_power(beta, cfg.alpha))
    return rejects, theory


def _kron_rep(cfg, rng):
    make = case_I_scenario if cfg.case == "I" else case_II_scenario
    scen = make(cfg.p, cfg.q, 0.0, rng)
    n = int(_n_draw(cfg.n_range, 1, rng)[0])
    Z = draw_noise(cfg.noise, n * cfg.p, cfg.q, rng).reshape(n, cfg.p, cfg.q)
    rejects = [kron_spec_test(scen.transform(Z, beta), cfg.alpha).reject for beta in cfg.beta_grid]
    return rejects, [float("nan")] * len(cfg.beta_grid)


def replicate(cfg, r):
    """Run replication ``r``; returns per-beta decisions and theoretical power."""
    rng = rep_rng(cfg.seed, r)
    if cfg.test == "kron":
        return _kron_rep(cfg, rng)
    return _needle_rep(cfg, rng)


def _job(args):
    cfg, r = args
    return replicate(cfg, r)


def worker_count():
    """Pool size: ``COVMANY_THREADS`` if set, else the CPU count."""
    env = os.environ.get("COVMANY_THREADS")
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cpus))
        except ValueError:
            raise ValueError(f"COVMANY_THREADS must be an integer, got {env!r}") from None
    return cpus


def _run_all(cfg):
    jobs = [(cfg, r) for r in range(cfg.n_reps)]
    workers = min(worker_count(), cfg.n_reps)
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs, chunksize=max(1, cfg.n_reps // (4 * workers))))


def run_size_experiment(cfg):
    """Empirical size at ``beta = 0`` with its binomial standard error."""
    if cfg.beta_grid != [0.0]:
        cfg = ExperimentConfig(**{**cfg.__dict__, "beta_grid": [0.0]})
    results = _run_all(cfg)
    count = int(sum(rej[0] for rej, _ in results))
    rate = count / cfg.n_reps
    return SizeResult(rate=rate, se=float(np.sqrt(rate * (1 - rate) / cfg.n_reps)),
                      rejections=count, n_reps=cfg.n_reps)


def run_power_experiment(cfg):
    """Empirical rejection rate per beta and the replication-averaged
    theoretical power (NaN for the Kronecker scenarios)."""
    results = _run_all(cfg)
    counts = np.sum([rej for rej, _ in results], axis=0)
    theory = np.mean([th for _, th in results], axis=0)
    return PowerCurve(
        beta=list(cfg.beta_grid),
        empirical=[int(c) / cfg.n_reps for c in counts],
        theoretical=[float(t) for t in theory],
        n_reps=cfg.n_reps,
        seed=cfg.seed,
    )


def default_beta_max(cfg, target=0.99):
    """Beta at which the theoretical needle power of replication 0 reaches ``target``.

    Kronecker scenarios use 1 (the Case I convex-combination limit).
    """
    if cfg.test == "kron":
        return 1.0
    basis = needle_basis(cfg.test, cfg.case, cfg.p, cfg.q, cfg.n_range, rep_rng(cfg.seed, 0))
    c = cfg.p / basis.n[:-1]
    shift = float(ndtri(target)) + upper_quantile(cfg.alpha)
    if cfg.test == "prop":
        mu2 = float(np.sum(basis.sigma0 * basis.sigma0)) / cfg.p
        scale = 2 * mu2 * np.sqrt(cfg.q * np.mean(c**2 * basis.weights**4))
    else:
        scale = 2 * np.sqrt(cfg.q * np.mean(c**2))
    return float(shift * scale / cfg.p)


def beta_grid(beta_max, beta_step=None, points=10):
    """Ascending grid from 0 to ``beta_max``; ``points`` values unless a step is given."""
    if beta_max <= 0:
        raise ValueError(f"beta_max must be positive, got {beta_max}")
    if beta_step is None:
        return [float(b) for b in np.linspace(0.0, beta_max, points)]
    if beta_step <= 0:
        raise ValueError(f"beta_step must be positive, got {beta_step}")
    k = int(np.floor(beta_max / beta_step + 1e-9))
    return [float(i * beta_step) for i in range(k + 1)]
