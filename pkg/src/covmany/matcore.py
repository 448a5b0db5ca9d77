"""Dense symmetric-matrix primitives.

Matrices are plain ``numpy`` arrays. ``as_symmetric`` and ``certify_psd``
validate inputs at the boundary; everything else assumes validated input.
"""

import numpy as np

SYM_TOL = 1e-12
PSD_TOL = 1e-10


def as_symmetric(M, tol=SYM_TOL):
    """Return ``M`` as a float64 array symmetrized exactly.

    Raises ``ValueError`` if ``M`` is not square or deviates from its
    transpose by more than ``tol`` (relative to its largest entry).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return (M + M.T) / 2


def certify_psd(M, tol=PSD_TOL):
    """Return the symmetric matrix ``M`` after checking it is PSD.

    Eigenvalues down to ``-tol * lambda_max`` are accepted as solver noise.
    """
    M = as_symmetric(M)
    eig = np.linalg.eigvalsh(M)
    top = max(float(eig[-1]), 0.0)
    if eig[0] < -tol * top or (top == 0.0 and eig[0] < 0.0):
        raise ValueError(f"matrix is not positive semi-definite (min eigenvalue {eig[0]:.3e})")
    return M


def _check_same_dim(A, B):
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")


def d_prop(A, B):
    """Proportionality distance ``p^-2 tr[(tr B) A - (tr A) B]^2``.

    Zero exactly when ``A`` is a scalar multiple of ``B``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    _check_same_dim(A, B)
    p = A.shape[0]
    M = np.trace(B) * A - np.trace(A) * B
    return float(np.sum(M * M.T)) / p**2


def d_zero(A, B):
    """Equality distance ``tr[(A - B)^2]``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    _check_same_dim(A, B)
    M = A - B
    return float(np.sum(M * M.T))


def psd_sqrt(Sigma):
    """Symmetric PSD square root via eigendecomposition.

    Negative eigenvalues (solver noise on a certified input) are clamped to 0.
    """
    Sigma = certify_psd(Sigma)
    w, V = np.linalg.eigh(Sigma)
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return (root + root.T) / 2


def diag_part(M):
    """Diagonal matrix carrying the diagonal of ``M``."""
    M = np.asarray(M, dtype=np.float64)
    return np.diag(np.diagonal(M).copy())


def sigma_inner(A, B, Sigma, nu4, sqrt_sigma=None):
    """Sigma-weighted inner product of two symmetric matrices.

    ``2 p^-1 tr(A~ B~) + (nu4 - 3) p^-1 tr(D(A~) D(B~))`` with
    ``A~ = Sigma^{1/2} A Sigma^{1/2}``. Pass ``sqrt_sigma`` to skip the
    square root when it is already known.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    _check_same_dim(A, B)
    if nu4 < 1:
        raise ValueError(f"nu4 must be >= 1, got {nu4}")
    if sqrt_sigma is None:
        sqrt_sigma = psd_sqrt(Sigma)
    _check_same_dim(A, sqrt_sigma)
    p = A.shape[0]
    At = sqrt_sigma @ A @ sqrt_sigma
    Bt = sqrt_sigma @ B @ sqrt_sigma
    full = np.sum(At * Bt.T) / p
    diag = np.dot(np.diagonal(At), np.diagonal(Bt)) / p
    return float(2.0 * full + (nu4 - 3.0) * diag)


def normalize_prop_basis(Sigma, Lambda):
    """Scale ``(Sigma, Lambda)`` so that ``p^-1 tr Sigma0 = 1`` and
    ``p^-1 d_prop(Sigma0, Lambda0) = 1``.

    ``Sigma`` is trace-normalized first and the normalized matrix is used in
    the distance that scales ``Lambda``.
    """
    Sigma = certify_psd(Sigma)
    Lambda = certify_psd(Lambda)
    _check_same_dim(Sigma, Lambda)
    p = Sigma.shape[0]
    tr = np.trace(Sigma)
    if tr <= 0:
        raise ValueError("Sigma must have positive trace")
    Sigma0 = Sigma * (p / tr)
    dist = d_prop(Lambda, Sigma0) / p
    if dist <= 1e-12 * np.sum(Lambda * Lambda) / p:
        raise ValueError("Lambda is proportional to Sigma")
    return Sigma0, Lambda / np.sqrt(dist)


def normalize_frob(M):
    """Scale ``M`` so that ``p^-1 tr(M^2) = 1``."""
    M = np.asarray(M, dtype=np.float64)
    p = M.shape[0]
    m2 = float(np.sum(M * M.T)) / p
    if m2 <= 0:
        raise ValueError("cannot normalize a zero matrix")
    return M / np.sqrt(m2)
