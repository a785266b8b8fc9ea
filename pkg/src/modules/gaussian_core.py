import logging
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, eigh, solve_triangular

from src.modules.errors import DimensionError, NonFiniteError, SingularMatrixError

logger = logging.getLogger(__name__)

# relative tolerance for "PSD before repair"
PSD_TOL = 1e-10

# switched off only by `app.py verify --inject-fault`
_symmetrize_enabled = True


def symmetrize(M):
    M = np.asarray(M, dtype=float)
    if not _symmetrize_enabled:
        return M
    return 0.5 * (M + M.T)


@contextmanager
def symmetrization_disabled():
    global _symmetrize_enabled
    _symmetrize_enabled = False
    try:
        yield
    finally:
        _symmetrize_enabled = True


def condition_estimate(M):
    try:
        return float(np.linalg.cond(M))
    except LinAlgError:
        return np.inf


def chol_lower(S, name="matrix"):
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.all(np.isfinite(S)):
        raise NonFiniteError(name)
    try:
        return cholesky(S, lower=True, check_finite=False)
    except LinAlgError as e:
        raise SingularMatrixError(name, condition_estimate(S), str(e)) from None


def spd_solve(S, B, name="matrix"):
    """Solve S X = B for SPD S through a Cholesky factorization."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.all(np.isfinite(S)):
        raise NonFiniteError(name)
    try:
        factor = cho_factor(S, lower=True, check_finite=False)
    except LinAlgError as e:
        raise SingularMatrixError(name, condition_estimate(S), str(e)) from None
    return cho_solve(factor, B, check_finite=False)


def is_psd(M, tol=PSD_TOL):
    M = np.asarray(M, dtype=float)
    if not np.array_equal(M, M.T):
        return False
    w = np.linalg.eigvalsh(M)
    return bool(w[0] >= -tol * max(w[-1], 0.0))


def repair_psd(M):
    """Symmetrize and clamp negative eigenvalues to zero.

    Positive definite inputs are returned as their symmetric part without
    passing through an eigendecomposition, so the map is idempotent.
    """
    M = symmetrize(np.atleast_2d(M))
    try:
        cholesky(M, lower=True, check_finite=False)
        return M
    except LinAlgError:
        pass
    w, V = eigh(M)
    if w[0] >= 0.0:
        return M
    clamped = (V * np.clip(w, 0.0, None)) @ V.T
    logger.debug("clamped %d negative eigenvalue(s), min %.3e", int(np.sum(w < 0)), w[0])
    return symmetrize(clamped)


@dataclass(frozen=True)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.array(self.mean, dtype=float))
        cov = np.atleast_2d(np.array(self.cov, dtype=float))
        if mean.ndim != 1 or mean.size < 1:
            raise DimensionError(f"mean must be a non-empty vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(f"cov shape {cov.shape} does not match mean of size {mean.size}")
        cov = symmetrize(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size

    @property
    def var(self):
        return np.diag(self.cov)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.cov)))

    def with_cov(self, cov):
        return GaussianDensity(self.mean, cov)

    def with_mean(self, mean):
        return GaussianDensity(mean, self.cov)

    def pdf(self, x):
        """Density at the rows of x; a 1D array is read as scalar points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            x = x.T
        L = chol_lower(self.cov, "density covariance")
        z = solve_triangular(L, (x - self.mean).T, lower=True)
        log_norm = -0.5 * self.dim * np.log(2 * np.pi) - np.sum(np.log(np.diag(L)))
        return np.exp(log_norm - 0.5 * np.sum(z**2, axis=0))


@dataclass(frozen=True)
class WeightedNorm:
    value: float

    def __post_init__(self):
        if not self.value >= 0.0:
            raise ValueError(f"weighted norm must be nonnegative, got {self.value}")


def _logdet(S, name):
    try:
        L = cholesky(S, lower=True)
        return 2.0 * np.sum(np.log(np.diag(L)))
    except LinAlgError:
        sign, logdet = np.linalg.slogdet(S)
        if sign <= 0:
            raise SingularMatrixError(name, condition_estimate(S)) from None
        return logdet


def kl_divergence(p, q):
    """KL(p || q) between two Gaussian densities."""
    if p.dim != q.dim:
        raise DimensionError(f"KL between densities of dimension {p.dim} and {q.dim}")
    Lq = chol_lower(q.cov, "covariance of q")
    d = q.mean - p.mean
    z = solve_triangular(Lq, d, lower=True)
    W = solve_triangular(Lq, p.cov, lower=True)
    trace_term = np.trace(solve_triangular(Lq, W.T, lower=True))
    logdet_q = 2.0 * np.sum(np.log(np.diag(Lq)))
    try:
        logdet_p = _logdet(p.cov, "covariance of p")
    except SingularMatrixError:
        return np.inf
    return 0.5 * (trace_term + z @ z - p.dim + logdet_q - logdet_p)


def weighted_norm_sq(v, S):
    """v^T S^{-1} v through a triangular solve."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (v.size, v.size):
        raise DimensionError(f"weight shape {S.shape} does not match residual of size {v.size}")
    L = chol_lower(S, "weight matrix")
    z = solve_triangular(L, v, lower=True)
    return WeightedNorm(float(z @ z)).value


def psd_sqrt(P, name="covariance"):
    """Square root S with S S^T = P: the Cholesky factor, or the symmetric eigen root when P is only semi-definite."""
    P = symmetrize(np.atleast_2d(P))
    if not np.all(np.isfinite(P)):
        raise NonFiniteError(name)
    try:
        return cholesky(P, lower=True)
    except LinAlgError:
        w, V = eigh(P)
        if w[0] < -PSD_TOL * max(w[-1], 0.0):
            raise SingularMatrixError(name, condition_estimate(P), "indefinite") from None
        logger.debug("Cholesky of %s failed, using eigen square root", name)
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
