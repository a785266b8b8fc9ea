"""Affine approximations (A, b, Omega) of nonlinear maps.

Analytical linearization is a first-order Taylor expansion with zero
linearization-error covariance. Statistical linearization fits the affine map
that best explains g(x) under a Gaussian density; its moments are computed
with the unscented transform.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from src.modules.errors import DimensionError, NonFiniteError, SingularMatrixError
from src.modules.gaussian_core import condition_estimate, psd_sqrt, repair_psd, spd_solve, symmetrize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AffineApproximation:
    A: np.ndarray
    b: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        Omega = np.atleast_2d(np.asarray(self.Omega, dtype=float))
        if A.shape[0] != b.size or Omega.shape != (b.size, b.size):
            raise DimensionError(f"inconsistent affine approximation: A {A.shape}, b {b.shape}, Omega {Omega.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "Omega", Omega)

    def __call__(self, x):
        return self.A @ x + self.b


@dataclass(frozen=True)
class SlMoments:
    z_bar: np.ndarray
    Psi: np.ndarray
    Phi: np.ndarray


def classical_kappa(n):
    return 3.0 - n


@dataclass(frozen=True)
class UnscentedConfig:
    kappa_rule: Callable = classical_kappa

    def kappa(self, n):
        kappa = float(self.kappa_rule(n))
        if not n + kappa > 0:
            raise ValueError(f"unscented transform needs n + kappa > 0, got n={n}, kappa={kappa}")
        return kappa

    def weights(self, n):
        kappa = self.kappa(n)
        w = np.full(2 * n + 1, 1.0 / (2.0 * (n + kappa)))
        # w0 is set so the weights sum to one in floating point
        w[0] = 1.0 - np.sum(w[1:])
        return w

    def sigma_points(self, density):
        n = density.dim
        S = psd_sqrt(density.cov, "sigma-point covariance")
        scale = np.sqrt(n + self.kappa(n))
        offsets = scale * S.T
        return np.vstack([density.mean, density.mean + offsets, density.mean - offsets])


def linearize_analytical(g, x_bar):
    x_bar = np.atleast_1d(np.asarray(x_bar, dtype=float))
    A = g.jacobian(x_bar)
    if not np.all(np.isfinite(A)):
        raise NonFiniteError(f"Jacobian of {getattr(g, 'name', 'map')}")
    gx = np.atleast_1d(g(x_bar))
    return AffineApproximation(A, gx - A @ x_bar, np.zeros((gx.size, gx.size)))


def sl_moments_unscented(g, density, cfg=None):
    cfg = cfg or UnscentedConfig()
    chi = cfg.sigma_points(density)
    w = cfg.weights(density.dim)
    Z = []
    for i, point in enumerate(chi):
        z = np.atleast_1d(g(point))
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"{getattr(g, 'name', 'map')} at sigma point", i)
        Z.append(z)
    Z = np.array(Z)
    z_bar = w @ Z
    dX = chi - density.mean
    dZ = Z - z_bar
    Psi = (w[:, None] * dX).T @ dZ
    Phi = symmetrize((w[:, None] * dZ).T @ dZ)
    return SlMoments(z_bar, Psi, Phi)


def _regularized_gain(P, Psi):
    """A^T = P^{-1} Psi, regularizing P once if it is numerically singular."""
    try:
        return spd_solve(P, Psi, "linearization covariance")
    except SingularMatrixError:
        n = P.shape[0]
        eps = 1e-12 * np.trace(P) / n
        logger.warning("regularizing singular linearization covariance (cond %.3e) by %.3e", condition_estimate(P), eps)
        return spd_solve(P + eps * np.eye(n), Psi, "regularized linearization covariance")


def linearize_statistical(g, density, cfg=None):
    moments = sl_moments_unscented(g, density, cfg)
    P = density.cov
    A = _regularized_gain(P, moments.Psi).T
    b = moments.z_bar - A @ density.mean
    Omega = repair_psd(moments.Phi - A @ P @ A.T)
    return AffineApproximation(A, b, Omega)


def linearize(g, density, statistical, cfg=None, cov: Optional[np.ndarray] = None):
    """Dispatch on the linearization kind; `cov` overrides the density covariance (frozen-covariance variants)."""
    if not statistical:
        return linearize_analytical(g, density.mean)
    if cov is not None:
        density = density.with_cov(cov)
    return linearize_statistical(g, density, cfg)
