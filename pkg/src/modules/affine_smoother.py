import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.modules.errors import DimensionError
from src.modules.gaussian_core import GaussianDensity, repair_psd, spd_solve, symmetrize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmootherGains:
    K: Optional[np.ndarray] = None


def _check(density, aff, noise, what):
    n = density.dim
    if aff.A.shape[1] != n:
        raise DimensionError(f"{what}: linearization expects a state of size {aff.A.shape[1]}, density has {n}")
    if noise.shape != aff.Omega.shape:
        raise DimensionError(f"{what}: noise covariance {noise.shape} does not match output size {aff.b.size}")


def time_update(prior, f_aff, Q):
    Q = np.atleast_2d(Q)
    _check(prior, f_aff, Q, "time update")
    A = f_aff.A
    mean = A @ prior.mean + f_aff.b
    cov = repair_psd(A @ prior.cov @ A.T + Q + f_aff.Omega)
    return GaussianDensity(mean, cov)


def measurement_update(pred, y, h_aff, R):
    R = np.atleast_2d(R)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    _check(pred, h_aff, R, "measurement update")
    if y.size != h_aff.b.size:
        raise DimensionError(f"measurement of size {y.size} for a model with {h_aff.b.size} outputs")
    A, P = h_aff.A, pred.cov
    S = symmetrize(A @ P @ A.T + R + h_aff.Omega)
    K = spd_solve(S, A @ P, "innovation covariance").T
    mean = pred.mean + K @ (y - A @ pred.mean - h_aff.b)
    cov = repair_psd(P - K @ A @ P)
    return GaussianDensity(mean, cov), SmootherGains(K=K)


def smoothing_gain(prior, f_aff, Q):
    A, P = f_aff.A, prior.cov
    pred_cov = symmetrize(A @ P @ A.T + np.atleast_2d(Q) + f_aff.Omega)
    G = spd_solve(pred_cov, A @ P, "predictive covariance").T
    return G, pred_cov


def smoothing_step(prior, pred, post_next, f_aff, Q):
    """One backward (Rauch-Tung-Striebel) step from k to k-1."""
    Q = np.atleast_2d(Q)
    _check(prior, f_aff, Q, "smoothing step")
    G, pred_cov = smoothing_gain(prior, f_aff, Q)
    mean = prior.mean + G @ (post_next.mean - pred.mean)
    cov = repair_psd(prior.cov + G @ (post_next.cov - pred_cov) @ G.T)
    return GaussianDensity(mean, cov)
