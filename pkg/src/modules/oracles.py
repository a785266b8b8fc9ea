"""Independent references used to check the filters: a plain Kalman filter and
dense-grid densities for scalar models."""

import numpy as np
from scipy.integrate import trapezoid

from src.modules.errors import DimensionError

# rows of the transition density evaluated per block on the grid
GRID_CHUNK = 256


def kalman_filter(m0, P0, ys, F, u, H, c, Q, R):
    """Textbook Kalman filter on x_{k+1} = F x_k + u + w, y_k = H x_k + c + v.

    Returns posterior means and covariances of x_1..x_K and the one-lag
    smoothed means and covariances of x_0..x_{K-1}.
    """
    m, P = np.asarray(m0, dtype=float), np.asarray(P0, dtype=float)
    means, covs, sm_means, sm_covs = [], [], [], []
    for y in ys:
        m_pred = F @ m + u
        P_pred = F @ P @ F.T + Q
        S = H @ P_pred @ H.T + R
        K = np.linalg.solve(S, H @ P_pred).T
        m_post = m_pred + K @ (np.atleast_1d(y) - H @ m_pred - c)
        P_post = P_pred - K @ S @ K.T
        G = np.linalg.solve(P_pred, F @ P).T
        sm_means.append(m + G @ (m_post - m_pred))
        sm_covs.append(P + G @ (P_post - P_pred) @ G.T)
        means.append(m_post)
        covs.append(P_post)
        m, P = m_post, P_post
    return np.array(means), np.array(covs), np.array(sm_means), np.array(sm_covs)


def _normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)


def grid_posterior(model, prior, y, grid):
    """p(x_k | y_k) on `grid` for a scalar model, with x_{k-1} ~ prior integrated out on the same grid."""
    if model.n != 1 or model.m != 1:
        raise DimensionError("grid posteriors need a scalar model")
    grid = np.asarray(grid, dtype=float)
    q, r = float(model.Q[0, 0]), float(model.R[0, 0])
    prior_w = prior.pdf(grid)
    fx = model.transition(grid)
    pred = np.empty_like(grid)
    for start in range(0, grid.size, GRID_CHUNK):
        xk = grid[start : start + GRID_CHUNK, None]
        pred[start : start + GRID_CHUNK] = trapezoid(_normal_pdf(xk, fx[None, :], q) * prior_w[None, :], grid, axis=1)
    unnorm = pred * _normal_pdf(float(np.atleast_1d(y)[0]), model.measurement(grid), r)
    return unnorm / trapezoid(unnorm, grid)


def grid_kl(p, grid, density):
    """KL(p || density) for a grid density p and a scalar Gaussian."""
    q = density.pdf(grid)
    mask = p > 0
    integrand = np.zeros_like(p)
    integrand[mask] = p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], np.finfo(float).tiny)))
    return float(trapezoid(integrand, grid))


def loss_landscape(model, prior, y, x0_grid, x1_grid):
    """Lag-one loss of a scalar model with analytical weights on the x0 x x1 grid (rows follow x0)."""
    X0, X1 = np.meshgrid(x0_grid, x1_grid, indexing="ij")
    p, q, r = prior.cov[0, 0], model.Q[0, 0], model.R[0, 0]
    y = float(np.atleast_1d(y)[0])
    two_l = (X0 - prior.mean[0]) ** 2 / p + (y - model.measurement(X1)) ** 2 / r + (X1 - model.transition(X0)) ** 2 / q
    return 0.5 * two_l
