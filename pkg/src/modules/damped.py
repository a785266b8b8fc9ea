"""Damped dynamically iterated filters.

In each time step a DIF minimizes

    2L(x_{k-1}, x_k) = |x_{k-1} - x_{k-1|k-1}|^2_P + |y - h(x_k)|^2_{R + Omega_h} + |x_k - f(x_{k-1})|^2_{Q + Omega_f}

and one smoother pass linearized at the current iterate s is exactly the
Gauss-Newton proposal for that loss. Damping keeps the proposal direction
p = xi - s but picks the step length by backtracking on L.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, solve_triangular

from src.modules.affine_smoother import measurement_update, smoothing_step, time_update
from src.modules.dif_core import LagOneBelief, StepTrace, Variant, converged, first_pass
from src.modules.errors import DifError, DimensionError, DivergenceDetected, NonFiniteError
from src.modules.gaussian_core import GaussianDensity, chol_lower, kl_divergence, spd_solve, symmetrize, weighted_norm_sq
from src.modules.linearization import linearize, linearize_analytical

logger = logging.getLogger(__name__)

# relative slack allowed in the sufficient-decrease test
LOSS_SLACK = 1e-12


@dataclass(frozen=True)
class JointIterate:
    x_prev: np.ndarray
    x_curr: np.ndarray

    def __post_init__(self):
        x_prev = np.atleast_1d(np.asarray(self.x_prev, dtype=float))
        x_curr = np.atleast_1d(np.asarray(self.x_curr, dtype=float))
        if not (np.all(np.isfinite(x_prev)) and np.all(np.isfinite(x_curr))):
            raise NonFiniteError("joint iterate")
        object.__setattr__(self, "x_prev", x_prev)
        object.__setattr__(self, "x_curr", x_curr)

    @property
    def vector(self):
        return np.concatenate([self.x_prev, self.x_curr])

    @classmethod
    def from_vector(cls, s, n):
        s = np.asarray(s, dtype=float)
        return cls(s[:n], s[n:])

    def step(self, p, alpha):
        return JointIterate.from_vector(self.vector + alpha * np.asarray(p, dtype=float), self.x_prev.size)


@dataclass(frozen=True)
class LossWeights:
    P_prior: np.ndarray
    R_eff: np.ndarray
    Q_eff: np.ndarray
    # lower Cholesky factors, filled in on construction
    L_P: np.ndarray = field(init=False, repr=False)
    L_R: np.ndarray = field(init=False, repr=False)
    L_Q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name, label in (("P_prior", "prior covariance"), ("R_eff", "R + Omega_h"), ("Q_eff", "Q + Omega_f")):
            M = symmetrize(np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
            object.__setattr__(self, name, M)
            object.__setattr__(self, "L_" + name[0], chol_lower(M, label))

    @classmethod
    def from_linearization(cls, prior_prev, model, f_aff=None, h_aff=None):
        Omega_f = f_aff.Omega if f_aff is not None else 0.0
        Omega_h = h_aff.Omega if h_aff is not None else 0.0
        return cls(prior_prev.cov, model.R + Omega_h, model.Q + Omega_f)

    def scaled(self, c):
        return LossWeights(c * self.P_prior, c * self.R_eff, c * self.Q_eff)


@dataclass(frozen=True)
class LineSearchConfig:
    shrink: float = 0.5
    alpha_min: float = 1e-4
    armijo_c: float = 1e-4
    max_backtracks: int = 20
    # False: accept any decrease, as long as the loss does not grow
    armijo: bool = True

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")
        if not 0 < self.alpha_min <= 1:
            raise ValueError(f"alpha_min must lie in (0, 1], got {self.alpha_min}")
        if self.armijo_c < 0 or self.max_backtracks < 0:
            raise ValueError("armijo_c and max_backtracks must be nonnegative")


# ----------------------------------------------------------------------------
# Loss, residual and Gauss-Newton step
# ----------------------------------------------------------------------------


def evaluate_loss(it, y, prior_prev, model, w):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    two_l = (
        weighted_norm_sq(it.x_prev - prior_prev.mean, w.P_prior)
        + weighted_norm_sq(y - model.measurement(it.x_curr), w.R_eff)
        + weighted_norm_sq(it.x_curr - model.transition(it.x_prev), w.Q_eff)
    )
    return 0.5 * two_l


def gn_residual(it, y, prior_prev, model, w):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return np.concatenate(
        [
            solve_triangular(w.L_P, it.x_prev - prior_prev.mean, lower=True),
            solve_triangular(w.L_R, y - model.measurement(it.x_curr), lower=True),
            solve_triangular(w.L_Q, it.x_curr - model.transition(it.x_prev), lower=True),
        ]
    )


def residual_jacobian(it, model, w):
    """d r / d [x_prev, x_curr] from the model Jacobians and the Cholesky factors."""
    n, m = it.x_prev.size, model.m
    F = model.transition.jacobian(it.x_prev)
    H = model.measurement.jacobian(it.x_curr)
    J = np.zeros((n + m + n, 2 * n))
    J[:n, :n] = solve_triangular(w.L_P, np.eye(n), lower=True)
    J[n : n + m, n:] = -solve_triangular(w.L_R, H, lower=True)
    J[n + m :, :n] = -solve_triangular(w.L_Q, F, lower=True)
    J[n + m :, n:] = solve_triangular(w.L_Q, np.eye(n), lower=True)
    return J


def loss_gradient(it, y, prior_prev, model, w):
    return residual_jacobian(it, model, w).T @ gn_residual(it, y, prior_prev, model, w)


def gn_step(it, y, prior_prev, model, w):
    """p = -(J^T J)^{-1} J^T r from the normal equations."""
    J = residual_jacobian(it, model, w)
    r = gn_residual(it, y, prior_prev, model, w)
    return -spd_solve(J.T @ J, J.T @ r, "Gauss-Newton normal matrix")


def smoother_pass(it, y, prior_prev, model, statistical=False, ut=None, covs=(None, None)):
    """Single DIF pass linearized at the iterate.

    `covs` are the covariances used for statistical linearization of f and h;
    None for h means the predictive covariance of this pass.
    """
    f_cov, h_cov = covs
    if statistical:
        f_aff = linearize(model.transition, GaussianDensity(it.x_prev, prior_prev.cov if f_cov is None else f_cov), True, ut)
    else:
        f_aff = linearize_analytical(model.transition, it.x_prev)
    pred = time_update(prior_prev, f_aff, model.Q)
    if statistical:
        h_aff = linearize(model.measurement, GaussianDensity(it.x_curr, pred.cov if h_cov is None else h_cov), True, ut)
    else:
        h_aff = linearize_analytical(model.measurement, it.x_curr)
    post, _ = measurement_update(pred, y, h_aff, model.R)
    smoothed = smoothing_step(prior_prev, pred, post, f_aff, model.Q)
    return LagOneBelief(prior_prev, pred, post, smoothed), f_aff, h_aff


def gn_step_via_smoother(it, y, prior_prev, model):
    belief, _, _ = smoother_pass(it, y, prior_prev, model)
    proposal = JointIterate(belief.smoothed_prev.mean, belief.posterior.mean)
    return proposal.vector - it.vector


# ----------------------------------------------------------------------------
# Line search
# ----------------------------------------------------------------------------


def line_search(it, p, loss_fn, grad, cfg=None, loss0=None):
    """Backtracking search for alpha in (0, 1] that decreases loss_fn(it + alpha p).

    Returns (0, it) when no acceptable step is found. `loss0` is loss_fn(it), when the caller has it.
    """
    cfg = cfg or LineSearchConfig()
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("search direction")
    if not np.any(p):
        return 1.0, it
    l0 = loss_fn(it) if loss0 is None else loss0
    slope = min(float(np.dot(grad, p)), 0.0) if cfg.armijo else 0.0
    c = cfg.armijo_c if cfg.armijo else 0.0
    slack = LOSS_SLACK * max(1.0, abs(l0))
    alpha = 1.0
    for _ in range(cfg.max_backtracks + 1):
        try:
            candidate = it.step(p, alpha)
            value = loss_fn(candidate)
        except (DifError, LinAlgError, FloatingPointError):
            value = np.inf
        if np.isfinite(value) and value <= l0 + c * alpha * slope + slack:
            return alpha, candidate
        alpha *= cfg.shrink
        if alpha < cfg.alpha_min:
            break
    logger.debug("line search found no decrease from loss %.6e", l0)
    return 0.0, it


# ----------------------------------------------------------------------------
# Damped time steps
# ----------------------------------------------------------------------------


def _damped_belief(pass_belief, it):
    """Pass covariances with the damped means."""
    return LagOneBelief(
        pass_belief.prior_prev,
        pass_belief.predictive,
        pass_belief.posterior.with_mean(it.x_curr),
        pass_belief.smoothed_prev.with_mean(it.x_prev),
    )


def _inner_loop(it, y, prior_prev, model, cfg, ls, trace, covs, budget):
    """Mean-only damped iterations with the covariances in `covs` held fixed."""
    statistical = cfg.variant.statistical
    for i in range(budget):
        belief, f_aff, h_aff = smoother_pass(it, y, prior_prev, model, statistical, cfg.ut, covs)
        if not belief.is_finite():
            trace.diverged = True
            break
        proposal = JointIterate(belief.smoothed_prev.mean, belief.posterior.mean)
        w = LossWeights.from_linearization(prior_prev, model, f_aff, h_aff)

        def loss_fn(candidate):
            return evaluate_loss(candidate, y, prior_prev, model, w)

        before = loss_fn(it)
        if not trace.losses:
            trace.losses.append(before)
        p = proposal.vector - it.vector
        grad = loss_gradient(it, y, prior_prev, model, w)
        alpha, new_it = line_search(it, p, loss_fn, grad, ls, loss0=before)
        logger.debug("damped iteration %d: alpha %.4g", len(trace.alphas), alpha)
        trace.alphas.append(alpha)
        if alpha == 0.0:
            break
        trace.step_losses.append((before, loss_fn(new_it)))
        it = new_it
        trace.losses.append(trace.step_losses[-1][1])
        prev = trace.iterates[-1] if trace.iterates else None
        trace.record(_damped_belief(belief, it), f_aff, h_aff, covs if statistical else None)
        if prev is not None:
            try:
                done = converged(prev, trace.iterates[-1], cfg)
            except DivergenceDetected:
                trace.diverged = True
                break
            if done and trace.converged_at is None:
                trace.converged_at = len(trace.iterates) - 1
            if done and not cfg.fixed_iterations:
                break
    return it


def damped_dif_step(prior_prev, y, model, cfg, ls=None):
    """Line-searched DIF step (LS-DIEKF, LS-DIUKF, and the doubly iterated LS-DIPLF)."""
    ls = ls or cfg.line_search or LineSearchConfig()
    variant = cfg.variant.base
    if variant not in (Variant.DIEKF, Variant.DIUKF, Variant.DIPLF):
        raise ValueError(f"no damped dynamically iterated version of {cfg.variant.value}")
    if prior_prev.dim != model.n:
        raise DimensionError(f"prior of dimension {prior_prev.dim} for a model with {model.n} states")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    trace = StepTrace()

    # s^0: prior mean and its prediction; the first proposal is the EKF/UKF pass
    belief0, f_aff0, h_aff0 = first_pass(prior_prev, y, model, cfg)
    if not belief0.is_finite():
        raise DivergenceDetected("non-finite estimate in the first pass", iteration=0)
    it = JointIterate(prior_prev.mean, belief0.predictive.mean)
    statistical = cfg.variant.statistical

    # inner loop of the DIUKF: covariances frozen at P_{k-1|k-1} and the running predictive
    covs = (prior_prev.cov, None)
    outer_posts = []
    outer_max = cfg.outer_max if variant is Variant.DIPLF else 1
    for outer in range(outer_max):
        trace.outer_iterations = outer + 1
        it = _inner_loop(it, y, prior_prev, model, cfg, ls, trace, covs, cfg.max_iters)
        if trace.diverged or not trace.iterates:
            break
        last = trace.iterates[-1]
        if variant is not Variant.DIPLF:
            break
        outer_posts.append(last.posterior)
        if len(outer_posts) > 1:
            kl = kl_divergence(outer_posts[-2], outer_posts[-1])
            logger.debug("outer iteration %d: KL %.3e", outer, kl)
            if kl < cfg.gamma:
                break
        covs = (last.smoothed_prev.cov, last.posterior.cov)

    if not trace.iterates:
        # every proposal was rejected: the means stay at s^0
        kept = _damped_belief(belief0, it)
        trace.record(kept, f_aff0, h_aff0)
        return kept, trace

    if statistical and variant is Variant.DIUKF:
        # last iteration: refresh the covariances about the final iterate
        belief, f_aff, h_aff = smoother_pass(it, y, prior_prev, model, True, cfg.ut, (trace.iterates[-1].smoothed_prev.cov, trace.iterates[-1].posterior.cov))
        if belief.is_finite():
            trace.record(_damped_belief(belief, it), f_aff, h_aff, None)
    return trace.iterates[-1], trace


def damped_iterated_step(prior_prev, y, model, cfg, ls=None):
    """Line-searched IEKF: the transition linearization stays at its first-pass value,
    the measurement iterate x_k minimizes |x_k - x_{k|k-1}|^2_{P_{k|k-1}} + |y - h(x_k)|^2_R."""
    ls = ls or cfg.line_search or LineSearchConfig()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    trace = StepTrace()
    belief0, f_aff, h_aff0 = first_pass(prior_prev, y, model, cfg)
    if not belief0.is_finite():
        raise DivergenceDetected("non-finite estimate in the first pass", iteration=0)
    pred = belief0.predictive
    L_P = chol_lower(pred.cov, "predictive covariance")
    L_R = chol_lower(model.R, "measurement noise covariance")

    def residual(x):
        return np.concatenate([solve_triangular(L_P, x.x_curr - pred.mean, lower=True), solve_triangular(L_R, y - model.measurement(x.x_curr), lower=True)])

    def loss_fn(x):
        r = residual(x)
        return 0.5 * float(r @ r)

    def gradient(x):
        n = pred.dim
        H = model.measurement.jacobian(x.x_curr)
        J = np.vstack([solve_triangular(L_P, np.eye(n), lower=True), -solve_triangular(L_R, H, lower=True)])
        g = J.T @ residual(x)
        return np.concatenate([np.zeros(n), g])

    it = JointIterate(prior_prev.mean, pred.mean)
    trace.losses.append(loss_fn(it))
    for i in range(cfg.max_iters):
        h_aff = linearize_analytical(model.measurement, it.x_curr) if i else h_aff0
        post, _ = measurement_update(pred, y, h_aff, model.R)
        if not post.is_finite():
            trace.diverged = True
            break
        p = np.concatenate([np.zeros(pred.dim), post.mean - it.x_curr])
        before = trace.losses[-1]
        alpha, new_it = line_search(it, p, loss_fn, gradient(it), ls, loss0=before)
        trace.alphas.append(alpha)
        if alpha == 0.0:
            break
        trace.step_losses.append((before, loss_fn(new_it)))
        it = new_it
        trace.losses.append(trace.step_losses[-1][1])
        damped_post = post.with_mean(it.x_curr)
        smoothed = smoothing_step(prior_prev, pred, damped_post, f_aff, model.Q)
        prev = trace.iterates[-1] if trace.iterates else None
        trace.record(LagOneBelief(prior_prev, pred, damped_post, smoothed), f_aff, h_aff)
        if prev is not None:
            try:
                done = converged(prev, trace.iterates[-1], cfg)
            except DivergenceDetected:
                trace.diverged = True
                break
            if done and trace.converged_at is None:
                trace.converged_at = len(trace.iterates) - 1
            if done and not cfg.fixed_iterations:
                break
    if not trace.iterates:
        # every step rejected: x_k stays at the predictive mean
        kept = belief0.posterior.with_mean(it.x_curr)
        trace.record(LagOneBelief(prior_prev, pred, kept, smoothing_step(prior_prev, pred, kept, f_aff, model.Q)), f_aff, h_aff0)
    return trace.iterates[-1], trace


def damped_step(prior_prev, y, model, cfg, ls: Optional[LineSearchConfig] = None):
    if cfg.variant is Variant.LS_IEKF:
        return damped_iterated_step(prior_prev, y, model, cfg, ls)
    return damped_dif_step(prior_prev, y, model, cfg, ls)
