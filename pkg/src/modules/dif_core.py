"""Dynamically iterated filters.

One time step iterates a time update, a measurement update and a one-step
smoothing step. The transition map is re-linearized about the smoothed
density of x_{k-1} and the measurement map about the current posterior of
x_k, until successive posteriors agree in KL divergence.

The classical filters are restrictions of the same loop: EKF/UKF stop after
the first pass, IEKF/IUKF/IPLF iterate only the measurement linearization.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, List, Optional

import numpy as np
from scipy.linalg import LinAlgError

from src.modules.affine_smoother import measurement_update, smoothing_step, time_update
from src.modules.errors import DifError, DimensionError, DivergenceDetected
from src.modules.gaussian_core import GaussianDensity, kl_divergence
from src.modules.linearization import UnscentedConfig, linearize

logger = logging.getLogger(__name__)

# successive posteriors further apart than this count as a blow-up
KL_BLOWUP = 1e12


class Variant(str, Enum):
    EKF = "EKF"
    UKF = "UKF"
    IEKF = "IEKF"
    IUKF = "IUKF"
    IPLF = "IPLF"
    DIEKF = "DIEKF"
    DIUKF = "DIUKF"
    DIPLF = "DIPLF"
    LS_IEKF = "LS_IEKF"
    LS_DIEKF = "LS_DIEKF"
    LS_DIUKF = "LS_DIUKF"
    LS_DIPLF = "LS_DIPLF"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown variant {name!r}; valid variants: {', '.join(v.value for v in cls)}") from None

    @property
    def base(self):
        """Undamped variant behind a damped one."""
        return Variant(self.value[3:]) if self.damped else self

    @property
    def damped(self):
        return self.value.startswith("LS_")

    @property
    def statistical(self):
        return self.base in (Variant.UKF, Variant.IUKF, Variant.IPLF, Variant.DIUKF, Variant.DIPLF)

    @property
    def frozen_cov(self):
        return self.base in (Variant.UKF, Variant.IUKF, Variant.DIUKF)

    @property
    def iterated(self):
        return self.base not in (Variant.EKF, Variant.UKF)

    @property
    def dynamic(self):
        return self.base in (Variant.DIEKF, Variant.DIUKF, Variant.DIPLF)


@dataclass(frozen=True)
class IterationConfig:
    max_iters: int = 10
    gamma: float = 1e-6
    variant: Variant = Variant.DIEKF
    ut: UnscentedConfig = field(default_factory=UnscentedConfig)
    convergence_on: str = "posterior"
    fixed_iterations: bool = False
    # damped variants only
    outer_max: int = 5
    line_search: Any = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.convergence_on not in ("posterior", "smoothed"):
            raise ValueError(f"convergence_on must be 'posterior' or 'smoothed', got {self.convergence_on!r}")
        if self.outer_max < 1:
            raise ValueError(f"outer_max must be at least 1, got {self.outer_max}")


@dataclass(frozen=True)
class LagOneBelief:
    prior_prev: GaussianDensity
    predictive: GaussianDensity
    posterior: GaussianDensity
    smoothed_prev: GaussianDensity

    def __post_init__(self):
        dims = {d.dim for d in (self.prior_prev, self.predictive, self.posterior, self.smoothed_prev)}
        if len(dims) != 1:
            raise DimensionError(f"belief densities disagree on the state dimension: {sorted(dims)}")

    def is_finite(self):
        return all(d.is_finite() for d in (self.predictive, self.posterior, self.smoothed_prev))


@dataclass
class StepTrace:
    iterates: List[LagOneBelief] = field(default_factory=list)
    f_affs: list = field(default_factory=list)
    h_affs: list = field(default_factory=list)
    converged_at: Optional[int] = None
    diverged: bool = False
    # damped variants
    alphas: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    # (before, after) of each accepted step, both under that step's weights
    step_losses: list = field(default_factory=list)
    outer_iterations: int = 0
    # covariances handed to statistical linearization, per iteration
    lin_covs: list = field(default_factory=list)

    def record(self, belief, f_aff, h_aff, lin_cov=None):
        self.iterates.append(belief)
        self.f_affs.append(f_aff)
        self.h_affs.append(h_aff)
        self.lin_covs.append(lin_cov)


@dataclass(frozen=True)
class LinearizationPolicy:
    statistical: bool
    frozen_cov: bool
    relinearize_f: bool
    relinearize_h: bool


def select_linearizer(variant, i, final=False):
    """Which maps to re-linearize at iteration i, and how."""
    variant = Variant.parse(variant)
    return LinearizationPolicy(
        statistical=variant.statistical,
        frozen_cov=variant.frozen_cov and i >= 1 and not final,
        relinearize_f=variant.dynamic and i >= 1,
        relinearize_h=variant.iterated and i >= 1,
    )


def converged(prev, curr, cfg):
    if cfg.convergence_on == "smoothed":
        kl = kl_divergence(prev.smoothed_prev, curr.smoothed_prev)
    else:
        kl = kl_divergence(prev.posterior, curr.posterior)
    logger.debug("KL between successive iterates: %.3e", kl)
    if not np.isfinite(kl) or kl > KL_BLOWUP:
        raise DivergenceDetected(f"KL between successive iterates blew up ({kl:.3e})")
    return kl < cfg.gamma


def first_pass(prior_prev, y, model, cfg):
    """Iteration 0: f about the prior, h about the resulting predictive (the EKF/UKF step)."""
    statistical = cfg.variant.statistical
    f_aff = linearize(model.transition, prior_prev, statistical, cfg.ut)
    pred = time_update(prior_prev, f_aff, model.Q)
    h_aff = linearize(model.measurement, pred, statistical, cfg.ut)
    post, _ = measurement_update(pred, y, h_aff, model.R)
    smoothed = smoothing_step(prior_prev, pred, post, f_aff, model.Q)
    return LagOneBelief(prior_prev, pred, post, smoothed), f_aff, h_aff


def iterate_pass(prev, f_aff_prev, y, model, cfg, policy):
    prior_prev = prev.prior_prev
    if policy.relinearize_f:
        f_cov = prior_prev.cov if policy.frozen_cov else None
        f_aff = linearize(model.transition, prev.smoothed_prev, policy.statistical, cfg.ut, cov=f_cov)
        pred = time_update(prior_prev, f_aff, model.Q)
    else:
        f_aff, pred = f_aff_prev, prev.predictive
    h_cov = pred.cov if policy.frozen_cov else None
    h_aff = linearize(model.measurement, prev.posterior, policy.statistical, cfg.ut, cov=h_cov)
    post, _ = measurement_update(pred, y, h_aff, model.R)
    smoothed = smoothing_step(prior_prev, pred, post, f_aff, model.Q)
    lin_cov = (f_cov if policy.relinearize_f else None, h_cov) if policy.statistical else None
    return LagOneBelief(prior_prev, pred, post, smoothed), f_aff, h_aff, lin_cov


def dif_step(prior_prev, y, model, cfg):
    """One time step of a (dynamically) iterated filter; returns the final belief and its trace."""
    if cfg.variant.damped:
        from src.modules.damped import damped_step

        return damped_step(prior_prev, y, model, cfg)
    if prior_prev.dim != model.n:
        raise DimensionError(f"prior of dimension {prior_prev.dim} for a model with {model.n} states")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    trace = StepTrace()

    belief, f_aff, h_aff = first_pass(prior_prev, y, model, cfg)
    if not belief.is_finite():
        raise DivergenceDetected("non-finite estimate in the first pass", iteration=0)
    trace.record(belief, f_aff, h_aff)
    if not cfg.variant.iterated:
        return belief, trace

    i = 1
    refresh_pending = cfg.variant.frozen_cov
    while i <= cfg.max_iters:
        # frozen-covariance variants refresh the covariances in their last iteration
        final = cfg.variant.frozen_cov and (i == cfg.max_iters or (trace.converged_at is not None and not cfg.fixed_iterations))
        policy = select_linearizer(cfg.variant, i, final=final)
        prev = trace.iterates[-1]
        try:
            belief, f_aff, h_aff, lin_cov = iterate_pass(prev, trace.f_affs[-1], y, model, cfg, policy)
        except (DifError, LinAlgError) as e:
            e.iteration = i
            raise
        if not belief.is_finite():
            logger.warning("non-finite iterate at iteration %d, keeping iteration %d", i, i - 1)
            trace.diverged = True
            break
        trace.record(belief, f_aff, h_aff, lin_cov)
        if final:
            refresh_pending = False
            break
        try:
            done = converged(prev, belief, cfg)
        except DivergenceDetected:
            logger.warning("iterates blew up at iteration %d", i)
            trace.diverged = True
            break
        if done and trace.converged_at is None:
            trace.converged_at = i
        if trace.converged_at is not None and not cfg.fixed_iterations and not refresh_pending:
            break
        i += 1

    return trace.iterates[-1], trace


def run_filter(prior0, ys, model, cfg, traces=None):
    """Filter a measurement sequence; returns one LagOneBelief per measurement."""
    ys = list(ys)
    if not ys:
        raise ValueError("run_filter needs at least one measurement")
    model.check_dims(prior0.mean)
    beliefs = []
    prior = prior0
    for k, y in enumerate(ys, start=1):
        try:
            belief, trace = dif_step(prior, y, model, cfg)
        except DivergenceDetected as e:
            raise DivergenceDetected(str(e), time_index=k, iteration=e.iteration, last_finite=beliefs) from e
        except (DifError, LinAlgError, FloatingPointError) as e:
            raise DivergenceDetected(f"{type(e).__name__}: {e}", time_index=k, iteration=getattr(e, "iteration", None), last_finite=beliefs) from e
        if traces is not None:
            traces.append(trace)
        beliefs.append(belief)
        prior = belief.posterior
    return beliefs
