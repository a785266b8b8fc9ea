import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import block_diag

from src.modules.errors import DimensionError, MeasurementSingularityError
from src.modules.gaussian_core import chol_lower, symmetrize

logger = logging.getLogger(__name__)

# below this |T omega| the coordinated-turn terms and their derivatives use Taylor series
OMEGA_SERIES = 1e-3
# a target closer than this to a microphone has no defined range gradient
MIC_EPS = 1e-12


def finite_difference_jacobian(fn, x):
    """Central differences with step sqrt(eps) * max(1, |x_i|)."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fn(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = np.sqrt(np.finfo(float).eps) * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fn(xp)) - np.atleast_1d(fn(xm))) / (2 * h)
    return J


@dataclass(frozen=True)
class DifferentiableMap:
    fn: Callable
    jac: Optional[Callable] = None
    name: str = "map"

    def __call__(self, x):
        out = np.atleast_1d(np.asarray(self.fn(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float))
        return out

    def eval(self, x):
        return self(x)

    def jacobian(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.jac is None:
            return finite_difference_jacobian(self, x)
        return np.atleast_2d(np.asarray(self.jac(x), dtype=float))

    @property
    def has_analytical_jacobian(self):
        return self.jac is not None


@dataclass(frozen=True)
class StateSpaceModel:
    transition: DifferentiableMap
    measurement: DifferentiableMap
    Q: np.ndarray
    R: np.ndarray
    name: str = "model"
    # state components reported as position / velocity by the benchmark
    position_idx: tuple = (0,)
    velocity_idx: tuple = ()

    def __post_init__(self):
        Q = symmetrize(np.atleast_2d(np.asarray(self.Q, dtype=float)))
        R = symmetrize(np.atleast_2d(np.asarray(self.R, dtype=float)))
        if Q.shape[0] != Q.shape[1] or R.shape[0] != R.shape[1]:
            raise DimensionError(f"Q {Q.shape} and R {R.shape} must be square")
        if np.linalg.eigvalsh(Q)[0] < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ValueError(f"process noise covariance of {self.name} is not PSD")
        chol_lower(R, f"measurement noise covariance of {self.name}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.R.shape[0]

    def check_dims(self, x):
        x = np.atleast_1d(x)
        if x.size != self.n:
            raise DimensionError(f"{self.name} expects a state of size {self.n}, got {x.size}")
        fx = self.transition(x)
        hx = self.measurement(x)
        if fx.size != self.n or hx.size != self.m:
            raise DimensionError(f"{self.name}: f maps to {fx.size} (expected {self.n}), h maps to {hx.size} (expected {self.m})")


# ----------------------------------------------------------------------------
# Coordinated turn
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinatedTurnConfig:
    T: float = 1.0
    q1: float = 1e-1
    q2: float = 1e-2

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"sampling period must be positive, got {self.T}")
        if not (self.q1 > 0 and self.q2 > 0):
            raise ValueError(f"q1 and q2 must be positive, got q1={self.q1}, q2={self.q2}")


def _turn_terms(omega, T):
    """sin(T w)/w and (1 - cos(T w))/w, continuous through omega = 0."""
    if abs(T * omega) < OMEGA_SERIES:
        return T - T**3 * omega**2 / 6.0 + T**5 * omega**4 / 120.0, T**2 * omega / 2.0 - T**4 * omega**3 / 24.0
    return np.sin(T * omega) / omega, (1.0 - np.cos(T * omega)) / omega


def _turn_term_derivatives(omega, T):
    """d/dw of the two terms above."""
    tw = T * omega
    if abs(tw) < OMEGA_SERIES:
        ds = -(T**3) * omega / 3.0 + T**5 * omega**3 / 30.0
        dc = T**2 / 2.0 - T**4 * omega**2 / 8.0
        return ds, dc
    ds = (tw * np.cos(tw) - np.sin(tw)) / omega**2
    dc = (tw * np.sin(tw) - (1.0 - np.cos(tw))) / omega**2
    return ds, dc


def ct_transition(x, cfg):
    px, vx, py, vy, omega = np.asarray(x, dtype=float)
    T = cfg.T
    s, c = _turn_terms(omega, T)
    C, S = np.cos(T * omega), np.sin(T * omega)
    return np.array([px + s * vx - c * vy, C * vx - S * vy, py + c * vx + s * vy, S * vx + C * vy, omega])


def ct_jacobian(x, cfg):
    _, vx, _, vy, omega = np.asarray(x, dtype=float)
    T = cfg.T
    s, c = _turn_terms(omega, T)
    ds, dc = _turn_term_derivatives(omega, T)
    C, S = np.cos(T * omega), np.sin(T * omega)
    return np.array(
        [
            [1.0, s, 0.0, -c, ds * vx - dc * vy],
            [0.0, C, 0.0, -S, -T * S * vx - T * C * vy],
            [0.0, c, 1.0, s, dc * vx + ds * vy],
            [0.0, S, 0.0, C, T * C * vx - T * S * vy],
            [0.0, 0.0, 0.0, 0.0, 1.0],
        ]
    )


def ct_process_noise(cfg):
    T = cfg.T
    block = cfg.q1 * np.array([[T**3 / 3.0, T**2 / 2.0], [T**2 / 2.0, T]])
    return block_diag(block, block, [[cfg.q2]])


def ct_map(cfg):
    return DifferentiableMap(lambda x: ct_transition(x, cfg), lambda x: ct_jacobian(x, cfg), name="coordinated turn")


def position_map():
    H = np.array([[1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0, 0.0]])
    return DifferentiableMap(lambda x: H @ x, lambda x: H, name="position")


def make_tracking_model(cfg, sigma_sq):
    """Coordinated-turn target observed through noisy Cartesian position."""
    return StateSpaceModel(ct_map(cfg), position_map(), ct_process_noise(cfg), sigma_sq * np.eye(2), name="tracking", position_idx=(0, 2), velocity_idx=(1, 3))


# ----------------------------------------------------------------------------
# TDOA
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TdoaConfig:
    mic_positions: tuple = ((0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0))
    sigma_sq: tuple = (1e-2, 1e-2, 1e-2, 1e-2)

    def __post_init__(self):
        mics = np.asarray(self.mic_positions, dtype=float)
        if mics.shape != (4, 2):
            raise DimensionError(f"expected 4 microphone positions in 2D, got shape {mics.shape}")
        if len(self.sigma_sq) != 4 or not all(s > 0 for s in self.sigma_sq):
            raise ValueError(f"need 4 positive microphone variances, got {self.sigma_sq}")
        for i in range(4):
            for j in range(i):
                if np.array_equal(mics[i], mics[j]):
                    raise ValueError(f"microphones {j + 1} and {i + 1} coincide")

    @property
    def mics(self):
        return np.asarray(self.mic_positions, dtype=float)


def _ranges(x, mics):
    p = np.array([x[0], x[2]], dtype=float)
    d = p - mics
    r = np.sqrt(np.sum(d**2, axis=1))
    hit = np.flatnonzero(r < MIC_EPS)
    if hit.size:
        raise MeasurementSingularityError(f"target position {p.tolist()} coincides with microphone {hit[0] + 1}")
    return d, r


def tdoa_measure(x, cfg):
    _, r = _ranges(np.asarray(x, dtype=float), cfg.mics)
    return r[0] - r[1:]


def tdoa_jacobian(x, cfg):
    x = np.asarray(x, dtype=float)
    d, r = _ranges(x, cfg.mics)
    grad = d / r[:, None]
    J = np.zeros((3, x.size))
    J[:, 0] = grad[0, 0] - grad[1:, 0]
    J[:, 2] = grad[0, 1] - grad[1:, 1]
    return J


def tdoa_noise(cfg):
    s1, s2, s3, s4 = cfg.sigma_sq
    return s1 * np.ones((3, 3)) + np.diag([s2, s3, s4])


def make_tdoa_model(ct_cfg, tdoa_cfg):
    h = DifferentiableMap(lambda x: tdoa_measure(x, tdoa_cfg), lambda x: tdoa_jacobian(x, tdoa_cfg), name="tdoa")
    return StateSpaceModel(ct_map(ct_cfg), h, ct_process_noise(ct_cfg), tdoa_noise(tdoa_cfg), name="tdoa", position_idx=(0, 2), velocity_idx=(1, 3))


def figure_eight_trajectory(x0, steps, T=1.0, leg=None):
    """Noise-free coordinated-turn rollout whose turn rate flips sign every half lap.

    The speed in x0 and the turn rate |x0[4]| fix the loop radius; each leg
    sweeps a full circle, alternating direction, which traces a figure-eight.
    """
    x = np.array(x0, dtype=float)
    omega = abs(x[4]) if x[4] != 0 else 0.1
    if leg is None:
        leg = max(1, int(round(2 * np.pi / (omega * T))))
    cfg = CoordinatedTurnConfig(T=T, q1=1.0, q2=1.0)
    states = [x.copy()]
    for k in range(steps):
        x[4] = omega if (k // leg) % 2 == 0 else -omega
        x = ct_transition(x, cfg)
        states.append(x.copy())
    return np.array(states)


# ----------------------------------------------------------------------------
# One-dimensional models
# ----------------------------------------------------------------------------


def make_illustration_model(a=0.01, Q=0.1, R=0.1):
    f = DifferentiableMap(lambda x: a * x**3, lambda x: np.atleast_2d(3 * a * x**2), name="cubic")
    h = DifferentiableMap(lambda x: x, lambda x: np.eye(1), name="identity")
    return StateSpaceModel(f, h, [[Q]], [[R]], name="illustration")


def _trig_f(x):
    return np.cos(x) * np.sin(x) * x**2


def _trig_df(x):
    return np.atleast_2d(np.cos(2 * x) * x**2 + np.sin(2 * x) * x)


def make_trig_model(Q=0.1, R=1.0):
    f = DifferentiableMap(_trig_f, _trig_df, name="trig")
    h = DifferentiableMap(np.arctan, lambda x: np.atleast_2d(1.0 / (1.0 + x**2)), name="arctan")
    return StateSpaceModel(f, h, [[Q]], [[R]], name="trig")


# ----------------------------------------------------------------------------
# Affine models (oracle tests)
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineModelParams:
    F: np.ndarray
    u: np.ndarray
    H: np.ndarray
    c: np.ndarray
    Q: np.ndarray
    R: np.ndarray


def make_affine_model(F, u, H, c, Q, R, name="affine"):
    F, H = np.atleast_2d(F).astype(float), np.atleast_2d(H).astype(float)
    u, c = np.atleast_1d(u).astype(float), np.atleast_1d(c).astype(float)
    f = DifferentiableMap(lambda x: F @ x + u, lambda x: F, name="affine f")
    h = DifferentiableMap(lambda x: H @ x + c, lambda x: H, name="affine h")
    return StateSpaceModel(f, h, Q, R, name=name)


def random_affine_params(rng, n, m):
    """Random stable affine model with well-conditioned noise covariances."""
    F = rng.normal(size=(n, n))
    F *= 0.95 / max(1e-12, np.max(np.abs(np.linalg.eigvals(F))))
    H = rng.normal(size=(m, n))
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(m, m))
    Q = A @ A.T / n + 0.1 * np.eye(n)
    R = B @ B.T / m + 0.1 * np.eye(m)
    return AffineModelParams(F, rng.normal(size=n), H, rng.normal(size=m), Q, R)

