"""Deterministic oracle suites behind the `verify` command."""

import logging
import time
from dataclasses import dataclass

import numpy as np

from src.modules.damped import JointIterate, LossWeights, evaluate_loss, gn_residual, gn_step, gn_step_via_smoother, loss_gradient
from src.modules.dif_core import IterationConfig, Variant, dif_step, run_filter
from src.modules.gaussian_core import GaussianDensity, is_psd, kl_divergence
from src.modules.linearization import UnscentedConfig, linearize_statistical
from src.modules.models import CoordinatedTurnConfig, DifferentiableMap, TdoaConfig, make_affine_model, make_illustration_model, make_tdoa_model, make_tracking_model, make_trig_model, random_affine_params
from src.modules.oracles import kalman_filter

logger = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _affine_case(rng, n, m, steps=50):
    params = random_affine_params(rng, n, m)
    model = make_affine_model(params.F, params.u, params.H, params.c, params.Q, params.R)
    prior = GaussianDensity(rng.normal(size=n), np.eye(n))
    ys = rng.normal(size=(steps, m))
    return params, model, prior, ys


def check_kf_equivalence(seed=0):
    """Every variant reproduces the Kalman filter/smoother on affine models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (1, 2, 5):
        for m in (1, 3):
            p, model, prior, ys = _affine_case(rng, n, m)
            ref_m, ref_P, ref_sm, _ = kalman_filter(prior.mean, prior.cov, ys, p.F, p.u, p.H, p.c, p.Q, p.R)
            for variant in Variant:
                beliefs = run_filter(prior, ys, model, IterationConfig(variant=variant))
                means = np.array([b.posterior.mean for b in beliefs])
                covs = np.array([b.posterior.cov for b in beliefs])
                sm = np.array([b.smoothed_prev.mean for b in beliefs])
                err = max(np.max(np.abs(means - ref_m)), np.max(np.abs(covs - ref_P)), np.max(np.abs(sm - ref_sm)))
                worst = max(worst, err)
                if err > 1e-9:
                    return False, f"{variant.value} off by {err:.3e} (n={n}, m={m})"
    return True, f"max abs error {worst:.2e}"


def gn_models():
    """Nonlinear models with priors and samplers of random joint iterates."""
    ct = CoordinatedTurnConfig(T=1.0, q1=0.1, q2=0.01)
    ct_prior = GaussianDensity([0.0, 1.0, 0.0, 1.0, 0.1], np.diag([1.0, 0.5, 1.0, 0.5, 0.01]))

    def ct_state(rng):
        return np.array([rng.normal(), rng.normal(1, 0.5), rng.normal(), rng.normal(1, 0.5), rng.normal(0, 0.3)])

    def tdoa_state(rng):
        return np.array([rng.uniform(0.5, 3.5), rng.normal(0, 0.3), rng.uniform(0.5, 3.5), rng.normal(0, 0.3), rng.normal(0, 0.3)])

    return [
        ("cubic", make_illustration_model(), GaussianDensity([3.0], [[4.0]]), lambda rng: rng.normal(0, 3, size=1)),
        ("trig", make_trig_model(), GaussianDensity([-2.9], [[1.0]]), lambda rng: rng.normal(-2.9, 1.5, size=1)),
        ("tracking", make_tracking_model(ct, 1.0), ct_prior, ct_state),
        ("tdoa", make_tdoa_model(ct, TdoaConfig()), GaussianDensity([2.0, 0.2, 2.0, 0.0, 0.3], np.diag([0.1, 0.01, 0.1, 0.01, 0.01])), tdoa_state),
    ]


def _random_problem(rng, model, prior, sample):
    it = JointIterate(sample(rng), sample(rng))
    y = model.measurement(sample(rng))
    w = LossWeights(prior.cov, model.R, model.Q)
    return it, y, w


def check_gn_equivalence(seed=1, draws=200):
    """Normal-equations Gauss-Newton step equals one smoother pass minus the iterate."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, model, prior, sample in gn_models():
        for _ in range(draws):
            it, y, w = _random_problem(rng, model, prior, sample)
            p_ne = gn_step(it, y, prior, model, w)
            p_sm = gn_step_via_smoother(it, y, prior, model)
            rel = np.linalg.norm(p_ne - p_sm) / max(np.linalg.norm(p_ne), 1e-8)
            worst = max(worst, rel)
            if rel > 1e-6:
                return False, f"{name}: relative difference {rel:.3e}"
    return True, f"max relative difference {worst:.2e}"


def check_sl_exactness(seed=2):
    rng = np.random.default_rng(seed)
    for n, m in ((1, 1), (2, 3), (5, 2)):
        A, b = rng.normal(size=(m, n)), rng.normal(size=m)
        g = DifferentiableMap(lambda x, A=A, b=b: A @ x + b, name="affine")
        B = rng.normal(size=(n, n))
        density = GaussianDensity(rng.normal(size=n), B @ B.T + 0.5 * np.eye(n))
        aff = linearize_statistical(g, density)
        if not (np.allclose(aff.A, A, atol=1e-9) and np.allclose(aff.b, b, atol=1e-9)) or np.linalg.norm(aff.Omega) > 1e-9:
            return False, f"affine map not recovered (n={n}, m={m})"
    square = DifferentiableMap(lambda x: x**2, name="square")
    aff = linearize_statistical(square, GaussianDensity([0.0], [[1.0]]), UnscentedConfig(lambda n: 2.0))
    got = np.array([aff.A[0, 0], aff.b[0], aff.Omega[0, 0]])
    if not np.allclose(got, [0.0, 1.0, 2.0], rtol=0, atol=1e-10):
        return False, f"x^2 under N(0, 1) gave (A, b, Omega) = {got.tolist()}"
    return True, "affine maps and x^2 moments exact"


def check_loss_identities(seed=3, draws=100):
    """Residual norm equals the loss, and the gradient matches central differences."""
    rng = np.random.default_rng(seed)
    for name, model, prior, sample in gn_models():
        for _ in range(draws):
            it, y, w = _random_problem(rng, model, prior, sample)
            loss = evaluate_loss(it, y, prior, model, w)
            r = gn_residual(it, y, prior, model, w)
            if abs(0.5 * r @ r - loss) > 1e-12 * max(1.0, loss):
                return False, f"{name}: residual norm {0.5 * r @ r:.16e} vs loss {loss:.16e}"
            grad = loss_gradient(it, y, prior, model, w)
            s, n = it.vector, it.x_prev.size
            fd = np.empty_like(s)
            for j in range(s.size):
                h = 1e-6 * max(1.0, abs(s[j]))
                e = np.zeros_like(s)
                e[j] = h
                fd[j] = (evaluate_loss(JointIterate.from_vector(s + e, n), y, prior, model, w) - evaluate_loss(JointIterate.from_vector(s - e, n), y, prior, model, w)) / (2 * h)
            if np.max(np.abs(grad - fd)) > 1e-5 * max(1.0, np.max(np.abs(grad))):
                return False, f"{name}: gradient off by {np.max(np.abs(grad - fd)):.3e}"
    return True, "residual/loss and gradient checks hold"


def check_covariances(seed=4):
    """Emitted covariances are symmetric PSD and KL between iterates is nonnegative."""
    rng = np.random.default_rng(seed)
    for n, m in ((2, 1), (5, 3)):
        _, model, prior, ys = _affine_case(rng, n, m, steps=20)
        for variant in (Variant.EKF, Variant.DIEKF, Variant.DIUKF, Variant.DIPLF, Variant.LS_DIEKF):
            prior_k = prior
            for k, y in enumerate(ys):
                _, trace = dif_step(prior_k, y, model, IterationConfig(variant=variant))
                for i, belief in enumerate(trace.iterates):
                    for role in ("predictive", "posterior", "smoothed_prev"):
                        if not is_psd(getattr(belief, role).cov):
                            return False, f"{variant.value} {role} covariance at step {k}, iteration {i} is not symmetric PSD"
                for a, b in zip(trace.iterates, trace.iterates[1:]):
                    if kl_divergence(a.posterior, b.posterior) < -1e-12:
                        return False, f"negative KL under {variant.value} at step {k}"
                prior_k = trace.iterates[-1].posterior
    return True, "all covariances symmetric PSD"


def check_variant_structure():
    """IEKF equals EKF when h is affine; DIEKF departs from EKF on the trig model."""
    ct = CoordinatedTurnConfig()
    model = make_tracking_model(ct, 1.0)
    prior = GaussianDensity([0.0, 1.0, 0.0, 1.0, 0.2], np.diag([1.0, 0.5, 1.0, 0.5, 0.05]))
    y = np.array([1.2, 0.7])
    ekf, _ = dif_step(prior, y, model, IterationConfig(variant="EKF"))
    iekf, _ = dif_step(prior, y, model, IterationConfig(variant="IEKF"))
    if not np.allclose(ekf.posterior.mean, iekf.posterior.mean, rtol=0, atol=1e-12):
        return False, "IEKF differs from EKF with an affine measurement map"
    trig = make_trig_model()
    prior = GaussianDensity([-2.9], [[1.0]])
    y = trig.measurement(trig.transition([-3.2]))
    ekf, _ = dif_step(prior, y, trig, IterationConfig(variant="EKF"))
    diekf, _ = dif_step(prior, y, trig, IterationConfig(variant="DIEKF", max_iters=2, fixed_iterations=True))
    if np.allclose(ekf.posterior.mean, diekf.posterior.mean, rtol=0, atol=1e-6):
        return False, "DIEKF coincides with EKF on the trig model"
    return True, "IEKF = EKF under affine h, DIEKF != EKF on trig"


SUITES = [
    ("kf_equivalence", check_kf_equivalence),
    ("gn_equivalence", check_gn_equivalence),
    ("sl_exactness", check_sl_exactness),
    ("loss_identities", check_loss_identities),
    ("covariances", check_covariances),
    ("variant_structure", check_variant_structure),
]


def run_suites(names=None):
    results = []
    for name, suite in SUITES:
        if names and name not in names:
            continue
        start = time.perf_counter()
        try:
            passed, detail = suite()
        except Exception as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        elapsed = time.perf_counter() - start
        logger.info("%s: %s in %.2f s", name, "pass" if passed else "FAIL", elapsed)
        results.append(SuiteResult(name, passed, detail, elapsed))
    return results
