import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.modules.damped import (
    JointIterate,
    LineSearchConfig,
    LossWeights,
    damped_dif_step,
    evaluate_loss,
    gn_residual,
    gn_step,
    gn_step_via_smoother,
    line_search,
    loss_gradient,
)
from src.modules.dif_core import IterationConfig, dif_step, run_filter
from src.modules.errors import NonFiniteError
from src.modules.gaussian_core import GaussianDensity
from src.modules.models import CoordinatedTurnConfig, TdoaConfig, make_affine_model, make_illustration_model, make_tdoa_model, make_tracking_model, make_trig_model, random_affine_params

UNIT = make_affine_model(1.0, 0.0, 1.0, 0.0, [[1.0]], [[1.0]])
UNIT_PRIOR = GaussianDensity(0.0, 1.0)


def trig_case():
    model = make_trig_model()
    prior = GaussianDensity(-2.9, 1.0)
    y = model.measurement(model.transition([-3.2]))
    return model, prior, y


def squared_distance_to_one(it):
    return float((it.x_curr[0] - 1.0) ** 2)


class TestLoss:
    def test_zero_at_consistent_iterate(self):
        model, prior, _ = trig_case()
        x_curr = model.transition(prior.mean)
        it = JointIterate(prior.mean, x_curr)
        w = LossWeights.from_linearization(prior, model)
        assert evaluate_loss(it, model.measurement(x_curr), prior, model, w) == 0.0
        assert not np.any(gn_residual(it, model.measurement(x_curr), prior, model, w))

    def test_scalar_example(self):
        w = LossWeights(1.0, 1.0, 1.0)
        it = JointIterate(0.0, 1.0)
        assert_allclose(evaluate_loss(it, [1.0], UNIT_PRIOR, UNIT, w), 0.5)
        assert_allclose(gn_residual(it, [1.0], UNIT_PRIOR, UNIT, w), [0.0, 0.0, 1.0])

    def test_residual_uses_the_cholesky_factor(self):
        r = gn_residual(JointIterate(1.0, 1.0), [1.0], UNIT_PRIOR, UNIT, LossWeights(4.0, 1.0, 1.0))
        assert_allclose(r, [0.5, 0.0, 0.0])

    def test_residual_norm_matches_loss_on_tdoa(self):
        model = make_tdoa_model(CoordinatedTurnConfig(), TdoaConfig())
        rng = np.random.default_rng(0)
        prior = GaussianDensity([2.0, 0.25, 2.0, 0.0, 0.3], np.diag([0.1, 0.01, 0.1, 0.01, 0.01]))
        w = LossWeights.from_linearization(prior, model)
        for _ in range(50):
            x0 = np.array([rng.uniform(0.5, 3.5), rng.normal(), rng.uniform(0.5, 3.5), rng.normal(), rng.normal(0, 0.3)])
            x1 = np.array([rng.uniform(0.5, 3.5), rng.normal(), rng.uniform(0.5, 3.5), rng.normal(), rng.normal(0, 0.3)])
            it = JointIterate(x0, x1)
            y = rng.normal(0, 0.1, size=3)
            r = gn_residual(it, y, prior, model, w)
            assert_allclose(0.5 * r @ r, evaluate_loss(it, y, prior, model, w), rtol=1e-10)

    def test_scaling_keeps_the_minimizer(self):
        model, prior, y = trig_case()
        w = LossWeights.from_linearization(prior, model)
        grid = np.linspace(-4.0, 0.0, 41)
        base = np.array([[evaluate_loss(JointIterate(a, b), y, prior, model, w) for b in grid] for a in grid])
        scaled = np.array([[evaluate_loss(JointIterate(a, b), y, prior, model, w.scaled(3.0)) for b in grid] for a in grid])
        assert np.argmin(base) == np.argmin(scaled)
        assert_allclose(scaled, base / 3.0, rtol=1e-10)

    def test_singular_weight_is_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            LossWeights(0.0, 1.0, 1.0)

    def test_gradient_matches_finite_differences(self):
        model, prior, y = trig_case()
        w = LossWeights.from_linearization(prior, model)
        rng = np.random.default_rng(1)
        eps = 1e-6
        for _ in range(20):
            s = rng.uniform(-3.5, -1.0, size=2)
            it = JointIterate.from_vector(s, 1)
            fd = np.array([(evaluate_loss(JointIterate.from_vector(s + eps * e, 1), y, prior, model, w) - evaluate_loss(JointIterate.from_vector(s - eps * e, 1), y, prior, model, w)) / (2 * eps) for e in np.eye(2)])
            grad = loss_gradient(it, y, prior, model, w)
            assert np.max(np.abs(grad - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


class TestGaussNewton:
    def test_affine_step_reaches_the_minimizer(self):
        rng = np.random.default_rng(2)
        p = random_affine_params(rng, 3, 2)
        model = make_affine_model(p.F, p.u, p.H, p.c, p.Q, p.R)
        prior = GaussianDensity(rng.normal(size=3), np.eye(3))
        y = rng.normal(size=2)
        w = LossWeights(prior.cov, model.R, model.Q)
        it = JointIterate(rng.normal(size=3), rng.normal(size=3))
        step = gn_step(it, y, prior, model, w)
        assert_allclose(step, gn_step_via_smoother(it, y, prior, model), atol=1e-9)
        optimum = it.step(step, 1.0)
        assert np.max(np.abs(gn_step(optimum, y, prior, model, w))) <= 1e-10
        assert np.max(np.abs(loss_gradient(optimum, y, prior, model, w))) <= 1e-9

    def test_zero_step_at_zero_loss(self):
        it = JointIterate(0.0, 0.0)
        assert_allclose(gn_step(it, [0.0], UNIT_PRIOR, UNIT, LossWeights(1.0, 1.0, 1.0)), [0.0, 0.0], atol=1e-15)

    def test_smoother_pass_is_the_gauss_newton_step(self):
        model, prior, y = trig_case()
        it = JointIterate(prior.mean, model.transition(prior.mean))
        w = LossWeights.from_linearization(prior, model)
        explicit = gn_step(it, y, prior, model, w)
        assert_allclose(gn_step_via_smoother(it, y, prior, model), explicit, rtol=1e-6, atol=1e-12)

    def test_equivalence_on_random_iterates(self):
        model = make_tracking_model(CoordinatedTurnConfig(), 1.0)
        prior = GaussianDensity([0.0, 10.0, 0.0, 10.0, 0.1], np.diag([1.0, 1.0, 1.0, 1.0, 0.01]))
        w = LossWeights.from_linearization(prior, model)
        rng = np.random.default_rng(3)
        for _ in range(20):
            it = JointIterate(prior.mean + rng.normal(size=5), model.transition(prior.mean) + rng.normal(size=5))
            y = rng.normal(10.0, 1.0, size=2)
            explicit = gn_step(it, y, prior, model, w)
            assert np.linalg.norm(gn_step_via_smoother(it, y, prior, model) - explicit) <= 1e-6 * max(1.0, np.linalg.norm(explicit))


class TestLineSearch:
    def test_full_step_on_exact_direction(self):
        it = JointIterate(0.0, 0.0)
        alpha, new = line_search(it, [0.0, 1.0], squared_distance_to_one, np.array([0.0, -2.0]))
        assert alpha == 1.0
        assert_allclose(new.x_curr, [1.0])

    def test_zero_direction_keeps_the_iterate(self):
        it = JointIterate(0.0, 0.0)
        alpha, new = line_search(it, [0.0, 0.0], squared_distance_to_one, np.zeros(2))
        assert alpha == 1.0
        assert new is it

    def test_overshoot_is_halved(self):
        it = JointIterate(0.0, 0.0)
        alpha, new = line_search(it, [0.0, 2.5], squared_distance_to_one, np.array([0.0, -2.0]))
        assert alpha == 0.5
        assert_allclose(new.x_curr, [1.25])

    def test_ascent_direction_is_rejected(self):
        it = JointIterate(0.0, 0.0)
        alpha, new = line_search(it, [0.0, -1.0], squared_distance_to_one, np.array([0.0, -2.0]))
        assert alpha == 0.0
        assert new is it

    def test_non_finite_direction(self):
        with pytest.raises(NonFiniteError):
            line_search(JointIterate(0.0, 0.0), [0.0, np.nan], squared_distance_to_one, np.zeros(2))

    @pytest.mark.parametrize("kwargs", [{"shrink": 1.0}, {"shrink": 0.0}, {"alpha_min": 0.0}, {"alpha_min": 2.0}, {"max_backtracks": -1}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            LineSearchConfig(**kwargs)

    def test_joint_iterate_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            JointIterate([0.0], [np.inf])


class TestDampedSteps:
    @pytest.mark.parametrize("variant", ["DIEKF", "DIUKF", "DIPLF", "IEKF"])
    def test_affine_model_matches_undamped(self, variant):
        rng = np.random.default_rng(4)
        p = random_affine_params(rng, 2, 1)
        model = make_affine_model(p.F, p.u, p.H, p.c, p.Q, p.R)
        prior = GaussianDensity(rng.normal(size=2), np.eye(2))
        ys = rng.normal(size=(5, 1))
        undamped = run_filter(prior, ys, model, IterationConfig(variant=variant))
        traces = []
        damped = run_filter(prior, ys, model, IterationConfig(variant="LS_" + variant), traces=traces)
        for a, b in zip(undamped, damped):
            assert_allclose(b.posterior.mean, a.posterior.mean, atol=1e-8)
            assert_allclose(b.posterior.cov, a.posterior.cov, atol=1e-8)
        assert all(alpha == 1.0 for t in traces for alpha in t.alphas)

    @pytest.mark.parametrize("variant", ["LS_DIEKF", "LS_IEKF"])
    def test_losses_do_not_increase(self, variant):
        model, prior, y = trig_case()
        _, trace = dif_step(prior, y, model, IterationConfig(variant=variant))
        losses = np.array(trace.losses)
        assert losses.size >= 1
        assert np.all(np.diff(losses) <= 1e-10 * max(1.0, losses[0]))

    @pytest.mark.parametrize("variant", ["LS_DIEKF", "LS_DIUKF", "LS_DIPLF", "LS_IEKF"])
    def test_every_accepted_step_lowers_its_loss(self, variant):
        # the statistical variants reweight the loss with each new Omega, so only (before, after) under one weighting compare
        model = make_trig_model()
        rng = np.random.default_rng(12)
        for _ in range(25):
            prior = GaussianDensity(rng.uniform(-4.0, 4.0), 1.0)
            y = model.measurement(model.transition([rng.uniform(-4.0, 4.0)]))
            _, trace = dif_step(prior, y, model, IterationConfig(variant=variant, outer_max=1))
            assert len(trace.step_losses) == sum(alpha > 0 for alpha in trace.alphas)
            for before, after in trace.step_losses:
                assert after <= before + 1e-12 * max(1.0, abs(before))

    def test_rejected_first_step_keeps_the_initial_iterate(self):
        model, prior, y = trig_case()
        cfg = IterationConfig(variant="LS_DIEKF", line_search=LineSearchConfig(max_backtracks=0))
        belief, trace = dif_step(prior, y, model, cfg)
        ekf, _ = dif_step(prior, y, model, IterationConfig(variant="EKF"))
        assert trace.alphas == [0.0]
        assert trace.step_losses == []
        assert_allclose(belief.posterior.mean, ekf.predictive.mean)
        assert_allclose(belief.smoothed_prev.mean, prior.mean)
        w = LossWeights(prior.cov, model.R, model.Q)
        kept = JointIterate(belief.smoothed_prev.mean, belief.posterior.mean)
        assert_allclose(evaluate_loss(kept, y, prior, model, w), trace.losses[0])

    def test_frozen_covariances_in_the_inner_loop(self):
        model = make_illustration_model()
        prior = GaussianDensity(3.0, 4.0)
        _, trace = dif_step(prior, [1.25], model, IterationConfig(variant="LS_DIUKF"))
        assert trace.alphas
        assert trace.lin_covs[-1] is None
        for f_cov, h_cov in trace.lin_covs[:-1]:
            assert np.array_equal(f_cov, prior.cov)
            assert h_cov is None

    def test_linear_measurement_iekf_matches_ekf(self):
        model = make_tracking_model(CoordinatedTurnConfig(), 1.0)
        prior = GaussianDensity([0.0, 10.0, 0.0, 10.0, 0.1], np.diag([1.0, 1.0, 1.0, 1.0, 0.01]))
        ekf, _ = dif_step(prior, [9.0, 11.0], model, IterationConfig(variant="EKF"))
        ls_iekf, trace = dif_step(prior, [9.0, 11.0], model, IterationConfig(variant="LS_IEKF"))
        assert_allclose(ls_iekf.posterior.mean, ekf.posterior.mean, atol=1e-10)
        assert_allclose(ls_iekf.smoothed_prev.mean, ekf.smoothed_prev.mean, atol=1e-10)
        assert trace.alphas[0] == 1.0

    def test_outer_loop_is_bounded(self):
        model, prior, y = trig_case()
        _, trace = dif_step(prior, y, model, IterationConfig(variant="LS_DIPLF", outer_max=3))
        assert 1 <= trace.outer_iterations <= 3

    def test_rejects_variants_without_damped_form(self):
        model, prior, y = trig_case()
        with pytest.raises(ValueError):
            damped_dif_step(prior, y, model, IterationConfig(variant="IPLF"))
