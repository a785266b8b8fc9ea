import logging

import numpy as np

from docs.constants import filter_defaults
from src.modules.config import load_config
from src.modules.damped import JointIterate, LossWeights, evaluate_loss
from src.modules.dif_core import IterationConfig, Variant, dif_step
from src.modules.errors import DifError
from src.modules.gaussian_core import GaussianDensity
from src.modules.models import make_trig_model
from src.modules.oracles import loss_landscape
from src.modules.utils import ensure_out_dir, write_csv

logger = logging.getLogger(__name__)

LANDSCAPE_COLUMNS = ["x0", "x1", "loss"]
PATH_COLUMNS = ["iteration", "x0", "x1", "loss"]
MARGINAL_COLUMNS = ["axis", "value", "loss"]
OPTIMUM_COLUMNS = ["point", "x0", "x1", "loss"]


def example_problem(values):
    """Trig model, prior on x_{k-1} and the measurement of the true state pushed through f."""
    model = make_trig_model(values["Q"], values["R"])
    prior = GaussianDensity(values["prior_mean"], np.diag(values["prior_cov"]))
    if "y" in values:
        y = np.asarray(values["y"], dtype=float)
    else:
        y = model.measurement(model.transition(values["true_x0"]))
    return model, prior, y


def iterate_path(model, prior, y, variant, max_iters):
    """Joint iterates (x_{k-1}, x_k) of one algorithm, starting from the prior mean and its prediction."""
    w = LossWeights(prior.cov, model.R, model.Q)
    start = JointIterate(prior.mean, model.transition(prior.mean))
    path = [(start.x_prev[0], start.x_curr[0], evaluate_loss(start, y, prior, model, w))]
    cfg = IterationConfig(variant=variant, max_iters=max_iters, fixed_iterations=not Variant.parse(variant).damped)
    try:
        _, trace = dif_step(prior, y, model, cfg)
    except DifError as e:
        logger.warning("%s stopped early: %s", variant, e)
        return path
    for belief in trace.iterates:
        it = JointIterate(belief.smoothed_prev.mean, belief.posterior.mean)
        path.append((it.x_prev[0], it.x_curr[0], evaluate_loss(it, y, prior, model, w)))
    return path


def generate(values, out_dir, variants=None):
    out = ensure_out_dir(out_dir)
    model, prior, y = example_problem(values)
    grid = np.linspace(values["grid_lo"], values["grid_hi"], values["grid_points"])
    L = loss_landscape(model, prior, y, grid, grid)
    X0, X1 = np.meshgrid(grid, grid, indexing="ij")
    paths = [write_csv({"x0": X0.ravel(), "x1": X1.ravel(), "loss": L.ravel()}, out / "landscape.csv", LANDSCAPE_COLUMNS)]

    i0, i1 = np.unravel_index(np.argmin(L), L.shape)
    marginals = [{"axis": "x0", "value": v, "loss": l} for v, l in zip(grid, L[:, i1])]
    marginals += [{"axis": "x1", "value": v, "loss": l} for v, l in zip(grid, L[i0, :])]
    paths.append(write_csv(marginals, out / "marginals.csv", MARGINAL_COLUMNS))

    start = JointIterate(prior.mean, model.transition(prior.mean))
    optimum = [
        {"point": "grid_minimum", "x0": grid[i0], "x1": grid[i1], "loss": L[i0, i1]},
        {"point": "prior", "x0": start.x_prev[0], "x1": start.x_curr[0], "loss": evaluate_loss(start, y, prior, model, LossWeights(prior.cov, model.R, model.Q))},
    ]
    paths.append(write_csv(optimum, out / "optimum.csv", OPTIMUM_COLUMNS))

    for variant in variants or filter_defaults["example1d_variants"]:
        name = Variant.parse(variant).value
        path = iterate_path(model, prior, y, name, values["max_iters"])
        rows = [{"iteration": i, "x0": a, "x1": b, "loss": l} for i, (a, b, l) in enumerate(path)]
        paths.append(write_csv(rows, out / f"iterates_{name}.csv", PATH_COLUMNS))
        print(f"{name}: final loss {path[-1][2]:.6f} after {len(path) - 1} iterations (grid minimum {L[i0, i1]:.6f})")
    return paths


def run(args):
    values = load_config(args.config, args.set, "example1d")
    generate(values, args.out, args.variants)
    return 0
