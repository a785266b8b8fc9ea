import logging

import numpy as np

from src.modules.config import load_config
from src.modules.dif_core import IterationConfig, dif_step
from src.modules.gaussian_core import GaussianDensity
from src.modules.models import make_illustration_model
from src.modules.oracles import grid_kl, grid_posterior
from src.modules.utils import ensure_out_dir, write_csv

logger = logging.getLogger(__name__)

GRID_COLUMNS = ["x", "true_posterior"]
ITERATE_COLUMNS = ["iteration", "density", "mean", "var"]


def illustration_run(values):
    """DIEKF iterates on the cubic model, the grid posterior and the KL of every iterate against it."""
    model = make_illustration_model(values["a"], values["Q"], values["R"])
    prior = GaussianDensity(values["prior_mean"], np.diag(values["prior_cov"]))
    y = np.asarray(values["y"], dtype=float)
    cfg = IterationConfig(variant="DIEKF", max_iters=values["max_iters"], fixed_iterations=True)
    _, trace = dif_step(prior, y, model, cfg)
    grid = np.linspace(values["grid_lo"], values["grid_hi"], values["grid_points"])
    posterior = grid_posterior(model, prior, y, grid)
    kls = [grid_kl(posterior, grid, b.posterior) for b in trace.iterates]
    return trace, grid, posterior, kls


def generate(values, out_dir):
    out = ensure_out_dir(out_dir)
    trace, grid, posterior, kls = illustration_run(values)
    rows = []
    for i, belief in enumerate(trace.iterates):
        for role, density in (("smoothed", belief.smoothed_prev), ("predictive", belief.predictive), ("posterior", belief.posterior)):
            rows.append({"iteration": i, "density": role, "mean": density.mean[0], "var": density.cov[0, 0]})
    paths = [
        write_csv({"x": grid, "true_posterior": posterior}, out / "grid.csv", GRID_COLUMNS),
        write_csv(rows, out / "iterates.csv", ITERATE_COLUMNS),
    ]
    for i, kl in enumerate(kls):
        print(f"iteration {i}: KL(grid posterior || DIEKF posterior) = {kl:.6f}")
    return paths


def run(args):
    values = load_config(args.config, args.set, "illustration")
    generate(values, args.out)
    return 0
