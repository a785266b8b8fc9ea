import logging

import numpy as np

from docs.constants import filter_defaults, ratio_pairs, sweep_grids
from src.modules.bench import SweepGrid, markdown_summary, run_sweep, tdoa_scenario, tracking_scenario
from src.modules.config import load_config
from src.modules.dif_core import IterationConfig
from src.modules.utils import ensure_out_dir

logger = logging.getLogger(__name__)

SWEEPS = {
    "tracking": {"title": "Coordinated-turn tracking sweep", "second": "sigma_sq"},
    "tdoa": {"title": "TDOA localization sweep", "second": "q2"},
}


def sweep_values(name, config_path=None, overrides=None):
    values = dict(sweep_grids[name])
    values.update(filter_defaults)
    values.update(load_config(config_path, overrides, name))
    return values


def _factory(name, values):
    if name == "tracking":
        return lambda q1, sigma_sq: tracking_scenario(values, q1=q1, sigma_sq=sigma_sq)
    return lambda q1, q2: tdoa_scenario(values, q1=q1, q2=q2)


def _threshold(name, values):
    if name == "tracking":
        # diverged when the position RMSE exceeds the measurement noise standard deviation
        return lambda q1, sigma_sq: float(np.sqrt(sigma_sq))
    return lambda q1, q2: float(values["tdoa_threshold"])


def generate(name, values, out_dir, variants=None, mc_runs=None, seed=None, jobs=1):
    out = ensure_out_dir(out_dir)
    grid = SweepGrid.from_values(values, SWEEPS[name]["second"], mc_runs)
    variants = variants or values[f"{name}_variants"]
    base_cfg = IterationConfig(max_iters=values["max_iters"], gamma=values["gamma"], outer_max=values["outer_max"])
    master_seed = values["seed"] if seed is None else seed
    result = run_sweep(_factory(name, values), grid, variants, _threshold(name, values), base_cfg, master_seed, jobs)
    summary = markdown_summary(result, ratio_pairs[name], SWEEPS[name]["title"])
    with open(out / "summary.md", "w") as f:
        f.write(summary + "\n")
    paths = [result.to_csv(out / "sweep.csv"), result.to_json(out / "sweep.json"), out / "summary.md"]
    print(summary)
    return result, paths


def _run(name, args):
    values = sweep_values(name, args.config, args.set)
    generate(name, values, args.out, args.variants, args.mc_runs, args.seed, args.jobs)
    return 0


def run_tracking(args):
    return _run("tracking", args)


def run_tdoa(args):
    return _run("tdoa", args)
