"""Monte-Carlo harness: seeded simulation, RMSE, divergence counting and noise sweeps."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError

from src.modules.dif_core import IterationConfig, Variant, run_filter
from src.modules.errors import DifError, DimensionError
from src.modules.gaussian_core import GaussianDensity, psd_sqrt
from src.modules.models import CoordinatedTurnConfig, StateSpaceModel, TdoaConfig, figure_eight_trajectory, make_tdoa_model, make_tracking_model
from src.modules.utils import read_json, write_csv, write_json

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["config_id", "q1", "q2_or_sigma_sq", "variant", "pos_rmse", "vel_rmse", "diverged", "total"]


@dataclass(frozen=True)
class Scenario:
    model: StateSpaceModel
    prior: GaussianDensity
    true_x0: np.ndarray
    steps: int
    seed: int = 0
    # fixed state sequence x_0..x_steps; when set only measurement noise is drawn
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"scenario needs at least one step, got {self.steps}")
        x0 = np.atleast_1d(np.asarray(self.true_x0, dtype=float))
        self.model.check_dims(x0)
        if self.prior.dim != self.model.n:
            raise DimensionError(f"prior of dimension {self.prior.dim} for a model with {self.model.n} states")
        object.__setattr__(self, "true_x0", x0)
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=float)
            if truth.shape != (self.steps + 1, self.model.n):
                raise DimensionError(f"truth of shape {truth.shape}, expected {(self.steps + 1, self.model.n)}")
            object.__setattr__(self, "truth", truth)


@dataclass(frozen=True)
class SweepGrid:
    q1_values: tuple
    second_values: tuple
    # which noise parameter the second axis sweeps: "sigma_sq" (tracking) or "q2" (tdoa)
    second: str = "sigma_sq"
    mc_runs: int = 20

    def __post_init__(self):
        object.__setattr__(self, "q1_values", tuple(float(v) for v in self.q1_values))
        object.__setattr__(self, "second_values", tuple(float(v) for v in self.second_values))
        if not self.q1_values or not self.second_values:
            raise ValueError("sweep grid needs at least one value per axis")
        if any(v <= 0 for v in self.q1_values + self.second_values):
            raise ValueError("sweep grid values must be positive")
        if self.second not in ("sigma_sq", "q2"):
            raise ValueError(f"second sweep axis must be 'sigma_sq' or 'q2', got {self.second!r}")
        if self.mc_runs < 1:
            raise ValueError(f"mc_runs must be at least 1, got {self.mc_runs}")

    def configs(self):
        """(config_id, q1, second) in row-major order over (q1, second)."""
        return [(i, q1, s) for i, (q1, s) in enumerate(product(self.q1_values, self.second_values))]

    @classmethod
    def from_values(cls, values, second, mc_runs=None):
        key = "sigma_sq_values" if second == "sigma_sq" else "q2_values"
        return cls(values["q1_values"], values[key], second, int(mc_runs or values["mc_runs"]))


# ----------------------------------------------------------------------------
# Simulation
# ----------------------------------------------------------------------------


def make_rng(master_seed, config_id=0, run_id=0):
    """Generator for one (config, run) cell; streams do not depend on other cells."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(config_id), int(run_id)])))


def simulate(scenario, rng=None, noise=True):
    """States x_0..x_steps and measurements y_1..y_steps."""
    model = scenario.model
    rng = rng if rng is not None else make_rng(scenario.seed)
    sq_Q = psd_sqrt(model.Q, "process noise covariance")
    sq_R = psd_sqrt(model.R, "measurement noise covariance")
    if scenario.truth is not None:
        states = scenario.truth.copy()
    else:
        states = np.empty((scenario.steps + 1, model.n))
        states[0] = scenario.true_x0
    ys = np.empty((scenario.steps, model.m))
    for k in range(1, scenario.steps + 1):
        if scenario.truth is None:
            w = sq_Q @ rng.standard_normal(model.n) if noise else 0.0
            states[k] = model.transition(states[k - 1]) + w
        v = sq_R @ rng.standard_normal(model.m) if noise else 0.0
        ys[k - 1] = model.measurement(states[k]) + v
    return states, ys


def rmse(estimates, truths, selector=None):
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    if e.shape != t.shape:
        raise DimensionError(f"estimates {e.shape} and truths {t.shape} differ in shape")
    if selector is not None:
        e, t = e[..., list(selector)], t[..., list(selector)]
    d = e - t
    sq = np.sum(d**2, axis=-1) if d.ndim > 1 else d**2
    return float(np.sqrt(np.mean(sq)))


def filter_estimates(beliefs):
    """(posterior means of x_1..x_K, one-lag smoothed means of x_0..x_{K-1})."""
    post = np.array([b.posterior.mean for b in beliefs])
    smoothed = np.array([b.smoothed_prev.mean for b in beliefs])
    return post, smoothed


# ----------------------------------------------------------------------------
# Scenario builders
# ----------------------------------------------------------------------------


def _prior(values, n):
    mean = values.get("prior_mean") or values["true_x0"]
    cov = values["prior_cov"]
    if len(mean) != n or len(cov) != n:
        raise DimensionError(f"prior_mean/prior_cov need {n} entries, got {len(mean)} and {len(cov)}")
    return GaussianDensity(mean, np.diag(cov))


def tracking_scenario(values, q1=None, sigma_sq=None):
    ct = CoordinatedTurnConfig(T=values["T"], q1=values["q1"] if q1 is None else q1, q2=values["q2"])
    model = make_tracking_model(ct, values["sigma_sq"] if sigma_sq is None else sigma_sq)
    return Scenario(model, _prior(values, 5), values["true_x0"], values["steps"], values.get("seed", 0))


def tdoa_config(values):
    mics = tuple((values[f"mic_{i}_x"], values[f"mic_{i}_y"]) for i in range(1, 5))
    sigma_sq = tuple(values[f"sigma_sq_{i}"] for i in range(1, 5))
    return TdoaConfig(mics, sigma_sq)


def tdoa_scenario(values, q1=None, q2=None):
    """Figure-eight truth inside the microphone array, filtered with a coordinated-turn model."""
    ct = CoordinatedTurnConfig(T=values["T"], q1=values["q1"] if q1 is None else q1, q2=values["q2"] if q2 is None else q2)
    model = make_tdoa_model(ct, tdoa_config(values))
    truth = figure_eight_trajectory(values["true_x0"], values["steps"], values["T"])
    return Scenario(model, _prior(values, 5), values["true_x0"], values["steps"], values.get("seed", 0), truth=truth)


# ----------------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------------


def _run_variant(scenario, states, ys, cfg, threshold):
    model = scenario.model
    truth = states[1:]
    out = {"pos_mse": np.nan, "vel_mse": np.nan, "diverged": True, "errored": False}
    try:
        beliefs = run_filter(scenario.prior, ys, model, cfg)
    except (DifError, LinAlgError, FloatingPointError, ValueError) as e:
        logger.debug("%s raised on this run: %s", cfg.variant.value, e)
        out["errored"] = True
        return out
    est, _ = filter_estimates(beliefs)
    if not np.all(np.isfinite(est)):
        return out
    pos = rmse(est, truth, model.position_idx)
    out["pos_mse"] = pos**2
    if model.velocity_idx:
        out["vel_mse"] = rmse(est, truth, model.velocity_idx) ** 2
    out["diverged"] = bool(pos > threshold)
    return out


def _run_cell(cell):
    factory, config_id, q1, second, run_id, variants, base_cfg, threshold_fn, master_seed = cell
    scenario = factory(q1, second)
    states, ys = simulate(scenario, make_rng(master_seed, config_id, run_id))
    threshold = threshold_fn(q1, second)
    return [_run_variant(scenario, states, ys, replace(base_cfg, variant=v), threshold) for v in variants]


@dataclass
class SweepResult:
    table: pd.DataFrame
    second: str = "sigma_sq"

    def rows(self, variant):
        return self.table[self.table["variant"] == Variant.parse(variant).value]

    def diverged_configs(self, variant):
        """Configs where most runs of `variant` diverged."""
        rows = self.rows(variant)
        return int(np.sum(2 * rows["diverged"] > rows["total"]))

    def to_csv(self, path):
        return write_csv(self.table, path, CSV_COLUMNS)

    def to_dict(self):
        configs = []
        for config_id, group in self.table.groupby("config_id", sort=True):
            first = group.iloc[0]
            configs.append(
                {
                    "config_id": int(config_id),
                    "q1": float(first["q1"]),
                    self.second: float(first["q2_or_sigma_sq"]),
                    "variants": {
                        row["variant"]: {
                            "pos_rmse": _json_float(row["pos_rmse"]),
                            "vel_rmse": _json_float(row["vel_rmse"]),
                            "diverged": int(row["diverged"]),
                            "errored": int(row["errored"]),
                            "total": int(row["total"]),
                        }
                        for _, row in group.iterrows()
                    },
                }
            )
        return {"second_axis": self.second, "configs": configs}

    def to_json(self, path):
        return write_json(self.to_dict(), path)

    @classmethod
    def from_dict(cls, data):
        second = data["second_axis"]
        rows = []
        for config in data["configs"]:
            for variant, cell in config["variants"].items():
                rows.append(
                    {
                        "config_id": config["config_id"],
                        "q1": config["q1"],
                        "q2_or_sigma_sq": config[second],
                        "variant": variant,
                        "pos_rmse": np.nan if cell["pos_rmse"] is None else cell["pos_rmse"],
                        "vel_rmse": np.nan if cell["vel_rmse"] is None else cell["vel_rmse"],
                        "diverged": cell["diverged"],
                        "total": cell["total"],
                        "errored": cell["errored"],
                    }
                )
        return cls(_order(pd.DataFrame(rows)), second)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(read_json(path))


def _json_float(x):
    return None if not np.isfinite(x) else float(x)


def _order(df):
    df = df[CSV_COLUMNS + ["errored"]].astype({"config_id": int, "q1": float, "q2_or_sigma_sq": float, "pos_rmse": float, "vel_rmse": float, "diverged": int, "total": int, "errored": int})
    return df.sort_values(["config_id", "variant"], kind="stable").reset_index(drop=True)


def run_sweep(factory: Callable, grid: SweepGrid, variants, threshold: Callable, base_cfg=None, master_seed=0, jobs=1):
    """Monte-Carlo sweep; `factory(q1, second)` builds the scenario of one grid config.

    Every variant filters the same simulated runs of a config. Runs that raise
    or diverge are counted, and RMSE aggregates only the remaining runs.
    """
    variants = [Variant.parse(v) for v in variants]
    if not variants:
        raise ValueError("run_sweep needs at least one variant")
    base_cfg = base_cfg or IterationConfig()
    configs = grid.configs()
    cells = [(factory, cid, q1, s, run, variants, base_cfg, threshold, master_seed) for cid, q1, s in configs for run in range(grid.mc_runs)]
    logger.info("sweep: %d configs x %d runs x %d variants", len(configs), grid.mc_runs, len(variants))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    rows = []
    for ci, (cid, q1, s) in enumerate(configs):
        cell_results = results[ci * grid.mc_runs : (ci + 1) * grid.mc_runs]
        for vi, variant in enumerate(variants):
            runs = [r[vi] for r in cell_results]
            kept = [r for r in runs if not r["diverged"]]
            pos = float(np.sqrt(np.mean([r["pos_mse"] for r in kept]))) if kept else np.nan
            vel = float(np.sqrt(np.mean([r["vel_mse"] for r in kept]))) if kept else np.nan
            rows.append(
                {
                    "config_id": cid,
                    "q1": q1,
                    "q2_or_sigma_sq": s,
                    "variant": variant.value,
                    "pos_rmse": pos,
                    "vel_rmse": vel,
                    "diverged": sum(r["diverged"] for r in runs),
                    "total": len(runs),
                    "errored": sum(r["errored"] for r in runs),
                }
            )
    return SweepResult(_order(pd.DataFrame(rows)), grid.second)


# ----------------------------------------------------------------------------
# Summary
# ----------------------------------------------------------------------------


def ratio_matrix(result, iterated, baseline, quantity="pos"):
    """Iterated RMSE over baseline RMSE per (q1, second) cell; NaN where either diverged."""
    column = f"{quantity}_rmse"
    frames = []
    for variant in (iterated, baseline):
        rows = result.rows(variant).copy()
        rows.loc[2 * rows["diverged"] > rows["total"], column] = np.nan
        frames.append(rows.set_index(["q1", "q2_or_sigma_sq"])[column])
    ratio = (frames[0] / frames[1]).rename("ratio").reset_index()
    return ratio.pivot(index="q1", columns="q2_or_sigma_sq", values="ratio")


def markdown_table(matrix, corner):
    header = "| " + corner + " | " + " | ".join(f"{c:g}" for c in matrix.columns) + " |"
    rule = "|" + "---|" * (len(matrix.columns) + 1)
    lines = [header, rule]
    for q1, row in matrix.iterrows():
        cells = ["div" if not np.isfinite(v) else f"{v:.3f}" for v in row]
        lines.append(f"| {q1:g} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def markdown_summary(result, pairs, title):
    present = set(result.table["variant"])
    sections = [f"# {title}", ""]
    n_configs = result.table["config_id"].nunique()
    counts = [f"{v} {result.diverged_configs(v)}/{n_configs}" for v in sorted(present)]
    sections.append("Diverged configurations: " + ", ".join(counts))
    sections.append("")
    for iterated, baseline in pairs:
        if iterated not in present or baseline not in present:
            continue
        for quantity, label in (("pos", "position"), ("vel", "velocity")):
            sections.append(f"## {iterated}/{baseline} {label} RMSE")
            sections.append("")
            sections.append(markdown_table(ratio_matrix(result, iterated, baseline, quantity), f"q1 \\ {result.second}"))
            sections.append("")
    return "\n".join(sections)
