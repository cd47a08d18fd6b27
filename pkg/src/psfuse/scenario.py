"""Simulation-study driver: simulate -> fit each variant -> predict -> score, then aggregate."""
from __future__ import annotations

import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as pio
from .inference import Controls, fit, predict
from .metrics import NUGGET_SD, SurfaceScore, aggregate_scenario, param_scores, surface_scores
from .model import VARIANTS, MeshSpec, ModelSpec, assemble
from .simulate import ScenarioConfig, simulate_scenario

log = logging.getLogger(__name__)

SCORE_NAMES = ("mse", "mae", "wd")
PARAM_NAMES = ("tau_s", "tau_B", "sigma", "range", "theta_micro", "gamma", "mu")


@dataclass
class ReplicateResult:
    replicate: int
    scores: dict = field(default_factory=dict)  # variant -> SurfaceScore
    params: dict = field(default_factory=dict)  # variant -> {name: summary}
    failures: list = field(default_factory=list)  # (variant, message)
    truth_grid: np.ndarray | None = None
    psmelding_mean: np.ndarray | None = None


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    variants: tuple
    replicates: list

    def scores(self, variant: str) -> list[SurfaceScore]:
        return [r.scores[variant] for r in self.replicates if variant in r.scores]

    def summary(self, variant: str) -> dict:
        return aggregate_scenario(self.scores(variant))

    def mean_score(self, variant: str, metric: str) -> float:
        s = self.scores(variant)
        return float(np.mean([getattr(x, metric) for x in s])) if s else math.nan

    def param_summaries(self, variant: str) -> list[dict]:
        return [r.params[variant] for r in self.replicates if variant in r.params]

    @property
    def failures(self) -> list:
        return [(r.replicate, v, msg) for r in self.replicates for v, msg in r.failures]


def true_parameters(config: ScenarioConfig) -> dict:
    return {
        "tau_s": config.tau_s,
        "tau_B": config.tau_B,
        "sigma": config.sigma,
        "range": config.range_rho,
        "theta_micro": config.matern.theta_micro,
        "gamma": config.gamma,
        "mu": config.mu,
    }


def _posterior_params(fr) -> dict:
    out = {k: dict(v) for k, v in fr.hyper_summaries.items()}
    out.update({k: dict(v) for k, v in fr.derived_summaries.items()})
    out["mu"] = dict(fr.fixed_effect_summaries["mu"])
    return out


def run_replicate(config: ScenarioConfig, replicate: int, variants=VARIANTS, mesh_spec: MeshSpec | None = None,
                  controls: Controls | None = None, ref_sd: float = NUGGET_SD) -> ReplicateResult:
    """One replicate of the study; a failing variant is recorded rather than raised."""
    data = simulate_scenario(config, replicate)
    res = ReplicateResult(replicate, truth_grid=data.truth.grid_values)
    mesh_spec = mesh_spec or MeshSpec()
    fit_mesh = mesh_spec.build(data.bbox)
    for v in variants:
        try:
            model = assemble(ModelSpec(v, mesh=mesh_spec), data, mesh=fit_mesh)
            fr = fit(model, controls)
            mean, sd = predict(fr, model, data.truth.grid_xy)
            # predictive medians are taken equal to the means (near-symmetric mixtures)
            res.scores[v] = surface_scores(mean, mean, sd, data.truth.grid_values, ref_sd)
            res.params[v] = _posterior_params(fr)
            if not fr.converged:
                res.failures.append((v, "not converged: " + fr.diagnostics.get("optimizer_message", "")))
            if v == "psmelding":
                res.psmelding_mean = mean
        except Exception as exc:  # recorded in failures.csv, aggregation continues
            log.warning("replicate %d %s failed: %s", replicate, v, exc)
            res.failures.append((v, f"{type(exc).__name__}: {exc}"))
            log.debug("%s", traceback.format_exc())
    return res


def _run_one(args):
    return run_replicate(*args)


def run_scenario(config: ScenarioConfig, variants=VARIANTS, reps: int | None = None, jobs: int = 1,
                 mesh_spec: MeshSpec | None = None, controls: Controls | None = None,
                 ref_sd: float = NUGGET_SD, out=None, heatmaps: bool = True) -> ScenarioResult:
    """Run ``reps`` replicates (default ``config.n_replicates``); write tables when ``out`` is given."""
    reps = config.n_replicates if reps is None else reps
    variants = tuple(variants)
    tasks = [(config, r, variants, mesh_spec, controls, ref_sd) for r in range(reps)]
    if jobs > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    result = ScenarioResult(config, variants, results)
    if out is not None:
        write_scenario_outputs(out, result, heatmaps=heatmaps)
    return result


def write_scenario_outputs(out, result: ScenarioResult, heatmaps: bool = True) -> None:
    out = Path(out)
    cfg = result.config
    sid = cfg.table1_id if cfg.table1_id is not None else ""
    rows = []
    for v in result.variants:
        agg = result.summary(v) if result.scores(v) else {}
        for metric in SCORE_NAMES:
            a = agg.get(metric, {"mean": math.nan, "q025": math.nan, "q975": math.nan})
            rows.append((sid, v, cfg.n_areas, cfg.n_points, cfg.range_rho, metric, a["mean"], a["q025"], a["q975"]))
    pio.write_csv(out / "scores.csv",
                  ["scenario_id", "model", "areas", "points", "rho", "metric", "mean", "q025", "q975"], rows)

    truth = true_parameters(cfg)
    prow = []
    for v in result.variants:
        summ = result.param_summaries(v)
        if not summ:
            continue
        ps = param_scores(summ, truth)
        for name in PARAM_NAMES:
            if name not in ps.avg_posterior_mean:
                continue
            prow.append((sid, v, cfg.n_areas, cfg.n_points, name, truth[name],
                         ps.avg_posterior_mean[name], ps.inscore[name], ps.cp[name], len(summ)))
    pio.write_csv(out / "params.csv",
                  ["scenario_id", "model", "areas", "points", "parameter", "truth", "avg_posterior_mean",
                   "inscore", "cp", "n_replicates"], prow)

    pio.write_csv(out / "failures.csv", ["replicate", "model", "message"], result.failures)

    if heatmaps:
        n = cfg.prediction_grid
        for r in result.replicates:
            lo, hi = float(r.truth_grid.min()), float(r.truth_grid.max())
            pio.write_pgm(out / "heatmaps" / f"rep_{r.replicate:03d}_truth.pgm", r.truth_grid.reshape(n, n), lo, hi)
            if r.psmelding_mean is not None:
                pio.write_pgm(out / "heatmaps" / f"rep_{r.replicate:03d}_psmelding_mean.pgm",
                              r.psmelding_mean.reshape(n, n), lo, hi)


def scenario_config(table1: int | None = None, **kw) -> ScenarioConfig:
    if table1 is not None:
        return ScenarioConfig.from_table1(table1, **kw)
    return ScenarioConfig(**kw)


def with_areas(config: ScenarioConfig, n_areas: int) -> ScenarioConfig:
    return replace(config, n_areas=n_areas)
