"""Scores comparing predictive surfaces and parameter posteriors against the simulated truth."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

NUGGET_SD = math.sqrt(0.1)


@dataclass(frozen=True)
class SurfaceScore:
    mse: float
    mae: float
    wd: float
    n_targets: int

    def as_dict(self) -> dict:
        return {"mse": self.mse, "mae": self.mae, "wd": self.wd}


@dataclass(frozen=True)
class ParamScore:
    """Per-parameter replicate average of the posterior mean, mean interval score and coverage."""

    avg_posterior_mean: dict
    inscore: dict
    cp: dict


def _vec(name, v, n=None):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.ndim != 1:
        raise InputError(f"{name} must be one-dimensional")
    if n is not None and len(a) != n:
        raise InputError(f"{name} has length {len(a)}, expected {n}")
    return a


def surface_scores(pred_mean, pred_median, pred_sd, truth, ref_sd=NUGGET_SD) -> SurfaceScore:
    """MSE of the mean, MAE of the median and the mean 1-D Gaussian Wasserstein distance.

    The Wasserstein-2 distance between N(m1, s1^2) and N(m2, s2^2) is
    sqrt((m1 - m2)^2 + (s1 - s2)^2). ``ref_sd`` may be a scalar or per target.
    """
    y = _vec("truth", truth)
    n = len(y)
    if n == 0:
        raise InputError("no targets to score")
    m = _vec("pred_mean", pred_mean, n)
    med = _vec("pred_median", pred_median, n)
    s = _vec("pred_sd", pred_sd, n)
    r = np.broadcast_to(np.asarray(ref_sd, dtype=float), (n,))
    err = m - y
    return SurfaceScore(
        mse=float(np.mean(err**2)),
        mae=float(np.mean(np.abs(med - y))),
        wd=float(np.mean(np.sqrt(err**2 + (s - r) ** 2))),
        n_targets=n,
    )


def interval_score(lower, upper, y, alpha: float = 0.05):
    """(u - l) + 2/alpha (l - y)_+ + 2/alpha (y - u)_+; vectorised over its inputs."""
    lo, up, yy = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (lower, upper, y)))
    if np.any(lo > up):
        raise InputError("interval lower bound exceeds upper bound")
    if not 0 < alpha < 1:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    s = (up - lo) + (2 / alpha) * np.maximum(lo - yy, 0) + (2 / alpha) * np.maximum(yy - up, 0)
    return float(s) if s.ndim == 0 else s


def coverage(intervals, true_value) -> float:
    """Fraction of closed intervals [l, u] containing ``true_value``."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if len(iv) == 0:
        raise InputError("coverage needs at least one interval")
    return float(np.mean((iv[:, 0] <= true_value) & (true_value <= iv[:, 1])))


def aggregate_scenario(replicate_scores) -> dict:
    """Mean and type-7 2.5%/97.5% quantiles of each score over replicates.

    Accepts a list of :class:`SurfaceScore` or of plain ``{name: value}`` dicts.
    """
    rows = [r.as_dict() if isinstance(r, SurfaceScore) else dict(r) for r in replicate_scores]
    if not rows:
        raise InputError("no replicate scores to aggregate")
    out = {}
    for key in rows[0]:
        v = np.array([r[key] for r in rows], dtype=float)
        v = v[np.isfinite(v)]
        if len(v) == 0:
            out[key] = {"mean": math.nan, "q025": math.nan, "q975": math.nan, "n": 0}
            continue
        q025, q975 = np.quantile(v, [0.025, 0.975], method="linear")
        out[key] = {"mean": float(v.mean()), "q025": float(q025), "q975": float(q975), "n": int(len(v))}
    return out


def param_scores(summaries, truth: dict, alpha: float = 0.05) -> ParamScore:
    """Score per-replicate posterior summaries ``{name: {"mean", "q025", "q975"}}`` against ``truth``."""
    summaries = list(summaries)
    if not summaries:
        raise InputError("no replicate summaries to score")
    avg, ins, cp = {}, {}, {}
    for name, true in truth.items():
        got = [s[name] for s in summaries if name in s]
        if not got:
            continue
        lo = np.array([g["q025"] for g in got])
        hi = np.array([g["q975"] for g in got])
        avg[name] = float(np.mean([g["mean"] for g in got]))
        ins[name] = float(np.mean(interval_score(lo, hi, true, alpha)))
        cp[name] = coverage(np.column_stack([lo, hi]), true)
    return ParamScore(avg, ins, cp)
