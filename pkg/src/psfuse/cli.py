"""``psfuse`` command line: simulate, fit, predict and scenario.

Exit codes: 0 success, 1 usage or input error, 2 fit finished but did not converge.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import io as pio
from .errors import PsfuseError
from .inference import Controls, exceedance_prob, fit, fit_at, predict
from .mesh import grid_centres
from .model import VARIANTS, MeshSpec, ModelSpec, Priors, assemble, normalise_variant
from .scenario import run_scenario, scenario_config
from .simulate import load_dataset, simulate_scenario, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2

log = logging.getLogger("psfuse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid_spec(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 50x50, got {text!r}")
    if nx < 1 or ny < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be positive")
    return nx, ny


def _bbox(text: str):
    try:
        v = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bbox must be x0,y0,x1,y1, got {text!r}")
    if len(v) != 4 or v[2] <= v[0] or v[3] <= v[1]:
        raise argparse.ArgumentTypeError(f"bbox must be x0,y0,x1,y1 with x1>x0 and y1>y0, got {text!r}")
    return tuple(v)


def _models(text: str):
    names = [normalise_variant(t.strip()) for t in text.split(",") if t.strip()]
    if not names:
        raise argparse.ArgumentTypeError("no model given")
    return tuple(names)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="psfuse", description="Fusion of point and areal data under preferential sampling.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate replicate datasets")
    s.add_argument("--config", help="JSON file with defaults for any option below")
    s.add_argument("--table1", type=int, choices=range(1, 7), metavar="{1..6}", help="simulation scenario id")
    s.add_argument("--rho", type=float, help="practical range (without --table1)")
    s.add_argument("--gamma", type=float, help="preferential degree (without --table1)")
    s.add_argument("--points", type=int, default=100)
    s.add_argument("--areas", type=int, default=25, choices=(0, 4, 25, 100))
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    f = sub.add_parser("fit", help="fit a model to point and/or areal data")
    f.add_argument("--config", help="JSON file with defaults for any option below")
    f.add_argument("--points", help="CSV with columns x,y,value")
    f.add_argument("--areas", help="CSV with columns area_id,value")
    f.add_argument("--geometry", help="area geometry file (grid spec or polygon lines)")
    f.add_argument("--model", type=normalise_variant, help="psmelding, melding or psgeo (default: the spec's variant)")
    f.add_argument("--spec", help="model spec JSON (variant, priors, mesh, tau_gamma)")
    f.add_argument("--priors", help="priors JSON, overrides the spec's priors")
    f.add_argument("--mesh-edge", type=float)
    f.add_argument("--mesh-file")
    f.add_argument("--bbox", type=_bbox, help="study domain x0,y0,x1,y1 (default: data extent)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)

    r = sub.add_parser("predict", help="predict from a saved fit")
    r.add_argument("--config", help="JSON file with defaults for any option below")
    r.add_argument("--fit", required=True, help="fit.json written by 'psfuse fit'")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--grid", type=_grid_spec, help="regular grid over the fit domain, e.g. 50x50")
    g.add_argument("--targets", help="CSV with columns x,y")
    r.add_argument("--threshold", type=float, help="add exceedance probabilities P(value > threshold)")
    r.add_argument("--out", required=True, help="output CSV")

    c = sub.add_parser("scenario", help="run a simulation-study cell")
    c.add_argument("--config", help="JSON file with defaults for any option below")
    c.add_argument("--table1", type=int, choices=range(1, 7), metavar="{1..6}", default=5)
    c.add_argument("--models", type=_models, default=VARIANTS)
    c.add_argument("--points", type=int, default=100)
    c.add_argument("--areas", type=int, default=25, choices=(0, 4, 25, 100))
    c.add_argument("--reps", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--mesh-edge", type=float)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--no-heatmaps", action="store_true")
    c.add_argument("--out", required=True)
    return p


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, argv) -> None:
    """Fill options not given on the command line from ``--config``; unknown keys are errors."""
    if not getattr(args, "config", None):
        return
    try:
        cfg = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise UsageError(f"{args.config}: cannot read ({exc.strerror})")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}:{exc.lineno}: invalid JSON ({exc.msg})")
    if not isinstance(cfg, dict):
        raise UsageError(f"{args.config}: config must be a JSON object")
    known = set(vars(args)) - {"config", "command", "verbose"}
    bad = sorted(k for k in cfg if k.replace("-", "_") not in known)
    if bad:
        raise UsageError(f"{args.config}: unknown key(s): {', '.join(bad)}")
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for k, v in cfg.items():
        k = k.replace("-", "_")
        if k in given:
            continue
        if k == "grid" and isinstance(v, str):
            v = _grid_spec(v)
        elif k == "bbox" and isinstance(v, str):
            v = _bbox(v)
        elif k == "models" and isinstance(v, str):
            v = _models(v)
        elif k == "model":
            v = normalise_variant(v)
        setattr(args, k, v)


def _seed(args) -> int:
    env = os.environ.get("PSFUSE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"PSFUSE_SEED must be an integer, got {env!r}")
    return int(args.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    if args.table1 is not None and (args.rho is not None or args.gamma is not None):
        raise UsageError("--rho/--gamma cannot be combined with --table1")
    kw = dict(n_points=args.points, n_areas=args.areas, n_replicates=args.reps, seed=_seed(args))
    if args.table1 is None:
        # free parameters: theta follows from sigma and rho
        kw["theta_micro"] = None
        for key, val in (("range_rho", args.rho), ("gamma", args.gamma)):
            if val is not None:
                kw[key] = val
    cfg = scenario_config(args.table1, **kw)
    out = Path(args.out)
    for k in range(args.reps):
        data = simulate_scenario(cfg, k)
        write_dataset(out / f"rep_{k}", data)
    print(f"wrote {args.reps} replicate(s) to {out}")
    return EXIT_OK


def _model_spec(args) -> ModelSpec:
    spec = ModelSpec.from_json(args.spec) if args.spec else ModelSpec()
    priors = spec.priors
    if args.priors:
        d = json.loads(Path(args.priors).read_text())
        if not isinstance(d, dict):
            raise UsageError(f"{args.priors}: priors must be a JSON object")
        priors = Priors.from_dict(d)
    mesh = spec.mesh
    if args.mesh_edge is not None or args.mesh_file is not None:
        mesh = MeshSpec(edge=args.mesh_edge if args.mesh_edge is not None else mesh.edge,
                        extension_factor=mesh.extension_factor, file=args.mesh_file)
    variant = args.model if args.model else spec.variant
    return ModelSpec(variant=variant, priors=priors, mesh=mesh)


def _load_for_fit(info: dict):
    inp = info["inputs"]
    data = load_dataset(inp.get("points"), inp.get("areas"), inp.get("geometry"), bbox=tuple(inp["bbox"]))
    spec = ModelSpec.from_dict(info["spec"])
    return assemble(spec, data)


def cmd_fit(args) -> int:
    if not args.points and not args.areas:
        raise UsageError("fit needs --points and/or --areas")
    spec = _model_spec(args)
    data = load_dataset(args.points, args.areas, args.geometry, bbox=args.bbox)
    if spec.variant == "psgeo" and data.n_areas:
        print("warning: psgeo uses point data only; areal data ignored", file=sys.stderr)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = assemble(spec, data)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    fr = fit(model, Controls(seed=_seed(args)))
    out = Path(args.out)
    info = fr.to_dict()
    absp = lambda p: str(Path(p).resolve()) if p else None
    info["inputs"] = {"points": absp(args.points), "areas": absp(args.areas),
                      "geometry": absp(args.geometry), "bbox": list(data.bbox)}
    info["spec"] = spec.to_dict()
    info["spec"].pop("tau_gamma", None)
    pio.write_json(out / "fit.json", info)
    pio.write_csv(out / "field.csv", ["node", "mean", "sd"],
                  [(i, fr.latent_mean[i], fr.latent_sd[i]) for i in range(model.m)])
    status = "converged" if fr.converged else "NOT converged"
    print(f"{spec.variant}: {status}; wrote {out / 'fit.json'} and {out / 'field.csv'}")
    return EXIT_OK if fr.converged else EXIT_NOT_CONVERGED


def cmd_predict(args) -> int:
    try:
        info = json.loads(Path(args.fit).read_text())
    except OSError as exc:
        raise UsageError(f"{args.fit}: cannot read ({exc.strerror})")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.fit}:{exc.lineno}: invalid JSON ({exc.msg})")
    for key in ("inputs", "spec", "grid"):
        if key not in info:
            raise UsageError(f"{args.fit}: missing '{key}'; was it written by 'psfuse fit'?")
    model = _load_for_fit(info)
    fr = fit_at(model, [g["zeta"] for g in info["grid"]], [g["weight"] for g in info["grid"]])
    if args.targets:
        xy = pio.read_targets_csv(args.targets)
    else:
        nx, ny = args.grid or (50, 50)
        xy = grid_centres(model.mesh.domain_bbox, nx, ny)
    mean, sd = predict(fr, model, xy)
    header = ["x", "y", "mean", "sd"]
    cols = [xy[:, 0], xy[:, 1], mean, sd]
    if args.threshold is not None:
        header.append("exc_prob")
        cols.append(exceedance_prob(fr, model, xy, args.threshold))
    pio.write_csv(args.out, header, zip(*(c.tolist() for c in cols)))
    print(f"wrote {len(xy)} predictions to {args.out}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    cfg = scenario_config(args.table1, n_points=args.points, n_areas=args.areas, n_replicates=args.reps,
                          seed=_seed(args))
    mesh = MeshSpec(edge=args.mesh_edge) if args.mesh_edge else None
    res = run_scenario(cfg, args.models, jobs=max(1, args.jobs), mesh_spec=mesh, out=args.out,
                       heatmaps=not args.no_heatmaps)
    for v in res.variants:
        n = len(res.scores(v))
        line = ", ".join(f"{m} {res.mean_score(v, m):.3f}" for m in ("mse", "mae", "wd"))
        print(f"{v}: {n}/{args.reps} replicates; mean {line}")
    if res.failures:
        print(f"{len(res.failures)} failure(s) recorded in failures.csv", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "scenario": cmd_scenario}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_config(parser, args, argv)
        return COMMANDS[args.command](args)
    except (UsageError, PsfuseError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
