"""Command-line pipeline: simulate -> covariates/sample -> transform -> fit -> compare -> surface.

Every subcommand writes its outputs plus a ``manifest.json`` (inputs,
outputs, seeds, library versions, sha256 hashes) into the output directory.
Exit status is 2 on usage errors and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .eventlog import LogSchema, read_log, write_log
from .experiments import ReplicationConfig, run_replication, run_study, write_study
from .fitter import (FittedModel, comparison_tsv, drop_one_comparison, fit_model, format_comparison,
                     format_summary, summarize, summary_tsv)
from .sampling import CaseControlDesign, SamplingMode, SamplingPolicy, build_design
from .simulate import ModelName, SimulationConfig, add_harness_columns, simulate_stream
from .smooth import EffectKind, parse_spec_file
from .statistics import DecayConfig, FeatureTable, StatisticSpec
from .surfaces import predict_surface, render_heatmap
from .transform import TimeECDF, TransformManifest, apply, transform_design

log = logging.getLogger("rhem")


class UsageError(Exception):
    """Raised for invalid flag combinations discovered after parsing."""


# ------------------------------------------------------------- manifest


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, params: dict, inputs, outputs, seeds: dict) -> Path:
    out_dir = Path(out_dir)
    entry = {
        "command": command,
        "params": params,
        "seeds": seeds,
        "inputs": {str(p): sha256(Path(p)) for p in inputs},
        "outputs": {str(Path(p).relative_to(out_dir)): sha256(Path(p)) for p in sorted(outputs)},
        "versions": {"rhem": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(entry, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _params(args) -> dict:
    skip = {"func", "command"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = SimulationConfig(args.actors, args.max_size, args.n, args.feature_mean, args.feature_sd,
                           ModelName(args.model), args.seed, args.method)
    res = simulate_stream(cfg)
    out = _outdir(args)
    files = [out / "events.log", out / "truth.txt", out / "features.txt"]
    write_log(res.log, files[0])
    _write(files[1], res.truth_text())
    _write(files[2], res.features.write(res.log))
    n_bad = res.diagnostics["n_logit_beyond_limit"]
    if n_bad:
        log.warning("%d candidate log-rates exceeded |30| (not clamped)", n_bad)
    write_manifest(out, "simulate", _params(args), [], files, {"simulation": args.seed})
    return 0


def _statistics(args) -> list[StatisticSpec]:
    if not args.stat:
        raise UsageError("at least one --stat is required")
    decay = DecayConfig(args.half_life)
    return [StatisticSpec.parse(s, decay) for s in args.stat]


def _load_log(args):
    schema = LogSchema(two_mode=args.two_mode, allow_unsorted=args.allow_unsorted)
    return read_log(args.log, schema, args.registry)


def _features(args, elog) -> FeatureTable | None:
    if not args.features:
        return None
    with open(args.features, encoding="utf-8") as fh:
        return FeatureTable.read(fh, elog)


def _inputs(*paths) -> list[Path]:
    return [Path(p) for p in paths if p]


def cmd_covariates(args) -> int:
    stats = _statistics(args)
    elog = _load_log(args)
    design = build_design(elog, SamplingPolicy(), stats, _features(args, elog), controls=False)
    out = _outdir(args)
    path = out / "covariates.tsv"
    design.write(path)
    write_manifest(out, "covariates", _params(args), _inputs(args.log, args.registry, args.features), [path], {})
    return 0


def cmd_sample(args) -> int:
    stats = _statistics(args)
    mode = SamplingMode(args.mode)
    if mode is SamplingMode.ANY_SIZE_UP_TO and args.max_size is None:
        raise UsageError("--mode any needs --max-size")
    policy = SamplingPolicy(mode, args.controls, args.max_size, args.seed)
    elog = _load_log(args)
    design = build_design(elog, policy, stats, _features(args, elog))
    if args.harness:
        design = add_harness_columns(design)
    out = _outdir(args)
    path = out / "design.tsv"
    design.write(path)
    if design.skipped:
        log.warning("%d strata skipped", len(design.skipped))
    write_manifest(out, "sample", _params(args), _inputs(args.log, args.registry, args.features), [path],
                   {"sampling": args.seed})
    return 0


def cmd_transform(args) -> int:
    design = CaseControlDesign.read(args.design)
    design, manifest = transform_design(design, args.columns or None)
    out = _outdir(args)
    files = [out / "design.tsv", out / "transforms.txt"]
    design.write(files[0])
    _write(files[1], manifest.to_text())
    write_manifest(out, "transform", _params(args), _inputs(args.design), files, {})
    return 0


def _load_specs(path):
    with open(path, encoding="utf-8") as fh:
        specs = parse_spec_file(fh.read())
    if not specs:
        raise UsageError(f"no effect specifications in {path}")
    return specs


def _fit_inputs(args):
    design = CaseControlDesign.read(args.design)
    specs = _load_specs(args.spec)
    missing = [s.covariate for s in specs if s.covariate not in design.names]
    if missing:
        raise ValueError(f"covariates not in design: {', '.join(missing)}")
    transforms = {}
    if args.transforms:
        transforms = {k: v.c for k, v in TransformManifest.from_text(Path(args.transforms).read_text()).scales.items()}
    time, ecdf = design.time, None
    if args.time_ecdf:
        e = TimeECDF.fit(design.time[design.is_event])
        time, ecdf = e(design.time), e.event_times
    return design, specs, transforms, time, ecdf


def cmd_fit(args) -> int:
    design, specs, transforms, time, ecdf = _fit_inputs(args)
    model = fit_model(design, specs, time=time, tau=args.tau, criterion=args.criterion, transforms=transforms,
                      time_ecdf=ecdf)
    out = _outdir(args)
    files = [out / "model.bin", out / "summary.txt", out / "summary.tsv"]
    model.save(files[0])
    rows = summarize(model)
    head = f"loglik {model.loglik:.4f}  edf {model.edf:.2f}  AIC {model.aic:.2f}  converged {model.converged}\n"
    _write(files[1], head + format_summary(rows))
    _write(files[2], summary_tsv(rows))
    sys.stdout.write(head + format_summary(rows))
    write_manifest(out, "fit", _params(args), _inputs(args.design, args.spec, args.transforms), files, {})
    return 0


def cmd_compare(args) -> int:
    design, specs, transforms, time, ecdf = _fit_inputs(args)
    full = fit_model(design, specs, time=time, criterion=args.criterion, transforms=transforms, time_ecdf=ecdf)
    rows = drop_one_comparison(design, full, time=time)
    out = _outdir(args)
    files = [out / "comparison.txt", out / "comparison.tsv"]
    _write(files[0], format_comparison(rows))
    _write(files[1], comparison_tsv(rows))
    sys.stdout.write(format_comparison(rows))
    write_manifest(out, "compare", _params(args), _inputs(args.design, args.spec, args.transforms), files, {})
    return 0


def cmd_surface(args) -> int:
    model = FittedModel.load(args.model)
    k = model.realization.block_index(args.covariate)
    block = model.realization.blocks[k]
    t_lo, t_hi = args.t_range
    if args.x_range is not None:
        x_lo, x_hi = args.x_range
    elif block.spec.kind in (EffectKind.NLE, EffectKind.TVNLE):
        b = block.cov_basis
        x_lo, x_hi = b.lo, b.lo + b.width
    else:
        raise UsageError("--x-range is required for LE and TVE terms")
    if args.original_scale:
        c = model.transforms.get(args.covariate)
        if c is None:
            raise UsageError(f"no transform recorded for {args.covariate!r}")
        x_lo, x_hi = float(apply(x_lo, c)), float(apply(x_hi, c))
    surf = predict_surface(model, args.covariate, np.linspace(t_lo, t_hi, args.grid),
                           np.linspace(x_lo, x_hi, args.grid), centered=not args.no_center)
    out = _outdir(args)
    files = [out / "surface.tsv", out / "surface.svg"]
    _write(files[0], surf.grid_text())
    render_heatmap(surf, files[1], title=args.title or args.covariate)
    write_manifest(out, "surface", _params(args), _inputs(args.model), files, {})
    return 0


def _read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    conf = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            k, v = (p.strip() for p in line.split("=", 1))
            conf[k.replace("-", "_")] = v
    return conf


def cmd_replicate(args) -> int:
    conf = _read_config(args.config) if args.config else {}
    fields = {"model": str, "reps": int, "n_events": int, "n_actors": int, "max_size": int, "seed": int,
              "L": int, "Q": int, "grid": int}
    kw = {}
    for name, typ in fields.items():
        flag = getattr(args, name, None)
        if flag is not None:
            kw[name] = flag
        elif name in conf:
            kw[name] = typ(conf.pop(name))
    if conf:
        raise UsageError(f"unknown config keys: {', '.join(sorted(conf))}")
    if "model" in kw:
        kw["model"] = ModelName(kw["model"])
    cfg = ReplicationConfig(**kw)
    if args.threads > 1:
        with ProcessPoolExecutor(args.threads) as pool:
            reps = list(pool.map(run_replication, [cfg] * cfg.reps, range(cfg.reps)))
    else:
        reps = [run_replication(cfg, r) for r in range(cfg.reps)]
    result = run_study(cfg, reps)
    out = _outdir(args)
    files = write_study(result, out)
    metrics = out / "metrics.json"
    metrics.write_text(json.dumps(result.metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append(metrics)
    for k, v in sorted(result.metrics.items()):
        sys.stdout.write(f"{k}\t{v:.4f}\n")
    seeds = {f"rep{r}": cfg.simulation(r).seed for r in range(cfg.reps)}
    params = _params(args)
    params["resolved"] = {k: (v.value if isinstance(v, ModelName) else v) for k, v in vars(cfg).items()}
    write_manifest(out, "replicate", params, _inputs(args.config), files, seeds)
    return 0


# ---------------------------------------------------------------- parser


def _log_args(p):
    p.add_argument("--log", required=True, help="event log file")
    p.add_argument("--registry", help="published-item registry for two-mode logs")
    p.add_argument("--features", help="node feature file ('id | name | value')")
    p.add_argument("--two-mode", action="store_true")
    p.add_argument("--allow-unsorted", action="store_true")
    p.add_argument("--stat", action="append", metavar="NAME",
                   help="statistic, e.g. subrep(1,0), mean(x), prior_papers (repeatable)")
    p.add_argument("--half-life", type=float, default=None, help="exponential decay half-life")


def _fit_args(p):
    p.add_argument("--design", required=True)
    p.add_argument("--spec", required=True, help="effect spec file ('covariate = tvnle(L=10,Q=10)' lines)")
    p.add_argument("--transforms", help="transform manifest for back-transformed axes")
    p.add_argument("--criterion", choices=["aic", "cv"], default="aic")
    p.add_argument("--time-ecdf", action="store_true", help="use the event-time ECDF as the time axis")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rhem", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"rhem {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a hyperevent stream with known effects")
    p.add_argument("--model", choices=[m.value for m in ModelName], required=True)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--actors", type=int, default=30)
    p.add_argument("--max-size", type=int, default=3)
    p.add_argument("--feature-mean", type=float, default=0.0)
    p.add_argument("--feature-sd", type=float, default=1.0)
    p.add_argument("--method", choices=["exact", "thinning"], default="exact")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("covariates", help="statistics of the observed events")
    _log_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_covariates)

    p = sub.add_parser("sample", help="case-control design with sampled non-events")
    _log_args(p)
    p.add_argument("--mode", choices=[m.value for m in SamplingMode], default="matched")
    p.add_argument("--controls", type=int, default=1, help="non-events per event")
    p.add_argument("--max-size", type=int, default=None)
    p.add_argument("--harness", action="store_true",
                   help="add log_subrep1/log_subrep2/xbar/xbar_sq/size columns (simulated logs)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("transform", help="fit and apply the exponential-CDF transform")
    p.add_argument("--design", required=True)
    p.add_argument("--columns", nargs="*", help="columns to transform (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("fit", help="fit a penalized model")
    _fit_args(p)
    p.add_argument("--tau", type=float, nargs="+", help="fixed smoothing parameters (skip selection)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="drop-one covariate comparison table")
    _fit_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("surface", help="effect surface grid and heatmap from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--grid", type=int, default=30)
    p.add_argument("--t-range", type=float, nargs=2, default=(0.0, 1.0))
    p.add_argument("--x-range", type=float, nargs=2, default=None)
    p.add_argument("--original-scale", action="store_true", help="--x-range is on the untransformed scale")
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--title")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("replicate", help="replicated simulation study with consensus surfaces")
    p.add_argument("--config", help="'key = value' file; flags override")
    p.add_argument("--model", choices=[m.value for m in ModelName])
    p.add_argument("--reps", type=int)
    p.add_argument("--n", dest="n_events", type=int)
    p.add_argument("--actors", dest="n_actors", type=int)
    p.add_argument("--max-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--Q", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replicate)
    return ap


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=os.environ.get("RHEM_LOG", "WARNING").upper(), format="rhem: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"rhem: error: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001  one-line cause, no traceback
        msg = " ".join(str(exc).split()) or type(exc).__name__
        sys.stderr.write(f"rhem: error: {msg}\n")
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
