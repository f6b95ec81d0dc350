"""Command-line entry point.

    shiftiv estimate --config run.json --out results/
    shiftiv rate-study --set reps=50 --set 'ns=[1000, 5000]'

Exit status: 0 success, 2 configuration error, 3 data error, 4 estimation
or fitting error.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from dataclasses import replace

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .config import SUBCOMMANDS, RunConfig, parse_override
from .dataset import ColumnMap, kfold_split, load_csv, validate
from .errors import ConfigError, DataError, EstimationError, FitError
from .estimator import cross_fit_run, fit_fold_models, records_to_json
from .inference import homogeneity_test, multiplier_bootstrap
from .nuisance import DensityConfig, LearnerConfig, NuisanceConfig
from .simlab import (KennedyDGP, count_violations, coverage_study, gen_positivity, rate_study,
                     truth_recovery, violation_regions)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4


def derived_seed(seed, *keys):
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


def _dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")


def _plain(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def _frame_records(df):
    return [{k: _plain(v) for k, v in row.items()} for row in df.to_dict(orient="records")]


def _frame_to_csv(df, path):
    df.to_csv(path, index=False, lineterminator="\n")


# Keys that change where or how fast a run happens but never its results.
EXECUTION_KEYS = ("out", "threads")


def manifest(cfg: RunConfig, outputs, seeds):
    """Everything needed to rerun: the resolved config (minus execution-only
    keys), the seeds in play and library versions."""
    config = {k: v for k, v in cfg.to_dict().items() if k not in EXECUTION_KEYS}
    return {
        "config": config,
        "seeds": seeds,
        "outputs": sorted(outputs),
        "versions": {"shiftiv": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__},
    }


def nuisance_config(cfg: RunConfig) -> NuisanceConfig:
    bw = cfg.bandwidth
    if isinstance(bw, list):
        bw = tuple(float(b) for b in bw)
    reg = LearnerConfig(tuple(cfg.learners), bw, cfg.holdout_fraction, cfg.stack_iterations, cfg.seed)
    dens = LearnerConfig(tuple(cfg.density_learners), None, cfg.holdout_fraction,
                         cfg.stack_iterations, cfg.seed)
    return NuisanceConfig(reg, DensityConfig(dens))


def _kennedy(cfg: RunConfig):
    return KennedyDGP(tuple(float(a) for a in cfg.alpha), float(cfg.psi_true),
                      float(cfg.z_noise_variance), cfg.seed)


def run_estimate(cfg: RunConfig, out):
    try:
        data = load_csv(cfg.data, ColumnMap(cfg.y, cfg.a, cfg.z, tuple(cfg.x)))
    except FileNotFoundError:
        raise DataError(f"FileNotFound: {cfg.data}") from None
    except OSError as exc:
        raise DataError(f"Unreadable: {cfg.data}: {exc}") from None
    report = validate(data)
    if not report.ok:
        raise DataError("InvalidDataset: " + report.to_json())

    ncfg = nuisance_config(cfg)
    folds = kfold_split(data.n, cfg.folds, cfg.seed)
    models = fit_fold_models(data, folds, ncfg, cfg.seed, cfg.threads)
    records, infl = cross_fit_run(
        data, cfg.folds, cfg.seed, ncfg, cfg.deltas, cfg.support, (cfg.clip_eps, cfg.clip_max),
        cfg.weak_threshold, cfg.level, cfg.plugin_bootstrap_b, cfg.threads, models=models)

    boot_seed = derived_seed(cfg.seed, 104729)
    band = multiplier_bootstrap(infl, [r.psi_hat for r in records["if"]], cfg.bootstrap_b,
                                boot_seed, cfg.level)
    homog = homogeneity_test(band)
    records["if"] = [replace(r, ci_uniform=(float(lo), float(hi)))
                     for r, lo, hi in zip(records["if"], band.lo, band.hi)]

    with open(os.path.join(out, "results.json"), "w", encoding="utf-8") as fh:
        fh.write(records_to_json(records, uniform_band=band.to_dict(), homogeneity=homog.to_dict()))
        fh.write("\n")
    band.to_csv(os.path.join(out, "bands.csv"))
    infl.to_csv(os.path.join(out, "influence.csv"))
    diagnostics = {
        "n": data.n,
        "fold_sizes": [int(len(folds.indices(j))) for j in range(folds.k)],
        "clip_events": {str(r.delta): r.n_clipped for r in records["if"]},
        "complier_fraction": {str(r.delta): r.complier_fraction for r in records["if"]},
        "flags": {kind: {str(r.delta): list(r.flags) for r in recs if r.flags}
                  for kind, recs in records.items()},
        "weak_threshold": cfg.weak_threshold,
        "learners": [{"mu": m.mu.learner_descriptor, "lambda": m.lam.learner_descriptor,
                      "pi": m.pi.learner_descriptor} for m in models],
        "validation": report.to_dict(),
    }
    _dump(diagnostics, os.path.join(out, "diagnostics.json"))
    outputs = ["results.json", "bands.csv", "influence.csv", "diagnostics.json"]
    return outputs, {"master": cfg.seed, "bootstrap": boot_seed}


def run_simulate(cfg: RunConfig, out):
    df = truth_recovery(cfg.n, cfg.reps, cfg.deltas, cfg.seed, _kennedy(cfg), cfg.threads)
    _frame_to_csv(df, os.path.join(out, "replicates.csv"))
    summary = []
    for d, g in df.groupby("delta", sort=True):
        summary.append({"delta": float(d), "mean_psi_hat": float(g.psi_hat.mean()),
                        "mean_bias": float(g.psi_hat.mean() - cfg.psi_true),
                        "emp_sd": float(g.psi_hat.std(ddof=1)) if len(g) > 1 else None,
                        "mean_se": float(g.se.mean())})
    _dump({"psi_true": cfg.psi_true, "n": cfg.n, "reps": cfg.reps, "cells": summary},
          os.path.join(out, "simulate.json"))
    return ["replicates.csv", "simulate.json"], {"master": cfg.seed}


def run_rate_study(cfg: RunConfig, out):
    df = rate_study(cfg.ns, cfg.ks, cfg.deltas, cfg.reps, cfg.seed, _kennedy(cfg), cfg.pi_mode,
                    cfg.threads)
    _frame_to_csv(df, os.path.join(out, "rate_study.csv"))
    _dump(_frame_records(df), os.path.join(out, "rate_study.json"))
    return ["rate_study.csv", "rate_study.json"], {"master": cfg.seed}


def run_positivity(cfg: RunConfig, out):
    sample = gen_positivity(cfg.n, cfg.seed)
    usual, shift = count_violations(sample, cfg.positivity_delta)
    regions = violation_regions(sample, cfg.positivity_delta)
    payload = {
        "n": cfg.n, "delta": cfg.positivity_delta, "seed": cfg.seed,
        "usual_violations": usual, "shift_violations": shift,
        "regions": {f"x={g}": {k: [list(r) for r in v] for k, v in reg.items()}
                    for g, reg in regions.items()},
    }
    _dump(payload, os.path.join(out, "positivity.json"))
    return ["positivity.json"], {"master": cfg.seed}


def run_coverage(cfg: RunConfig, out):
    df = coverage_study(cfg.n, cfg.reps, cfg.deltas, cfg.level, cfg.seed, cfg.bootstrap_b,
                        _kennedy(cfg), cfg.threads)
    _frame_to_csv(df, os.path.join(out, "coverage.csv"))
    _dump({"cells": _frame_records(df), **{k: _plain(v) for k, v in df.attrs.items()}},
          os.path.join(out, "coverage.json"))
    return ["coverage.csv", "coverage.json"], {"master": cfg.seed}


RUNNERS = {"estimate": run_estimate, "simulate": run_simulate, "rate-study": run_rate_study,
           "positivity-demo": run_positivity, "coverage": run_coverage}


def build_parser():
    p = argparse.ArgumentParser(prog="shiftiv", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON file with flat config keys")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; VALUE is parsed as JSON when possible")
    return p


def resolve_config(args) -> RunConfig:
    d = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                d = RunConfig.from_json(fh.read()).to_dict()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    for item in args.set:
        key, value = parse_override(item)
        d[key] = value
    for key in ("out", "seed", "threads"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    d["subcommand"] = args.subcommand
    return RunConfig.from_dict(d).validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        outputs, seeds = RUNNERS[cfg.subcommand](cfg, cfg.out)
        _dump(manifest(cfg, outputs, seeds), os.path.join(cfg.out, "manifest.json"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, FitError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
