"""Command-line entry point: ``teamlens <subcommand>``.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from . import pipeline as pl
from .data import SchemaError
from .glm import FitError
from .simgen import SyntheticConfig, run_world, write_world

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("teamlens")


class UsageError(Exception):
    pass


def _global_flags():
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON config (run config, or world config for simulate)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--out-dir", help="run directory (default: config out_dir or ./run)")
    p.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return p


def build_parser():
    g = _global_flags()
    parser = argparse.ArgumentParser(prog="teamlens", parents=[g],
                                     description="Team player effects from match logs.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("simulate", parents=[g], help="generate a synthetic match log")
    p.add_argument("--out", help="output match log (default: <out-dir>/world/matches.jsonl)")
    p.add_argument("--truth", help="ground-truth sidecar directory")
    p.add_argument("--players", type=int, help="override n_players")
    p.add_argument("--team-matches", type=int, help="override team_matches")

    p = sub.add_parser("split", parents=[g], help="split a log into S / T1 / T2")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"])

    p = sub.add_parser("featurize", parents=[g], help="build standardized feature tables")
    p.add_argument("--split", choices=["t1", "t2"], action="append",
                   help="split to featurize (repeatable; default both)")
    p.add_argument("--scaler", default="new", help="scaler JSON path, or 'new' to fit on T1")
    p.add_argument("--out", help="output CSV (only with a single --split)")
    p.add_argument("--split-dir", help="directory with s/t1/t2.jsonl (default <out-dir>/split)")
    p.add_argument("--focal-seed", type=int)
    p.add_argument("--eapm-mode", choices=["career", "match"])

    p = sub.add_parser("fit", parents=[g], help="fit the S1 suite; persist S1.3")
    p.add_argument("--features", help="T1 feature CSV (default <out-dir>/features/t1.csv)")
    p.add_argument("--clusters", default="cluster")
    p.add_argument("--out", help="model JSON (default <out-dir>/models/model.json)")

    p = sub.add_parser("tp", parents=[g], help="residuals, threshold and TP index")
    p.add_argument("--model")
    p.add_argument("--t1")
    p.add_argument("--t2", help="T2 features, used for the threshold sweep")
    p.add_argument("--tau", help="auto, sweep or an integer")
    p.add_argument("--sweep", help="threshold grid min:max:step")
    p.add_argument("--out", help="TP index CSV (default <out-dir>/tp/tp.csv)")
    p.add_argument("--focal-only", action="store_true",
                   help="ledger from focal-team residuals only")

    p = sub.add_parser("analyze", parents=[g], help="S2 suite, MEM, facets, robustness")
    p.add_argument("--t1")
    p.add_argument("--t2")
    p.add_argument("--tp")
    p.add_argument("--model")
    p.add_argument("--ledger")

    p = sub.add_parser("pipeline", parents=[g], help="run every stage")
    p.add_argument("--input", help="match log (overrides config)")
    p.add_argument("--focal-only", action="store_true",
                   help="ledger from focal-team residuals only")

    p = sub.add_parser("report", parents=[g], help="print a report directory")
    p.add_argument("report_dir", nargs="?")
    return parser


def _run_config(args) -> pl.RunConfig:
    cfg = pl.RunConfig.from_json(args.config) if getattr(args, "config", None) \
        else pl.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg=None):
    if getattr(args, "out_dir", None):
        return args.out_dir
    return cfg.out_dir if cfg is not None else "run"


def cmd_simulate(args):
    if getattr(args, "config", None):
        with open(args.config) as fh:
            d = json.load(fh)
        d = d.get("world", d) if "world" in d and isinstance(d["world"], dict) else d
    else:
        d = {}
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if args.players is not None:
        d["n_players"] = args.players
    if args.team_matches is not None:
        d["team_matches"] = args.team_matches
    cfg = SyntheticConfig.from_dict(d)
    out_dir = _out_dir(args)
    out = args.out or os.path.join(out_dir, "world", "matches.jsonl")
    truth = args.truth or os.path.join(os.path.dirname(os.path.abspath(out)), "truth")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    w = run_world(cfg)
    write_world(w, out, truth)
    print(f"wrote {len(w.records)} matches to {out}")


def cmd_split(args):
    cfg = _run_config(args)
    res = pl.stage_split(args.input, _out_dir(args, cfg), cfg.split_seed, args.format)
    print(" ".join(f"{k.upper()}={v['n']}" for k, v in res.items()))


def cmd_featurize(args):
    cfg = _run_config(args)
    out_dir = _out_dir(args, cfg)
    splits = tuple(args.split or ("t1", "t2"))
    if args.out and len(splits) != 1:
        raise UsageError("--out needs exactly one --split")
    out_paths = {splits[0]: args.out} if args.out else None
    scaler_out = os.path.join(os.path.dirname(os.path.abspath(args.out)), "scaler.json") \
        if args.out else None
    focal = args.focal_seed if args.focal_seed is not None else cfg.focal_seed
    res = pl.stage_featurize(out_dir, focal, args.eapm_mode or cfg.eapm_mode, args.scaler,
                             splits, split_dir=args.split_dir, out_paths=out_paths,
                             scaler_out=scaler_out)
    for k in splits:
        print(f"{k}: {res[k]['n']} rows")


def cmd_fit(args):
    cfg = _run_config(args)
    res = pl.stage_fit(_out_dir(args, cfg), args.clusters, args.features, args.out)
    for k, v in res["pseudo_r2"].items():
        print(f"{k} pseudo R2 {v:.4f}")


def _tau(value):
    if value is None:
        return None
    if value in ("auto", "sweep"):
        return value
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"--tau must be auto, sweep or an integer, got {value!r}") from None


def cmd_tp(args):
    cfg = _run_config(args)
    tau = _tau(args.tau) or cfg.tau
    sweep = args.sweep or cfg.sweep
    if tau == "sweep" and not sweep:
        raise UsageError("--tau sweep needs --sweep min:max:step")
    res = pl.stage_tp(_out_dir(args, cfg), tau, sweep, cfg.holdout_seed, cfg.test_share,
                      cfg.bin_size, args.model, args.t1, args.t2, args.out,
                      focal_only=args.focal_only or cfg.focal_only)
    print(f"tau={res['tau']} qualified={res['n_qualified']}/{res['n_players']}")


def cmd_analyze(args):
    cfg = _run_config(args)
    out_dir = _out_dir(args, cfg)
    # with explicit inputs, --out-dir is the report directory itself
    explicit = any(getattr(args, k) for k in ("t2", "tp", "model"))
    reports = out_dir if explicit else None
    info = pl.stage_analyze(out_dir, cfg, args.t1, args.t2, args.tp, args.model, args.ledger,
                            reports_dir=reports)
    rep = reports or pl.Layout(out_dir).reports
    manifest = {"status": "complete", "config": cfg.to_dict(), "versions": pl.versions(),
                "stages": {"analyze": info},
                "seeds": {"holdout_seed": cfg.holdout_seed}}
    manifest["reports"] = {f: pl.file_sha256(os.path.join(rep, f)) for f in pl.REPORT_FILES
                           if os.path.exists(os.path.join(rep, f))}
    pl.write_manifest(os.path.join(rep, "manifest.json"), manifest)
    print(f"reports written to {rep}")


def cmd_pipeline(args):
    cfg = _run_config(args)
    if args.input or args.focal_only:
        d = cfg.to_dict()
        d["input"] = args.input or d["input"]
        d["focal_only"] = d["focal_only"] or args.focal_only
        cfg = pl.RunConfig.from_dict(d)
    out_dir = _out_dir(args, cfg)
    m = pl.run_pipeline(cfg, out_dir)
    print(f"pipeline complete: tau={m['stages']['tp']['tau']} "
          f"reports in {pl.Layout(out_dir).reports}")


def cmd_report(args):
    rep = args.report_dir or pl.Layout(_out_dir(args)).reports
    if not os.path.isdir(rep):
        raise FileNotFoundError(f"no manifest: {rep} is not a directory")
    sys.stdout.write(pl.render_report(rep))


COMMANDS = {
    "simulate": cmd_simulate, "split": cmd_split, "featurize": cmd_featurize, "fit": cmd_fit,
    "tp": cmd_tp, "analyze": cmd_analyze, "pipeline": cmd_pipeline, "report": cmd_report,
}


def _exit_code(exc):
    if isinstance(exc, pl.StageError) and exc.__cause__ is not None:
        exc = exc.__cause__
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (FitError, ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=getattr(args, "log_level", "WARNING"),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, pl.StageError, pl.RunLocked, SchemaError, FileNotFoundError,
            ValueError, KeyError, OSError, FitError, ArithmeticError,
            np.linalg.LinAlgError, pd.errors.ParserError) as exc:
        print(f"teamlens: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
