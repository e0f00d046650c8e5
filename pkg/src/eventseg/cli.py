"""Command-line entry point: simulate, segment, evaluate, predict."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import pandas as pd

from . import evaluation, outcomes, pipeline, simgen
from .config import PipelineConfig
from .errors import ConfigError, EventSegError, ValidationError

log = logging.getLogger("eventseg")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _sim_config(args):
    d = _load_json(args.config) if args.config else {}
    if args.scenario:
        d["scenario"] = args.scenario
    if "scenario" in d and d["scenario"] not in simgen.SCENARIOS:
        raise ConfigError(f"unknown scenario {d['scenario']!r}; valid: {sorted(simgen.SCENARIOS)}")
    if "trend" not in d and d.get("scenario"):
        d["trend"] = simgen.SCENARIOS[d["scenario"]]
    if args.seed is not None:
        d["seed"] = args.seed
    known = {f.name for f in dataclasses.fields(simgen.SimConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown simulation config keys {unknown}")
    return simgen.SimConfig(**d)


def cmd_simulate(args):
    cfg = _sim_config(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    real = simgen.generate(cfg)
    real.to_csv(out / "realization.csv")
    (out / "sim_config.json").write_text(cfg.to_json() + "\n")
    log.info("wrote %d rows to %s", len(real.times), out / "realization.csv")
    return 0


def _pipeline_config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_segment(args):
    cfg = _pipeline_config(args)
    paths = []
    for p in args.inputs:
        p = Path(p)
        paths += sorted(p.glob("*.csv")) if p.is_dir() else [p]
    if not paths:
        raise ValidationError("no input CSV files")
    results, manifest = pipeline.segment_paths(paths, cfg, args.output, args.jobs)
    for r in results:
        status = "admitted" if r.admitted else "rejected"
        extra = f" agreement={r.agreement:.4f}" if r.agreement is not None else ""
        print(f"{r.subject_id}: {status}, {len(r.sessions)} sessions{extra}")
    return 0


def cmd_evaluate(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ValidationError("empty method list")
    if args.scenario not in simgen.SCENARIOS:
        raise ConfigError(f"unknown scenario {args.scenario!r}; valid: {sorted(simgen.SCENARIOS)}")
    sim = simgen.default_configs()[args.scenario]
    settings = evaluation.BenchmarkSettings()
    if args.config:
        d = _load_json(args.config)
        known = {f.name for f in dataclasses.fields(evaluation.BenchmarkSettings)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown benchmark settings {unknown}")
        settings = evaluation.BenchmarkSettings(**d)
    report = evaluation.run_benchmark(sim, methods, args.trials, args.repeats, args.protocol,
                                      args.seed or 0, args.jobs, settings)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.trial_frame().to_csv(out / "trials.csv", index=False)
    for m, r in report.reports.items():
        print(f"{m}: n={r.n_trials} failed={r.n_failed} " +
              " ".join(f"{k}={r.mean(k):.4f}" for k in evaluation.METRICS))
    for pair, ps in report.pvalues.items():
        print(pair + ": " + " ".join(f"{k}={v:.3g}" for k, v in ps.items()))
    return 0


def cmd_predict(args):
    feats = pd.read_csv(args.features)
    outs = pd.read_csv(args.outcomes)
    kind = {"lr": "logistic", "cr": "continuation-ratio", None: None}[args.model]
    data = outcomes.OutcomeDataset.from_frames(feats, outs, day=args.day)
    if data.n_dropped:
        log.warning("dropped %d rows with missing features", data.n_dropped)
    table = outcomes.rank_features(data, model_kind=kind, use_smote=args.smote,
                                   n_runs=args.runs, seed=args.seed or 0)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "ranking.csv", index=False)
    print(table.head(10).to_string(index=False))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="eventseg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=True):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--output", default="out", help="output directory")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("simulate", help="write one simulated realization")
    common(s, jobs=False)
    s.add_argument("--scenario", default=None, choices=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("segment", help="segment subject CSVs (files or directories)")
    common(s)
    s.add_argument("inputs", nargs="+")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("evaluate", help="run the simulation benchmark")
    common(s)
    s.add_argument("--scenario", default="stable")
    s.add_argument("--methods", default="hmm,dhmm,proposed")
    s.add_argument("--trials", type=int, default=100, help="training realizations")
    s.add_argument("--repeats", type=int, default=1, help="held-out realizations per training one")
    s.add_argument("--protocol", default="out-of-sample", choices=["in-sample", "out-of-sample"])
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", help="rank session features by LOOCV AUC")
    common(s, jobs=False)
    s.add_argument("--features", required=True)
    s.add_argument("--outcomes", required=True)
    s.add_argument("--model", choices=["lr", "cr"], default=None)
    s.add_argument("--smote", action="store_true")
    s.add_argument("--runs", type=int, default=100)
    s.add_argument("--day", type=int, default=None)
    s.set_defaults(func=cmd_predict)
    return p


def main(argv=None):
    level = os.environ.get("EVENTSEG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EventSegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
