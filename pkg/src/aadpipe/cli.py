"""Command-line interface.

Subcommands mirror the experiment stages so they can be driven one at a time
or end to end:

    aadpipe synth       generate synthetic subjects (EEGB trials + manifest)
    aadpipe preprocess  dsp chain -> decision windows + topo images
    aadpipe train-cnn   stage-1 cross-validated CNN + attribution maps
    aadpipe select      channel ranking from the global importance map
    aadpipe train-tcn   stage-2 TCN at each channel budget
    aadpipe shap        alias for train-cnn's attribution output (global map)
    aadpipe report      aggregate CSV/PGM artifacts
    aadpipe complexity  print/write the model-size and MAC table
    aadpipe all         every stage for every subject, then the report
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .data import SynthConfig, synth_generate
from .pipeline import (
    ExperimentConfig,
    load_config_file,
    run_all,
    step_preprocess,
    step_report,
    step_select,
    step_train_cnn,
    step_train_tcn,
    write_complexity_csv,
)
from . import models


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--data", dest="data_dir")
    p.add_argument("--run", dest="run_dir")
    p.add_argument("--subjects", help="comma-separated subject ids")
    p.add_argument("--window-seconds", type=float, dest="window_seconds")
    p.add_argument("--overlap", type=float)
    p.add_argument("--budgets", help="comma-separated channel budgets")
    p.add_argument("--folds", type=int)
    p.add_argument("--fractions", help="train,val,test e.g. 0.8,0.1,0.1")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--background-size", type=int, dest="background_size")
    p.add_argument("--explain-size", type=int, dest="explain_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--split-by-trial", action="store_true", default=None, dest="split_by_trial")


def _config_from_args(args) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    names = {f.name for f in fields(ExperimentConfig)}
    for name in names:
        got = getattr(args, name, None)
        if got is None:
            continue
        if name == "subjects":
            got = tuple(s.strip() for s in got.split(",") if s.strip()) if isinstance(got, str) else got
        elif name == "budgets":
            got = tuple(int(x) for x in got.split(",")) if isinstance(got, str) else got
        elif name == "fractions":
            got = tuple(float(x) for x in got.split(",")) if isinstance(got, str) else got
        values[name] = got
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="aadpipe", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic subjects")
    p.add_argument("--out", required=True, help="data directory")
    p.add_argument("--subjects", type=int, default=1, help="number of subjects")
    p.add_argument("--trials", type=int, default=60)
    p.add_argument("--trial-seconds", type=float, default=50.0)
    p.add_argument("--depth", type=float, default=0.5)
    p.add_argument("--snr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    for name in ("preprocess", "train-cnn", "shap", "select", "train-tcn", "report", "all"):
        q = sub.add_parser(name)
        _add_config_flags(q)

    p = sub.add_parser("complexity", help="model size and MAC table")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.add_argument("--budgets", default="64,48,32,16,8")
    p.add_argument("--include-classifier", action="store_true")

    args = parser.parse_args(argv)

    if args.command == "synth":
        for k in range(args.subjects):
            sid = f"S{k + 1:02d}"
            cfg = SynthConfig(n_trials=args.trials, trial_seconds=args.trial_seconds,
                              depth=args.depth, snr=args.snr, seed=args.seed + k)
            manifest = synth_generate(cfg, args.out, sid)
            print(f"{sid}: {len(manifest.trials)} trials -> {args.out}")
        return 0

    if args.command == "complexity":
        budgets = tuple(int(x) for x in args.budgets.split(","))
        if args.out:
            write_complexity_csv(args.out, budgets)
            print(f"wrote {args.out}")
        else:
            print("channels,params,params_m,macs,mmacs")
            for c, pn, pm, m, mm in models.complexity_table(budgets):
                if args.include_classifier:
                    m = models.count_macs(models.build_tcn(c), include_classifier=True)
                    mm = models.mmacs_rounded(m)
                print(f"{c},{pn},{pm},{m},{mm}")
        return 0

    cfg = _config_from_args(args)
    try:
        if args.command == "preprocess":
            for sid in cfg.subjects:
                step_preprocess(cfg, sid)
        elif args.command in ("train-cnn", "shap"):
            for sid in cfg.subjects:
                step_train_cnn(cfg, sid)
        elif args.command == "select":
            for sid in cfg.subjects:
                step_select(cfg, sid)
        elif args.command == "train-tcn":
            for sid in cfg.subjects:
                step_train_tcn(cfg, sid)
        elif args.command == "report":
            step_report(cfg)
        elif args.command == "all":
            run_all(cfg)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
