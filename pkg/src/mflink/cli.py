"""Command-line interface.

Subcommands: generate, split, run, eval, bench. Every configuration key is
available as a flag of the same name (hyphens for underscores); --config
points at a flat key=value file and flags override it. Success exits 0;
any failure prints one JSON object to stderr and exits 1.
"""

import argparse
import json
import sys
from dataclasses import fields

from .experiments import (ExperimentConfig, cmd_bench, cmd_eval,
                          cmd_generate, cmd_run, cmd_split,
                          config_from_mapping, read_config_file)


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="FILE",
                        help="flat key=value config file")
    for f in fields(ExperimentConfig):
        parser.add_argument("--" + f.name.replace("_", "-"), dest=f.name,
                            default=None, metavar=f.name.upper())
    # short spellings for the most common knobs
    parser.add_argument("--seed", dest="seed", default=None,
                        help="shorthand for a single-entry seeds list")
    parser.add_argument("--k", dest="k", default=None,
                        help="shorthand for k_true")


def _build_config(args):
    mapping = {}
    if args.config:
        mapping.update(read_config_file(args.config))
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            mapping[f.name] = value
    if getattr(args, "seed", None) is not None:
        mapping["seeds"] = args.seed
    if getattr(args, "k", None) is not None:
        mapping["k_true"] = args.k
    return config_from_mapping(mapping)


def _progress(row):
    print("test_size=%s seed=%s fold=%s k_opt=%s rmse=%s%s"
          % (row["test_size"], row["seed"], row["fold"], row["k_opt"],
             row["rmse"], " error=" + row["error"] if row["error"] else ""))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mflink",
        description="matrix-factorization link prediction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate",
                           help="write X.csv and ground_truth.json")
    _add_config_flags(p_gen)

    p_split = sub.add_parser("split", help="persist train/test index files")
    _add_config_flags(p_split)

    p_run = sub.add_parser("run", help="run the cross-validated sweep")
    _add_config_flags(p_run)

    p_eval = sub.add_parser("eval",
                            help="recompute metrics from persisted runs")
    p_eval.add_argument("run_dir", help="output directory of a finished run")

    p_bench = sub.add_parser("bench", help="time one run per pipeline stage")
    _add_config_flags(p_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            for path in cmd_generate(_build_config(args)):
                print(path)
        elif args.command == "split":
            for path in cmd_split(_build_config(args)):
                print(path)
        elif args.command == "run":
            config = _build_config(args)
            for warning in config.validate():
                print("warning: %s" % warning, file=sys.stderr)
            from .experiments import run_sweep
            rows = run_sweep(config, progress=_progress)
            failed = sum(1 for r in rows if r["error"])
            print("%d runs complete (%d failed); aggregate at %s"
                  % (len(rows), failed, config.output))
        elif args.command == "eval":
            for path in cmd_eval(args.run_dir):
                print(path)
        elif args.command == "bench":
            print(cmd_bench(_build_config(args)))
    except Exception as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
