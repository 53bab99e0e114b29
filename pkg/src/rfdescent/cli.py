"""Command line entry point: ``rfdescent sweep-complexity|sweep-da|sweep-lambda|report``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .dataio import DataError
from .harness import (HarnessError, check_dataset, emit, load_config, make_config, read_rows,
                      summarize, summary_to_csv, run)

COMMANDS = {"sweep-complexity": "complexity_sweep", "sweep-da": "da_sweep",
            "sweep-lambda": "lambda_sweep"}


def _grid(text):
    return [float(v) if "." in v or "e" in v.lower() else int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfdescent", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML/JSON config or a previous run manifest")
        p.add_argument("--dataset")
        p.add_argument("--seed", type=int)
        p.add_argument("--scale", choices=("paper", "desk"))
        p.add_argument("--out", type=Path)
        p.add_argument("--grid", type=_grid, help="comma separated leaf budgets or lambdas")
        p.add_argument("--M", type=int, dest="M")
        p.add_argument("--folds", type=int, dest="k")
        p.add_argument("--epochs", type=int)
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--n-jobs", type=int, dest="n_jobs")
        p.add_argument("--record-wall-time", action="store_const", const=True,
                       dest="record_wall_time")
    p = sub.add_parser("report", help="print the fold-averaged table of a results directory")
    p.add_argument("out", type=Path)
    return parser


def _config_from_args(args):
    protocol = COMMANDS[args.command]
    values = load_config(args.config) if args.config else {}
    if values.get("protocol", protocol) != protocol:
        raise HarnessError(f"config is for {values['protocol']}, not {protocol}")
    values.pop("protocol", None)
    for key in ("dataset", "seed", "scale", "grid", "M", "k", "epochs", "data_dir", "n_jobs",
                "record_wall_time"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.out is not None:
        values["output"] = str(args.out)
    dataset = values.pop("dataset", None)
    if not dataset:
        raise HarnessError("no dataset given (--dataset or config)")
    scale = values.pop("scale", "desk")
    return make_config(protocol, dataset, scale, **values)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            sys.stdout.write(summary_to_csv(summarize(read_rows(args.out / "results.csv"))))
            return 0
        cfg = _config_from_args(args)
        check_dataset(cfg)
        result = run(cfg)
        paths = emit(result, cfg.output)
    except (HarnessError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    if result.failures:
        print(f"{len(result.failures)} failed cell(s):", file=sys.stderr)
        for f in result.failures:
            print(f"  fold {f['fold']}: {f['error']}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
