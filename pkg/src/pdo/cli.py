"""Command-line entry point.

    pdo generate|train|sample|evaluate|report --config <path>
        [--workers N] [--seed S] [--out DIR]

All state flows through the config file and flags; there are no environment
variables. ``--seed`` and ``--out`` override the config document. Exit
codes: 0 success, 2 validation error, 3 numerical failure.

``--workers`` parallelizes dataset generation across instances (derived
per-instance seeds keep any worker count bit-reproducible); training and
evaluation run sequentially so reports are byte-identical between runs.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigurationError, DataError, NumericalError, SimulationError
from .experiment import ExperimentConfig, run_evaluate, run_generate, run_report, run_sample, run_train

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "simulate a dataset and write it to disk"),
        ("train", "train a denoiser on a generated dataset"),
        ("sample", "draw samples for one flagged test case"),
        ("evaluate", "score a checkpoint on the test split and emit reports"),
        ("report", "regenerate CSV emissions from a stored report.json"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the experiment JSON config")
        cmd.add_argument("--workers", type=int, default=1, help="worker processes for generation")
        cmd.add_argument("--seed", type=int, default=None, help="override the config master seed")
        cmd.add_argument("--out", default=None, help="override the config output directory")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config.doc["seed"] = int(args.seed)
    if args.out is not None:
        config.doc["out_dir"] = args.out
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        if args.command == "generate":
            path = run_generate(config, workers=max(1, args.workers))
            from .datasets import read_manifest

            manifest = read_manifest(path)
            print(
                json.dumps(
                    {
                        "dataset": path,
                        "system": manifest.system,
                        "n_instances": manifest.n_instances,
                        "channels": list(manifest.channels),
                        "splits": {k: len(v) for k, v in manifest.splits.items()},
                    }
                )
            )
        elif args.command == "train":
            path = run_train(config)
            print(json.dumps({"checkpoint": path}))
        elif args.command == "sample":
            path = run_sample(config)
            print(json.dumps({"samples": path}))
        elif args.command == "evaluate":
            path = run_evaluate(config)
            with open(path, encoding="utf-8") as fh:
                report = json.load(fh)
            summary = {
                task: section["aggregate"] for task, section in report["tasks"].items()
            }
            print(json.dumps({"report": path, "aggregates": summary}))
            for warning in report["warnings"]:
                print(f"warning: {warning}", file=sys.stderr)
        elif args.command == "report":
            paths = run_report(config)
            print(json.dumps({"csv": paths}))
        return EXIT_OK
    except (ConfigurationError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SimulationError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
