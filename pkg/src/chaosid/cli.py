"""Command-line entry point: ``chaosid {simulate,corrupt,fit,evaluate,reproduce,config}``.

Exit codes: 0 success, 2 configuration / input error, 3 numeric failure, 4 I/O error.
"""

import argparse
import json
import logging
import sys

import yaml

from . import config as config_mod
from . import pipeline
from .config import ConfigError
from .errors import InvalidInputError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _build_parser():
    parser = argparse.ArgumentParser(prog="chaosid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        return p

    common(sub.add_parser("simulate", help="write truth.csv and holdout.csv"))
    p = common(sub.add_parser("corrupt", help="noise / mask the truth into observations.csv"))
    p.add_argument("--truth", help="truth CSV (default: OUT/truth.csv)")
    p = common(sub.add_parser("fit", help="train the configured method"))
    p.add_argument("--observations", help="observation CSV (default: OUT/observations.csv)")
    p.add_argument("--method", choices=config_mod.METHODS, help="override the config's method")
    p = common(sub.add_parser("evaluate", help="forecast RMSE, Lyapunov exponent, attractor"))
    p.add_argument("--checkpoint", help="checkpoint JSON (default: OUT/checkpoint.json)")
    p.add_argument("--holdout", help="held-out truth CSV (default: OUT/holdout.csv)")
    p.add_argument("--method", choices=config_mod.METHODS, help="override the config's method")
    p = common(sub.add_parser("reproduce", help="run a method x noise grid"))
    p.add_argument("--table", choices=("noisy", "partial"), default="noisy")
    p.add_argument("--full", action="store_true", help="use the full noise-variance list")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    common(sub.add_parser("config", help="print the resolved config as YAML"))
    return parser


def _load_config(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    method = getattr(args, "method", None)
    if method is not None:
        cfg = cfg.replace(method=method)
    return cfg


def _run(args):
    cfg = _load_config(args)
    if args.command == "config":
        sys.stdout.write(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    elif args.command == "simulate":
        truth, hold = pipeline.run_simulate(cfg, args.out)
        print(f"wrote {len(truth)} truth rows and {len(hold)} holdout rows to {args.out}")
    elif args.command == "corrupt":
        obs = pipeline.run_corrupt(cfg, args.out, args.truth)
        print(f"wrote {len(obs)} observation rows to {args.out}")
    elif args.command == "fit":
        pipeline.run_fit(cfg, args.out, args.observations)
        print(f"wrote {cfg.method} checkpoint to {args.out}")
    elif args.command == "evaluate":
        metrics = pipeline.run_evaluate(cfg, args.out, args.checkpoint, args.holdout)
        print(json.dumps({k: metrics[k] for k in ("rmse_h", "rmse_4h", "lambda1", "n_failed")}))
    elif args.command == "reproduce":
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs", "must be >= 1")
        rows = pipeline.run_reproduce(cfg, args.out, args.table, args.full, args.jobs)
        failed = sum(r["status"] != "ok" for r in rows)
        print(f"{len(rows)} cells, {failed} failed; table in {args.out}")
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, KeyError, ValueError) as exc:
        # malformed files surface as KeyError / ValueError from the readers
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
