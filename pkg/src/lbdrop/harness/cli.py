"""Command-line entry point: ``lbdrop {toy-grid,toy-trace,classify,cf}``.

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from ..errors import ConfigError, NumericError
from .cf import EPOCH_HEADER as CF_EPOCH_HEADER
from .cf import METRIC_HEADER, metric_rows, run_cf
from .classify import EPOCH_HEADER, PAVPU_HEADER, pavpu_rows, run_classification
from .config import EXPERIMENTS, RunConfig, load_config
from .io import RunRecord, git_hash, write_csv, write_record
from .toy import GRID_HEADER, TRACE_HEADER, run_toy_grid, run_toy_trace

log = logging.getLogger("lbdrop")

# --samples feeds a different field per experiment
SAMPLE_FIELD = {"toy-grid": "toy_samples", "toy-trace": "trace_samples", "classify": "samples", "cf": "samples"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lbdrop", description="Learnable Bernoulli dropout experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: runs)")
        p.add_argument(
            "--estimator",
            help="gate estimator; for the toy experiments a comma list of arm, concrete, reinforce",
        )
        p.add_argument("--samples", type=int, help="Monte Carlo samples per gradient estimate")
        p.add_argument("--workers", type=int, help="threads for the toy grid")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.samples is not None:
        overrides[SAMPLE_FIELD[args.experiment]] = args.samples
    if args.estimator is not None:
        key = "toy_estimators" if args.experiment.startswith("toy") else "estimator"
        overrides[key] = args.estimator
    overrides["experiment"] = args.experiment
    return load_config(args.config, overrides)


def _record(cfg: RunConfig, metrics: dict, seconds: float) -> RunRecord:
    return RunRecord(cfg.as_dict(), metrics, {"seconds": seconds, "git": git_hash()})


def run(cfg: RunConfig) -> list[Path]:
    """Run one experiment and write its outputs; returns the written paths."""
    out = Path(cfg.out_dir)
    start = time.perf_counter()
    written = []
    if cfg.experiment == "toy-grid":
        rows = run_toy_grid(cfg)
        written.append(out / "toy_grid.csv")
        write_csv(written[-1], GRID_HEADER, rows)
        record = _record(cfg, {"n_rows": len(rows)}, time.perf_counter() - start)
        stem = "toy_grid"
    elif cfg.experiment == "toy-trace":
        rows = run_toy_trace(cfg)
        written.append(out / "toy_trace.csv")
        write_csv(written[-1], TRACE_HEADER, rows)
        record = _record(cfg, {"n_steps": cfg.trace_steps}, time.perf_counter() - start)
        stem = "toy_trace"
    elif cfg.experiment == "classify":
        res = run_classification(cfg)
        stem = f"classify_{cfg.estimator}"
        written.append(out / f"{stem}_pavpu.csv")
        write_csv(written[-1], PAVPU_HEADER, pavpu_rows(res))
        written.append(out / f"{stem}_epochs.csv")
        write_csv(written[-1], EPOCH_HEADER, res.epochs)
        metrics = {
            "train_accuracy": res.train_accuracy,
            "test_accuracy": res.test_accuracy,
            "mean_pavpu": res.mean_pavpu,
            "pavpu_t1": res.pavpu_t1.pavpu,
            "epochs_to_95": res.epochs_to_95,
        }
        record = _record(cfg, metrics, res.seconds)
    else:
        res = run_cf(cfg)
        stem = f"cf_{cfg.estimator}"
        written.append(out / f"{stem}_metrics.csv")
        write_csv(written[-1], METRIC_HEADER, metric_rows(res, cfg.estimator))
        written.append(out / f"{stem}_epochs.csv")
        write_csv(written[-1], CF_EPOCH_HEADER, res.epochs)
        record = _record(cfg, {"model": res.metrics, **res.baselines}, res.seconds)
    written.append(out / f"{stem}.json")
    write_record(record, written[-1])
    return written


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        for path in run(cfg):
            print(path)
    except ConfigError as exc:
        print(f"lbdrop: configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"lbdrop: numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"lbdrop: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
