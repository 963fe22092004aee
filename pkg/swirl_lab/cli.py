from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from . import pipeline
from .analytics.report import distribution_table, load_trace, metrics_table, phase_summary, summary_table
from .config import load_config
from .errors import ConfigError, SwirlError, VerificationFailed
from .models.checkpoint import read_checkpoint
from .models.policy import Role
from .settings import configure_logging, load_settings
from .verify.suite import SuiteOptions, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


def _parse_context(s: str) -> tuple:
    try:
        i, j = (int(v) for v in s.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"context must be 'i,j', got {s!r}") from e
    return i, j


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swirl", description="Alternating FWM/IDM training on enumerable worlds.")
    ap.add_argument("--log-level", type=str, default=None, help="Overrides SWIRL_LOG_LEVEL.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="Build the kernel and print summary statistics")
    p.add_argument("--config", type=str, required=True)

    p = sub.add_parser("gen-data", help="Sample the dataset and write it to a file")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--out", type=str, default=None, help="Default: <output_dir>/dataset.tsv")

    p = sub.add_parser("train", help="Run the alternating loop, streaming metrics and checkpoints")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--resume", action="store_true", help="Continue from the latest checkpoint in output_dir")

    p = sub.add_parser("eval", help="Print analysis metrics and accuracies of a checkpoint")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--checkpoint", type=str, default=None, help="Phase checkpoint directory (default: latest)")
    p.add_argument("--trace", action="store_true", help="Also print the per-phase summary of metrics.csv")

    p = sub.add_parser("verify", help="Run the oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--trials", type=int, default=10**5, help="Groups per estimator expectation test")

    p = sub.add_parser("inspect", help="Print a checkpoint's distributions")
    p.add_argument("checkpoint", type=str)
    p.add_argument("--context", type=_parse_context, action="append", default=None, help="i,j (repeatable; default all)")
    return ap


# ---------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------
def _cmd_gen_world(args, settings) -> int:
    cfg = load_config(Path(args.config))
    _, summary = pipeline.gen_world(cfg)
    print(summary_table(summary))
    return EXIT_OK


def _cmd_gen_data(args, settings) -> int:
    cfg = load_config(Path(args.config))
    ds, path = pipeline.gen_data(cfg, settings, Path(args.out) if args.out else None)
    print(f"Wrote {len(ds)} records: {path}")
    return EXIT_OK


def _cmd_train(args, settings) -> int:
    cfg = load_config(Path(args.config))
    result = pipeline.train(cfg, settings, resume=args.resume)
    last = result.trace.boundaries()[-1] if result.trace.boundaries() else None
    print(f"Records: {len(result.trace)}")
    if last is not None:
        print(metrics_table({k: v for k, v in last.model_dump().items() if v is not None}))
    print("Output:", result.output_dir)
    return EXIT_OK


def _cmd_eval(args, settings) -> int:
    cfg = load_config(Path(args.config))
    metrics = pipeline.evaluate(cfg, settings, Path(args.checkpoint) if args.checkpoint else None)
    print(metrics_table(metrics))
    if args.trace:
        df = load_trace(settings.resolve_output(cfg.output_dir) / "metrics.csv")
        print("")
        print(phase_summary(df).to_markdown(floatfmt=".6g"))
    return EXIT_OK


def _cmd_verify(args, settings) -> int:
    opts = SuiteOptions(instances=args.instances, estimator_trials=args.trials, seed=args.seed)
    results = run_suite(opts)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise VerificationFailed(failed)
    return EXIT_OK


def _cmd_inspect(args, settings) -> int:
    model, sidecar = read_checkpoint(Path(args.checkpoint))
    d1, d2 = model.context_dims
    contexts = args.context or [(i, j) for i in range(d1) for j in range(d2)]
    label = "P(y | x, z)" if model.role == Role.FWM else "Q(z | x, y)"
    print(f"{model.role.value} {label} dims={list(model.logits.shape)}")
    for k in ("iteration", "phase"):
        if k in sidecar:
            print(f"{k}: {sidecar[k]}")
    print(distribution_table(model, contexts))
    return EXIT_OK


_COMMANDS = {
    "gen-world": _cmd_gen_world,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "inspect": _cmd_inspect,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings()
    configure_logging(args.log_level or settings.log_level)

    try:
        return _COMMANDS[args.command](args, settings)
    except VerificationFailed as e:
        print(f"[FAIL] {e}", file=sys.stderr)
        return EXIT_VERIFY
    except ConfigError as e:
        print("[CONFIG] " + "\n[CONFIG] ".join(e.problems), file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as e:
        print(f"[CONFIG] {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SwirlError, OSError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
