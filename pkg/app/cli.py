"""Command line: train, sample, eval, verify-theory, toy-recall.

Every command prints ``key=value`` lines on stdout; eval prints a metric table
above them. Failures print
``error category=<category> message=<text>`` on stderr and exit with 2
(1 for unexpected errors, 3 when a theory check fails).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Mapping, Optional, Sequence

import pandas as pd

from app.core.config import load_settings
from app.core.errors import SwinGNNError
from app.core.logging import configure_logging
from app.services.datasets import format_edge_list, load_edge_list, save_edge_list
from app.services.evaluation import mmd_report, molecule_report, recall_isomorphic
from app.services.theory_service import SUITE, format_report, run_theory_suite
from app.services.trainer import Checkpoint, run_toy_recall_experiment, sample_from_checkpoint, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_ERROR = 2
EXIT_CHECK_FAILED = 3


def _emit(**fields) -> None:
    for key, value in fields.items():
        print(f"{key}={value}")


def metric_table(report: Mapping[str, float]) -> str:
    """Human-readable metric/value table, printed above the key=value lines."""
    frame = pd.DataFrame({"metric": list(report), "value": [float(v) for v in report.values()]})
    return frame.to_string(index=False, float_format=lambda v: f"{v:.6g}")


def cmd_train(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    if args.out is not None:
        settings = settings.model_copy(update={"train": settings.train.model_copy(update={"output_dir": args.out})})
    result = train(settings)
    _emit(
        checkpoint=result.checkpoint_path,
        parameters=result.num_parameters,
        epochs=result.checkpoint.epoch,
        final_loss=result.losses[-1] if result.losses else "nan",
        train_graphs=len(result.train_graphs),
        test_graphs=len(result.test_graphs),
    )
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    checkpoint = Checkpoint.load(args.ckpt)
    use_ema = False if args.raw_weights else None
    graphs = sample_from_checkpoint(checkpoint, args.count, args.permute, seed=args.seed, use_ema=use_ema)
    if args.out is None:
        sys.stdout.write(format_edge_list(graphs))
    else:
        _emit(graphs=len(graphs), out=save_edge_list(graphs, args.out))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    generated = load_edge_list(args.generated)
    reference = load_edge_list(args.reference)
    report = mmd_report(generated, reference, settings.eval)
    if max((g.n for g in (*generated, *reference)), default=0) <= settings.eval.recall_max_nodes:
        report["recall"] = recall_isomorphic(generated, reference, settings.eval.recall_max_nodes)
    if args.molecules:
        report.update(molecule_report(generated))
    print(metric_table(report))
    print()
    _emit(**report)
    return EXIT_OK


def cmd_verify_theory(args: argparse.Namespace) -> int:
    frame = run_theory_suite(args.group)
    for line in format_report(frame):
        print(line)
    passed = bool(frame["passed"].all())
    _emit(summary="pass" if passed else "fail", checks=len(frame), failed=int((~frame["passed"]).sum()))
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_toy_recall(args: argparse.Namespace) -> int:
    settings = load_settings(args.config)
    _emit(l=args.l, recall=run_toy_recall_experiment(args.l, settings))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swingnn", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--log-level", default=None, help="overrides SWINGNN_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", help="train a denoiser from a config file")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("sample", help="generate graphs from a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--permute", action="store_true", help="apply a uniform random permutation to every sample")
    p.add_argument("--raw-weights", action="store_true", help="sample with the raw instead of the EMA weights")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="edge-list file; stdout when omitted")
    p.set_defaults(func=cmd_sample)

    p = commands.add_parser("eval", help="MMD (and recall for small graphs) of two edge-list files")
    p.add_argument("--generated", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--molecules", action="store_true", help="also report validity and uniqueness")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("verify-theory", help="exact checks of the permutation lemmas and EDM identities")
    p.add_argument("--group", action="append", choices=sorted(SUITE), default=None)
    p.set_defaults(func=cmd_verify_theory)

    p = commands.add_parser("toy-recall", help="recall on the regular-graph toy set under l permutations")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_toy_recall)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except SwinGNNError as exc:
        print(f"error category={exc.category} message={exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception:
        logger.exception("unexpected failure in %s", args.command)
        return EXIT_UNEXPECTED
