"""Command-line interface: calibrate, run, report, and export subcommands."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .difficulty import load_binning
from .errors import TokenDeadlineError
from .harness import HarnessConfig, cmd_calibrate, cmd_export, cmd_report, cmd_run
from .records import load_log


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", default="toy", help="dataset JSONL path, or 'toy' for the bundled set")
    parser.add_argument("--models", nargs="+", default=["mock-toy"], help="model specs: mock-toy or remote:<name>")
    parser.add_argument("--endpoint", help="chat-completion base URL for remote models (…/v1)")
    parser.add_argument("--api-key-env", default="CHAT_API_KEY", help="env var holding the endpoint key")
    parser.add_argument("--n", type=int, default=10, help="samples per question per model")
    parser.add_argument("--seed", type=int, default=1234, help="master seed")
    parser.add_argument("--parallelism", type=int, default=1, help="concurrent episodes")
    parser.add_argument("--temperature", type=float, default=0.7)
    parser.add_argument("--safety-cap", type=int, default=16384, help="base-mode generation cap")
    parser.add_argument("--forced-tail-cap", type=int, default=64, help="token cap on forced answers")
    parser.add_argument("--templates", type=Path, help="JSON file overriding the prompt templates")
    parser.add_argument(
        "--markers",
        nargs="+",
        default=["**Final Answer:**", "**Answer:**"],
        help="answer markers checked at segment boundaries",
    )
    parser.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory")


def _config_from_args(args: argparse.Namespace, strategy: str = "base") -> HarnessConfig:
    return HarnessConfig(
        out_dir=args.out_dir,
        dataset=args.dataset,
        models=tuple(args.models),
        endpoint=args.endpoint,
        api_key_env=args.api_key_env,
        judge=getattr(args, "judge", None),
        n=args.n,
        strategy=strategy,
        bins=getattr(args, "bins", 10),
        fallback_max=getattr(args, "fallback_max", 2000),
        seed=args.seed,
        parallelism=args.parallelism,
        temperature=args.temperature,
        forced_tail_cap=args.forced_tail_cap,
        safety_cap=args.safety_cap,
        budget_table=getattr(args, "budget_table", None),
        binning=getattr(args, "binning", None),
        reference_log=getattr(args, "reference_log", None),
        fix_deadline=getattr(args, "fix", None),
        templates_path=args.templates,
        markers=tuple(args.markers),
    )


def _parse_ks(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokendeadline",
        description="Budget-calibrated decoding control and overthinking metrics.",
    )
    parser.add_argument("--version", action="version", version=f"tokendeadline {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log episode failures and retries")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="collect base samples and build the budget table")
    _add_common(cal)
    cal.add_argument("--bins", type=int, default=10, help="difficulty bin count")
    cal.add_argument("--fallback-max", type=int, default=2000, help="budget for never-solved bins")

    run = sub.add_parser("run", help="evaluate one decoding strategy")
    _add_common(run)
    run.add_argument(
        "--strategy",
        required=True,
        help="base | naive | terminator | fix-<N> | real-min | pred-diff",
    )
    run.add_argument("--budget-table", type=Path, help="budget table from calibrate")
    run.add_argument("--binning", type=Path, help="binning file from calibrate")
    run.add_argument("--reference-log", type=Path, help="log supplying observed minimum spends")
    run.add_argument("--fix", type=int, help="constant deadline for the naive strategy")
    run.add_argument("--fallback-max", type=int, default=2000)
    run.add_argument("--judge", help="judge model spec for pred-diff, e.g. remote:<name>")

    rep = sub.add_parser("report", help="metrics tables and relative changes over run logs")
    rep.add_argument("--logs", nargs="+", required=True, type=Path)
    rep.add_argument("--out-dir", type=Path, help="also write report.txt and CSVs here")
    rep.add_argument("--pass-k", default="5,10", help="comma-separated k values")
    rep.add_argument(
        "--og-all-samples",
        action="store_true",
        help="let incorrect samples define the observed minimum spend",
    )
    rep.add_argument("--binning", type=Path, help="binning file supplying question difficulties")

    exp = sub.add_parser("export", help="figure-data CSVs for one log")
    exp.add_argument("--log", required=True, type=Path)
    exp.add_argument("--binning", required=True, type=Path)
    exp.add_argument("--out-dir", type=Path, default=Path("out"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "calibrate":
            result = cmd_calibrate(_config_from_args(args))
            print(f"calibration log: {result.log_path} ({len(result.log)} records)")
            print(f"binning: {result.binning_path}")
            print(f"budget table: {result.table_path}")
            for bin_ in result.table.bins:
                print(
                    f"  bin {bin_.index:>2}  edge {bin_.upper_edge:.3f}  "
                    f"budget {bin_.budget:>6}  support {bin_.support}"
                )
        elif args.command == "run":
            config = _config_from_args(args, strategy=args.strategy)
            log, path = cmd_run(config)
            mean_spend = sum(r.spend for r in log) / len(log) if len(log) else 0.0
            print(f"run log: {path} ({len(log)} records, mean spend {mean_spend:.1f})")
        elif args.command == "report":
            logs = [load_log(p) for p in args.logs]
            difficulties = None
            if args.binning is not None:
                _, difficulties = load_binning(args.binning)
            result = cmd_report(
                logs,
                out_dir=args.out_dir,
                ks=_parse_ks(args.pass_k),
                og_correct_only=not args.og_all_samples,
                difficulties=difficulties,
            )
            print(result.text)
            for name, path in result.paths.items():
                print(f"wrote {name}: {path}")
        elif args.command == "export":
            log = load_log(args.log)
            _, difficulties = load_binning(args.binning)
            paths = cmd_export(log, difficulties, args.out_dir)
            for name, path in paths.items():
                print(f"wrote {name}: {path}")
    except TokenDeadlineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
