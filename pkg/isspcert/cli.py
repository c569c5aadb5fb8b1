"""Command-line front end: ``isspcert run <config.json>``.

Exit status is 0 on success, 1 when the experiment itself fails, 2 when the
configuration is invalid and 3 when a run finishes but some analytic bound
lies above its empirical confidence interval.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, List, Optional, Union

from pydantic import ValidationError

from isspcert.executor import Executor
from isspcert.experiments import ConfigError, ExperimentConfig, ExperimentOutcome
from isspcert.observers import (
    LoggingReporter,
    MarginMeter,
    Meter,
    SoundnessMeter,
    TimingMeter,
)
from isspcert.runner import ExperimentRunner
from isspcert.types import IsspError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2
EXIT_UNSOUND = 3


def _line_of(text: str, loc: Sequence[Union[int, str]]) -> int:
    """Best-effort line of the innermost key in ``loc``; 1 when not found."""
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return 1
    needle = json.dumps(keys[-1])
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return 1


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse and validate a config file.

    Every problem is reported as ``path:line: message``; all of them are
    collected into one :class:`ConfigError`.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        lines = []
        for err in e.errors():
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{path}:{_line_of(text, err['loc'])}: {where}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isspcert",
        description="Certify stochastic stability and check the bounds by simulation.",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log debug detail to stderr"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the experiment a JSON config names")
    run.add_argument("config", type=Path, help="experiment config (JSON)")
    run.add_argument("--seed", type=int, help="override the config's master seed")
    run.add_argument("--out", type=Path, help="output directory (config 'output')")
    run.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker threads; results do not depend on it (default: 1)",
    )
    run.add_argument("--quiet", action="store_true", help="print no summary")
    run.add_argument(
        "--logfire", action="store_true", help="send a span per run to Logfire"
    )
    return parser


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def print_summary(
    outcome: ExperimentOutcome, written: List[Path], elapsed: float
) -> None:
    """Analytic bound against the empirical fraction, one row per bound."""
    if outcome.bounds:
        print(
            f"{'label':<18} {'kind':<15} {'bound':>10} {'fraction':>10} "
            f"{'wilson 99%':>23}  status"
        )
        for row in outcome.bound_rows():
            label, kind, _, bound, *_, fraction, lo, hi, sound = row
            interval = f"[{_fmt(lo)}, {_fmt(hi)}]"
            print(
                f"{label:<18} {kind:<15} {_fmt(bound):>10} {_fmt(fraction):>10} "
                f"{interval:>23}  {'ok' if sound else 'VIOLATED'}"
            )
    for key, value in sorted(outcome.headline.items()):
        print(f"{key}: {_fmt(value)}")
    for path in written:
        print(f"wrote {path}")
    print(f"elapsed: {elapsed:.2f}s")


def _run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print(f"--seed must be in [0, 2**64), got {args.seed}", file=sys.stderr)
            return EXIT_INVALID
        config = config.model_copy(update={"seed": args.seed})
    if args.threads < 1:
        print(f"--threads must be >= 1, got {args.threads}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out if args.out is not None else Path(config.output)

    timing = TimingMeter()
    meters: List[Meter] = [
        timing,
        SoundnessMeter(),
        MarginMeter(),
    ]
    if args.logfire:
        try:
            from isspcert.integrations.logfire import LogfireMeter, LogfireMetricLogger
        except ImportError as e:
            print(e, file=sys.stderr)
            return EXIT_INVALID
        meters.append(LogfireMeter())

    with LoggingReporter(), Executor.for_threads(args.threads) as executor:
        runner = ExperimentRunner(executor, on_execute=meters)
        try:
            outcome = runner.run(config)
        except ConfigError as e:
            print(f"{args.config}: {e}", file=sys.stderr)
            return EXIT_INVALID
        except (IsspError, ValueError, ArithmeticError) as e:
            print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
            return EXIT_FAILED

    written = outcome.write(out)
    if args.logfire:
        LogfireMetricLogger().log(
            experiment=config.experiment.value,
            violations=len(outcome.violations),
            elapsed=timing.last,
        )
    if not args.quiet:
        print_summary(outcome, written, timing.last)
    for violation in outcome.violations:
        print(f"soundness violation: {violation}", file=sys.stderr)
    return EXIT_UNSOUND if outcome.violations else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    if getattr(args, "quiet", False) and not args.verbose:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "run":
        return _run(args)
    return EXIT_INVALID  # pragma: no cover
