"""Command-line interface.

Exit codes: 0 success, 1 invalid input, 2 invalid sample, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import __version__
from .errors import (
    ContractViolation,
    IbgpConvError,
    InconclusiveConvergenceError,
    MalformedTraceError,
    MappingError,
    ModelError,
    NonConvergenceError,
    SampleInvalidError,
    ScenarioError,
    TraceFormatError,
)
from .experiment import (
    Experiment,
    analyze_traces,
    dump_json,
    propagation_csv,
    summary_csv,
    total_propagation_delays,
    write_report_files,
)
from .scenario import load_scenario, preset_names
from .traceio import HardwareMapping, load_trace, validate_trace

EXIT_OK = 0
EXIT_INVALID_INPUT = 1
EXIT_INVALID_SAMPLE = 2
EXIT_INTERNAL = 3

_INPUT_ERRORS = (
    ScenarioError, ModelError, NonConvergenceError, TraceFormatError, MappingError,
    MalformedTraceError, ContractViolation, OSError, json.JSONDecodeError,
)
_SAMPLE_ERRORS = (SampleInvalidError, InconclusiveConvergenceError)


def seconds_to_us(text: str) -> int:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a number of seconds: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return int(value * 1_000_000)


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


class _Parser(argparse.ArgumentParser):
    """Usage errors are invalid input (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ibgpconv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a scenario and write traces and reports")
    sim.add_argument("--scenario", required=True, help="scenario file or preset name")
    sim.add_argument("--out", required=True, type=Path, help="output directory")
    sim.add_argument("--seed", type=_seed)
    sim.add_argument("--samples", type=_positive)
    sim.add_argument("--rate", type=_positive, help="probe rate in packets per second")
    sim.add_argument("--quiet-window", type=seconds_to_us, help="seconds of BGP silence that mark convergence")
    sim.add_argument("--no-traces", action="store_true", help="write reports only")

    ana = sub.add_parser("analyze", help="analyze captured traces")
    ana.add_argument("traces", nargs="+", type=Path)
    ana.add_argument("--mapping", type=Path, help="hardware mapping (default: mapping.json beside the first trace)")
    ana.add_argument("--out", type=Path, help="output directory (default: print report JSON)")
    ana.add_argument("--quiet-window", type=seconds_to_us, default=10_000_000)

    prop = sub.add_parser("propagation", help="per-router total propagation delay table")
    prop.add_argument("--scenario", required=True)
    prop.add_argument("--out", type=Path, help="CSV file (default: stdout)")

    stats = sub.add_parser("stats", help="percentile rows from one or more reports")
    stats.add_argument("reports", nargs="+", type=Path)
    stats.add_argument("--out", type=Path, help="CSV file (default: stdout)")

    val = sub.add_parser("validate", help="validate a scenario or a trace")
    val.add_argument("traces", nargs="*", type=Path)
    val.add_argument("--scenario")
    val.add_argument("--mapping", type=Path)

    sub.add_parser("presets", help="list shipped scenario presets")
    return parser


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario).with_overrides(
        seed=args.seed, samples=args.samples, rate_pps=args.rate, quiet_window=args.quiet_window
    )
    report = Experiment(scenario).run(args.out, write_traces=not args.no_traces)
    excluded = report["excluded_samples"]
    if excluded:
        print(f"invalid samples: {excluded}", file=sys.stderr)
        return EXIT_INVALID_SAMPLE
    return EXIT_OK


def cmd_analyze(args) -> int:
    mapping = args.mapping or args.traces[0].parent / "mapping.json"
    report = analyze_traces(args.traces, mapping, args.quiet_window)
    if args.out is None:
        sys.stdout.write(dump_json(report))
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        write_report_files(report, args.out)
    if report["excluded_samples"]:
        for sample in report["samples"]:
            for note in sample.get("notes", []):
                print(f"sample {sample['index']}: {note}", file=sys.stderr)
        return EXIT_INVALID_SAMPLE
    return EXIT_OK


def cmd_propagation(args) -> int:
    _emit(propagation_csv(total_propagation_delays(load_scenario(args.scenario))), args.out)
    return EXIT_OK


def cmd_stats(args) -> int:
    reports = [json.loads(p.read_text()) for p in args.reports]
    _emit(summary_csv(reports), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.scenario is None and not args.traces:
        raise ScenarioError("give --scenario and/or trace files")
    if args.scenario is not None:
        scenario = load_scenario(args.scenario)
        Experiment(scenario)  # builds the initial state, so non-convergence surfaces here
        print(f"scenario {scenario.name}: ok")
    status = EXIT_OK
    for path in args.traces:
        mapping = HardwareMapping.load(args.mapping or path.parent / "mapping.json")
        findings = validate_trace(load_trace(path), mapping)
        print(json.dumps({"trace": str(path), "findings": [f.as_dict() for f in findings]}, sort_keys=True))
        if findings:
            status = EXIT_INVALID_SAMPLE
    return status


def cmd_presets(args) -> int:
    for name in preset_names():
        print(name)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "propagation": cmd_propagation,
    "stats": cmd_stats,
    "validate": cmd_validate,
    "presets": cmd_presets,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _SAMPLE_ERRORS as exc:
        print(f"error: invalid sample: {exc}", file=sys.stderr)
        return EXIT_INVALID_SAMPLE
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except IbgpConvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
