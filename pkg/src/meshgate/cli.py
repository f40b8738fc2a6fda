"""Command-line runner: simulate scenarios, compare reports, print overhead budgets.

Exit codes: 0 ok, 2 usage, 3 scenario or report could not be read, 4 scenario
invalid, 5 simulation aborted, 6 reports describe different scenarios.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from meshgate import __version__, overhead
from meshgate.report import RunReport, ScenarioMismatch, compare, format_comparison, format_report, summarize
from meshgate.selection import Strategy
from meshgate.simnet.engine import SimulationAborted, simulate
from meshgate.simnet.metrics import downloads_csv, ecdf_csv, rounds_csv, rounds_jsonl
from meshgate.simnet.scenario import Scenario, ScenarioError, resolve_scenario, validate_scenario

log = logging.getLogger("meshgate")

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_INVALID = 4
EXIT_ABORTED = 5
EXIT_MISMATCH = 6

OUT_ENV = "MESHGATE_OUT"
DEFAULT_OUT = "meshgate-runs"


def _load(ref: str) -> Scenario:
    try:
        return resolve_scenario(ref)
    except ScenarioError as exc:
        raise _Exit(EXIT_PARSE, f"{ref}: {exc}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise _Exit(EXIT_PARSE, f"{ref}: {exc}") from None


def _check(scenario: Scenario, ref: str) -> None:
    problems = validate_scenario(scenario)
    if problems:
        raise _Exit(EXIT_INVALID, "\n".join(f"{ref}: {p}" for p in problems))


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _run_one(scenario: Scenario, strategy: str, seed: int, out_dir: Path, jsonl: bool):
    result = simulate(scenario, seed=seed, strategy=strategy)
    digest = scenario.content_hash()
    proxies = scenario.topology.proxies
    target = out_dir / strategy
    target.mkdir(parents=True, exist_ok=True)
    (target / "rounds.csv").write_text(rounds_csv(result.rounds, proxies, digest), encoding="utf-8")
    (target / "downloads.csv").write_text(downloads_csv(result.downloads, digest), encoding="utf-8")
    done = [d.download_ms for d in result.downloads if d.status == "completed"]
    (target / "ecdf.csv").write_text(ecdf_csv(done, digest), encoding="utf-8")
    if jsonl:
        (target / "rounds.jsonl").write_text(rounds_jsonl(result.rounds), encoding="utf-8")
    for w in result.warnings:
        log.info("%s: %s", strategy, w)
    return summarize(result)


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    _check(scenario, args.scenario)
    seed = scenario.seed if args.seed is None else args.seed
    strategies = args.strategy or list(scenario.strategies)
    for s in strategies:
        try:
            Strategy(s)
        except ValueError:
            raise _Exit(EXIT_INVALID, f"unknown strategy {s!r}") from None

    base = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out_dir = base / f"{scenario.name}-seed{seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.jobs > 1 and len(strategies) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_run_one, scenario, s, seed, out_dir, args.jsonl) for s in strategies]
                summaries = [f.result() for f in futures]
        else:
            summaries = [_run_one(scenario, s, seed, out_dir, args.jsonl) for s in strategies]
    except SimulationAborted as exc:
        raise _Exit(EXIT_ABORTED, f"simulation aborted: {exc}") from None

    report = RunReport(scenario.name, scenario.content_hash(), seed, summaries)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    text = format_report(report)
    (out_dir / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    sys.stdout.write(f"wrote {out_dir}\n")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    reports = []
    for path in args.reports:
        try:
            reports.append(RunReport.load(path))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise _Exit(EXIT_PARSE, f"{path}: cannot read report: {exc}") from None
    try:
        cmp = compare(reports)
    except ScenarioMismatch as exc:
        raise _Exit(EXIT_MISMATCH, str(exc)) from None
    except ValueError as exc:
        raise _Exit(EXIT_INVALID, str(exc)) from None
    sys.stdout.write(format_comparison(cmp))
    return EXIT_OK


def cmd_overhead(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    _check(scenario, args.scenario)
    sys.stdout.write(overhead.format_report(overhead.predict(scenario)) + "\n")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    _check(scenario, args.scenario)
    sys.stdout.write(f"{args.scenario}: ok (hash {scenario.content_hash()})\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshgate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log aborted requests and probes")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write metrics")
    run.add_argument("scenario", help="scenario file, or the name of a packaged scenario")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument(
        "--strategy",
        action="append",
        choices=[s.value for s in Strategy],
        help="strategy to run (repeatable; default: the scenario's list)",
    )
    run.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    run.add_argument("--jobs", type=int, default=1, help="run strategies in parallel processes")
    run.add_argument("--jsonl", action="store_true", help="also write line-delimited round records")
    run.set_defaults(func=cmd_run)

    cmp = sub.add_parser("compare", help="side-by-side table of run reports")
    cmp.add_argument("reports", nargs="+", help="report.json files from `run`")
    cmp.set_defaults(func=cmd_compare)

    ov = sub.add_parser("overhead", help="analytical overhead budget for a scenario")
    ov.add_argument("scenario")
    ov.set_defaults(func=cmd_overhead)

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("scenario")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _Exit as exc:
        print(f"meshgate: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
