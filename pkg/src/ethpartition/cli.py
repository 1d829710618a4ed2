"""Command-line entry point: ``ethpartition {run,validate,feasibility,gain}``.

Exit codes: 0 ok, 1 malformed input, 2 invalid or infeasible input, 3 I/O.
"""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import intel
from .analysis import (
    TABLE_COLUMNS,
    GridError,
    default_parallelism,
    emit_results,
    gain_series,
    project_gain,
    run_grid,
    success_matrix,
    summary_rows,
    trial_seed,
    cell_scenario,
)
from .attack import run_trial, validate_scenario
from .netsim import InfeasiblePlan
from .scenario import CONTENT_ERRORS, PRESET_NAMES, ScenarioParseError, data_path, load_scenario

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors count as malformed input
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


_UNITS = {"ms": 0.001, "s": 1, "sec": 1, "min": 60, "m": 60, "h": 3600, "hr": 3600, "d": 86400}


def parse_seconds(text: str) -> float:
    """``540``, ``9min``, ``10h`` -> seconds."""
    match = re.fullmatch(r"\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([a-z]*)\s*", text)
    if not match or match.group(2) not in ("",) + tuple(_UNITS):
        raise argparse.ArgumentTypeError(f"cannot read duration {text!r}")
    return float(match.group(1)) * _UNITS.get(match.group(2), 1)


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_globals(p: argparse.ArgumentParser, top: bool) -> None:
    # subcommands accept the same flags; SUPPRESS keeps a value given before the subcommand
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(None), help="master seed (overrides the scenario)")
    p.add_argument("--trials", type=int, default=d(None), help="trials per grid cell")
    p.add_argument("--out", type=Path, default=d(None), help="directory for result files")
    p.add_argument("--parallelism", type=int, default=d(None),
                   help="worker processes (default: available CPUs)")
    p.add_argument("--verbose-trace", action="store_true", default=d(False),
                   help="log every event of the first trial")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ethpartition", description="Partition double-spend simulator for Homestead-era Ethereum.")
    _add_globals(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario grid and print per-cell results")
    run.add_argument("scenario", help=f"scenario file or preset ({', '.join(PRESET_NAMES)})")
    run.add_argument("--durations", type=_floats, help="partition durations in minutes, comma separated")
    run.add_argument("--delays", type=_floats, help="link delays in ms for $delay links, comma separated")
    run.add_argument("--m", type=_ints, help="confirmation depths, comma separated")
    run.add_argument("--adversary", help="single adversary (overrides the grid's list)")
    run.add_argument("--format", choices=("csv", "tsv"), default="csv", help="table format for --out")
    _add_globals(run, top=False)

    val = sub.add_parser("validate", help="parse a scenario and check every cell is feasible")
    val.add_argument("scenario")
    _add_globals(val, top=False)

    feas = sub.add_parser("feasibility", help="maximum power separable by route hijacking")
    feas.add_argument("pools", nargs="?", type=Path, default=None,
                      help="pool/stratum dataset (default: shipped top-10 table)")
    feas.add_argument("peering", nargs="?", type=Path, default=None,
                      help="AS adjacency file (default: shipped illustrative file)")
    _add_globals(feas, top=False)

    gain = sub.add_parser("gain", help="project the attacker's fund over repeated attacks")
    gain.add_argument("-p", type=float, required=True, help="per-attack success probability")
    gain.add_argument("-T", type=parse_seconds, required=True, help="attack length, e.g. 9min")
    gain.add_argument("-t", type=parse_seconds, required=True, help="horizon, e.g. 10h")
    gain.add_argument("--y0", type=float, default=1.0, help="initial fund")
    _add_globals(gain, top=False)
    return parser


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return "\n".join(fmt.format(*r) for r in [list(header), *rows])


def _load_grid(args):
    scenario, grid = load_scenario(args.scenario)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.trials is not None:
        if args.trials < 1:
            raise ScenarioParseError("--trials must be >= 1")
        changes["trials"] = args.trials
    if getattr(args, "durations", None):
        changes["durations"] = tuple(60.0 * d for d in args.durations)
    if getattr(args, "delays", None):
        changes["delays"] = tuple(args.delays)
    if getattr(args, "m", None):
        changes["m_values"] = tuple(args.m)
    if getattr(args, "adversary", None):
        changes["adversaries"] = (args.adversary,)
    return replace(grid, **changes)


def cmd_validate(args) -> int:
    grid = _load_grid(args)
    seen = set()
    for cell in grid.cells():
        try:
            resolved = validate_scenario(cell_scenario(grid, cell))
        except Exception as exc:
            raise GridError(cell, exc) from exc
        a = resolved.attack
        key = (a.adversary, a.group_a, a.group_b)
        if key in seen:
            continue
        seen.add(key)
        dist = resolved.distribution
        print(
            f"adversary {a.adversary}: A={','.join(a.group_a)} ({100 * dist.power_of(a.group_a):.2f}%)"
            f" B={','.join(a.group_b)} ({100 * dist.power_of(a.group_b):.2f}%) merchant={a.merchant}"
        )
    print(f"{grid.scenario.name}: {len(grid.cells())} cells x {grid.trials} trials, all feasible")
    return EXIT_OK


def cmd_run(args) -> int:
    grid = _load_grid(args)
    parallelism = args.parallelism or default_parallelism()
    if parallelism < 1:
        raise ScenarioParseError("--parallelism must be >= 1")
    summaries, results = run_grid(grid, parallelism=parallelism)
    print(f"{grid.scenario.name}: {grid.trials} trials per cell, master seed {grid.master_seed}")
    header, rows = success_matrix(summaries)
    print(_table(header, rows))
    print()
    print(_table(TABLE_COLUMNS, summary_rows(summaries)))
    if args.verbose_trace:
        cell = grid.cells()[0]
        trace: List[str] = []
        run_trial(validate_scenario(cell_scenario(grid, cell)), trial_seed(grid.master_seed, cell.adversary, 0), trace)
        text = "\n".join(trace) + "\n"
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "trace.log").write_text(text)
        else:
            sys.stderr.write(text)
    if args.out:
        written = emit_results(summaries, results, args.out, args.format)
        print(f"\nwrote {len(written)} files under {args.out}")
    return EXIT_OK


def cmd_feasibility(args) -> int:
    pools_path = args.pools or data_path("intel", "table1_pools.csv")
    peering_path = args.peering or data_path("intel", "as_peering_illustrative.csv")
    pools, graph = intel.ingest_pool_dataset(pools_path, peering_path)
    report = intel.feasibility_report(graph, pools)
    text = report.render()
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "feasibility.txt").write_text(text + "\n")
    return EXIT_OK


def cmd_gain(args) -> int:
    total = project_gain(args.p, args.T, args.t, args.y0)
    print(f"p={args.p:g} T={args.T:g}s t={args.t:g}s y0={args.y0:g}")
    print(f"continuous: {total:.6g} ({total / args.y0:,.2f} fold)")
    print("per-attempt:")
    print(_table(["attempt", "elapsed_s", "fund"], [[str(i), f"{e:g}", f"{y:.6g}"] for i, e, y in gain_series(args.p, args.T, args.t, args.y0)]))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "feasibility": cmd_feasibility, "gain": cmd_gain}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioParseError, intel.IntelParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except GridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE if isinstance(exc.cause, ScenarioParseError) else EXIT_INVALID
    except (InfeasiblePlan, intel.IntelError, *CONTENT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # argument values rejected by the model, e.g. T=0
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
