"""Monte Carlo grid runner, per-cell statistics, result files and gain projection."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from scipy.stats import binomtest

from .attack import ScenarioConfig, TrialResult, run_trial, validate_scenario


class GridError(ValueError):
    """A grid cell failed validation; ``cell`` names it."""

    def __init__(self, cell: "Cell", cause: Exception):
        super().__init__(f"cell {cell.label()}: {cause}")
        self.cell = cell
        self.cause = cause


@dataclass(frozen=True)
class ExperimentGrid:
    scenario: ScenarioConfig
    durations: Tuple[float, ...]
    delays: Tuple[Optional[float], ...] = (None,)
    m_values: Tuple[int, ...] = (12,)
    trials: int = 30
    master_seed: int = 0
    adversaries: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.durations or not self.delays or not self.m_values:
            raise ValueError("experiment grid axes must be non-empty")
        if self.trials < 1:
            raise ValueError("trials per cell must be >= 1")

    def cells(self) -> List["Cell"]:
        advs = self.adversaries or (self.scenario.attack.adversary,)
        return [
            Cell(a, d, delay, m)
            for a, delay, d, m in itertools.product(advs, self.delays, self.durations, self.m_values)
        ]


@dataclass(frozen=True)
class Cell:
    adversary: str
    duration: float
    delay_ms: Optional[float]
    m: int

    def label(self) -> str:
        delay = "-" if self.delay_ms is None else f"{self.delay_ms:g}ms"
        return f"adv={self.adversary} duration={self.duration:g}s delay={delay} m={self.m}"


@dataclass
class CellSummary:
    adversary: str
    duration: float
    delay_ms: Optional[float]
    m: int
    trials: int
    successes: int
    success_rate: float
    ci_low: float
    ci_high: float
    commit_rate: float
    mean_blocks_adversary: float
    mean_blocks_victim: float
    mean_stale_adversary: float
    mean_stale_victim: float
    mean_victim_difficulty: float
    detect_rate: Optional[float] = None


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    ci = binomtest(successes, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def trial_seed(master_seed: int, adversary: str, index: int) -> int:
    """Seed for trial ``index``.

    Duration, delay and confirmation depth are deliberately left out, so a
    given trial index replays the same mining randomness across those axes
    and comparisons between them are paired.
    """
    digest = hashlib.sha256(f"{master_seed}|{adversary}|{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def cell_scenario(grid: ExperimentGrid, cell: Cell) -> ScenarioConfig:
    base = grid.scenario
    attack = replace(base.attack, duration=cell.duration, confirmations=cell.m)
    if cell.adversary != base.attack.adversary:
        # a different adversary needs its own balanced split
        attack = replace(attack, adversary=cell.adversary, group_a=None, group_b=None, merchant=None)
    return replace(base, attack=attack, delay_ms=cell.delay_ms)


def summarize(cell: Cell, results: Sequence[TrialResult]) -> CellSummary:
    n = len(results)
    wins = sum(r.success for r in results)
    lo, hi = wilson_interval(wins, n)
    probes = [r.probe_outcome for r in results if r.probe_outcome is not None]
    detect = None
    if probes:
        detect = sum(p != "consistent" for p in probes) / len(probes)
    return CellSummary(
        adversary=cell.adversary,
        duration=cell.duration,
        delay_ms=cell.delay_ms,
        m=cell.m,
        trials=n,
        successes=wins,
        success_rate=wins / n,
        ci_low=lo,
        ci_high=hi,
        commit_rate=sum(r.victim_committed for r in results) / n,
        mean_blocks_adversary=sum(r.blocks_adversary_side for r in results) / n,
        mean_blocks_victim=sum(r.blocks_victim_side for r in results) / n,
        mean_stale_adversary=sum(r.stale_adversary_side for r in results) / n,
        mean_stale_victim=sum(r.stale_victim_side for r in results) / n,
        mean_victim_difficulty=sum(r.victim_difficulty for r in results) / n,
        detect_rate=detect,
    )


def _run_job(job: Tuple[ScenarioConfig, int]) -> TrialResult:
    scenario, seed = job
    return run_trial(scenario, seed)


def default_parallelism() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_grid(
    grid: ExperimentGrid, parallelism: int = 1
) -> Tuple[List[CellSummary], List[TrialResult]]:
    """Run every cell of ``grid``; results are ordered by (cell, trial index)."""
    jobs: List[Tuple[ScenarioConfig, int]] = []
    cells = grid.cells()
    for cell in cells:
        try:
            scenario = validate_scenario(cell_scenario(grid, cell))
        except Exception as exc:  # tagged and re-raised for the caller
            raise GridError(cell, exc) from exc
        jobs.extend((scenario, trial_seed(grid.master_seed, cell.adversary, i)) for i in range(grid.trials))
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (parallelism * 8))))
    else:
        results = [_run_job(job) for job in jobs]
    summaries = [
        summarize(cell, results[i * grid.trials : (i + 1) * grid.trials]) for i, cell in enumerate(cells)
    ]
    return summaries, results


# --------------------------------------------------------------------------- gain


def _exponent(t: float, T: float) -> Fraction | float:
    try:
        return Fraction(t) / Fraction(T)
    except (TypeError, ValueError, OverflowError):
        return t / T


def gain_factor(p: float) -> float:
    return 1 + (2 * p - 1) / 3


def project_gain(p: float, T: float, t: float, y0: float = 1.0) -> float:
    """Fund after attacking back to back for ``t`` seconds with ``T``-second attacks.

    Each attempt stakes a third of the fund and wins it back doubled with
    probability ``p``, so the fund grows by (1 + (2p - 1) / 3) per attempt.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"success probability must be in [0, 1], got {p}")
    if T <= 0:
        raise ValueError(f"attack duration must be positive, got {T}")
    if t < 0:
        raise ValueError(f"horizon must be non-negative, got {t}")
    if y0 <= 0:
        raise ValueError(f"initial fund must be positive, got {y0}")
    exponent = _exponent(t, T)
    if isinstance(exponent, Fraction) and exponent.denominator == 1:
        return gain_after(p, int(exponent), y0)
    return gain_factor(p) ** float(exponent) * y0


def gain_after(p: float, attempts: int, y0: float = 1.0) -> float:
    """Fund after ``attempts`` whole attempts."""
    if attempts < 0:
        raise ValueError("attempts must be non-negative")
    return gain_factor(p) ** attempts * y0


def gain_series(p: float, T: float, t: float, y0: float = 1.0) -> List[Tuple[int, float, float]]:
    """(attempt, elapsed seconds, fund) for every whole attempt within ``t``."""
    attempts = int(_exponent(t, T))
    return [(i, i * T, gain_after(p, i, y0)) for i in range(attempts + 1)]


# --------------------------------------------------------------------------- output

TABLE_COLUMNS = [
    "adversary",
    "delay_ms",
    "duration_s",
    "m",
    "trials",
    "successes",
    "success_rate",
    "ci_low",
    "ci_high",
    "commit_rate",
    "mean_blocks_adversary",
    "mean_blocks_victim",
    "mean_stale_adversary",
    "mean_stale_victim",
    "mean_victim_difficulty",
    "detect_rate",
]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def summary_rows(summaries: Sequence[CellSummary]) -> List[List[str]]:
    rows = []
    for s in summaries:
        rows.append(
            [
                s.adversary,
                _fmt(s.delay_ms),
                _fmt(s.duration),
                str(s.m),
                str(s.trials),
                str(s.successes),
                _fmt(s.success_rate),
                _fmt(s.ci_low),
                _fmt(s.ci_high),
                _fmt(s.commit_rate),
                _fmt(s.mean_blocks_adversary),
                _fmt(s.mean_blocks_victim),
                _fmt(s.mean_stale_adversary),
                _fmt(s.mean_stale_victim),
                _fmt(s.mean_victim_difficulty),
                _fmt(s.detect_rate),
            ]
        )
    return rows


def success_matrix(summaries: Sequence[CellSummary]) -> Tuple[List[str], List[List[str]]]:
    """Success rates laid out as rows per (adversary, delay, m) and one column per duration."""
    durations = sorted({s.duration for s in summaries})
    header = ["adversary", "delay_ms", "m"] + [f"{d / 60:g}min" for d in durations]
    rows: Dict[tuple, Dict[float, float]] = {}
    for s in summaries:
        rows.setdefault((s.adversary, s.delay_ms, s.m), {})[s.duration] = s.success_rate
    out = []
    for (adv, delay, m), cells in rows.items():
        out.append(
            [adv, _fmt(delay), str(m)]
            + [f"{100 * cells[d]:.1f}%" if d in cells else "" for d in durations]
        )
    return header, out


def emit_results(
    summaries: Sequence[CellSummary],
    trials: Sequence[TrialResult],
    out_dir: Path,
    fmt: str = "csv",
) -> Dict[str, Path]:
    """Write tables/, trials/ and plotdata/ under ``out_dir``; return the files written."""
    if not summaries:
        raise ValueError("nothing to write")
    delim = "\t" if fmt == "tsv" else ","
    ext = "tsv" if fmt == "tsv" else "csv"
    out_dir = Path(out_dir)
    written: Dict[str, Path] = {}
    for sub in ("tables", "trials", "plotdata"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    path = out_dir / "tables" / f"cells.{ext}"
    with path.open("w", newline="") as f:
        w = csv.writer(f, delimiter=delim, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        w.writerows(summary_rows(summaries))
    written["cells"] = path

    header, rows = success_matrix(summaries)
    path = out_dir / "tables" / f"success_rate.{ext}"
    with path.open("w", newline="") as f:
        w = csv.writer(f, delimiter=delim, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    written["success_rate"] = path

    path = out_dir / "trials" / "trials.jsonl"
    write_trial_records(trials, path)
    written["trials"] = path

    path = out_dir / "plotdata" / f"block_counts.{ext}"
    with path.open("w", newline="") as f:
        w = csv.writer(f, delimiter=delim, lineterminator="\n")
        w.writerow(["adversary", "delay_ms", "m", "duration_min", "adversary_blocks", "victim_blocks", "confirmation_line"])
        for s in summaries:
            w.writerow(
                [
                    s.adversary,
                    _fmt(s.delay_ms),
                    s.m,
                    _fmt(s.duration / 60),
                    _fmt(s.mean_blocks_adversary),
                    _fmt(s.mean_blocks_victim),
                    s.m,
                ]
            )
    written["block_counts"] = path

    path = out_dir / "plotdata" / f"difficulty.{ext}"
    with path.open("w", newline="") as f:
        w = csv.writer(f, delimiter=delim, lineterminator="\n")
        w.writerow(["seed", "duration_s", "delay_ms", "time_s", "difficulty", "side"])
        seen = set()
        for r in trials:
            # one representative trace per cell keeps the file small
            key = (r.adversary, r.duration, r.delay_ms, r.m)
            if key in seen:
                continue
            seen.add(key)
            for t, d, side in r.difficulty_series:
                w.writerow([r.seed, _fmt(r.duration), _fmt(r.delay_ms), _fmt(t), d, side])
    written["difficulty"] = path
    return written


def write_trial_records(trials: Iterable[TrialResult], path: Path) -> None:
    with Path(path).open("w") as f:
        for r in trials:
            f.write(json.dumps(r.to_record(), sort_keys=True, separators=(",", ":")) + "\n")


def read_trial_records(path: Path) -> List[TrialResult]:
    with Path(path).open() as f:
        return [TrialResult.from_record(json.loads(line)) for line in f if line.strip()]
