"""Power-weighted proof-of-work block production.

Puzzle solving is a memoryless race: a miner with share ``w`` of a network
producing ``H`` hashes per second finds a block at rate ``w * H / D`` on a
head whose difficulty is ``D``.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

from .chain import (
    HOMESTEAD,
    Block,
    BlockTree,
    HomesteadParams,
    Transaction,
    child_timestamp,
    compute_difficulty,
    includable,
)

HONEST = "honest"
ADVERSARY = "adversary"


class PowerError(ValueError):
    pass


@dataclass(frozen=True)
class MinerSpec:
    id: str
    power: float
    role: str = HONEST
    name: str = ""
    asn: Optional[int] = None


@dataclass(frozen=True)
class PowerDistribution:
    entries: tuple
    total_hashrate: float = 1.0

    def __post_init__(self) -> None:
        if not self.entries:
            raise PowerError("power distribution has no miners")
        if self.total_hashrate <= 0:
            raise PowerError("total hashrate must be positive")
        total = sum(e.power for e in self.entries)
        if abs(total - 1.0) > 1e-9:
            raise PowerError(f"miner powers sum to {total}, expected 1")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise PowerError("duplicate miner ids in power distribution")

    def __getitem__(self, miner_id: str) -> MinerSpec:
        for entry in self.entries:
            if entry.id == miner_id:
                return entry
        raise KeyError(miner_id)

    def __contains__(self, miner_id: object) -> bool:
        return any(e.id == miner_id for e in self.entries)

    @property
    def ids(self) -> List[str]:
        return [e.id for e in self.entries]

    def power_of(self, ids: Iterable[str]) -> float:
        wanted = set(ids)
        return sum(e.power for e in self.entries if e.id in wanted)

    def calibrated(self, initial_difficulty: int, target_block_time: float) -> "PowerDistribution":
        """Copy whose hashrate makes the whole network average ``target_block_time`` at ``initial_difficulty``."""
        return replace(self, total_hashrate=initial_difficulty / target_block_time)

    def with_roles(self, adversary: Optional[str]) -> "PowerDistribution":
        entries = tuple(replace(e, role=ADVERSARY if e.id == adversary else HONEST) for e in self.entries)
        return replace(self, entries=entries)


def _rows_from_source(source: Union[str, Path, Sequence[Mapping[str, str]]]) -> List[Mapping[str, str]]:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
        return list(csv.DictReader(io.StringIO(text), skipinitialspace=True))
    return list(source)


def load_power_distribution(
    source: Union[str, Path, Sequence[Mapping[str, str]]],
    total_hashrate: float = 1.0,
) -> PowerDistribution:
    """Read ``name, power, node, as`` rows and normalise the percentages to shares.

    ``source`` is a CSV path or an iterable of row mappings. ``node`` defaults
    to the name and ``as`` is optional.
    """
    rows = _rows_from_source(source)
    if not rows:
        raise PowerError("power distribution source has no rows")
    parsed = []
    for row in rows:
        name = (row.get("name") or "").strip()
        if not name:
            raise PowerError(f"row without a miner name: {dict(row)}")
        raw = row.get("power")
        try:
            pct = float(raw)  # type: ignore[arg-type]
        except (TypeError, ValueError):
            raise PowerError(f"{name}: power {raw!r} is not numeric") from None
        if not math.isfinite(pct) or pct <= 0:
            raise PowerError(f"{name}: power must be positive, got {raw!r}")
        node = (row.get("node") or "").strip() or name
        asn_raw = (row.get("as") or "").strip()
        asn = int(asn_raw) if asn_raw else None
        parsed.append((name, pct, node, asn))
    total = sum(p for _, p, _, _ in parsed)
    entries = tuple(MinerSpec(node, pct / total, HONEST, name, asn) for name, pct, node, asn in parsed)
    # absorb rounding so the shares sum to 1 within float tolerance
    drift = 1.0 - sum(e.power for e in entries)
    if drift:
        last = entries[-1]
        entries = entries[:-1] + (replace(last, power=last.power + drift),)
    return PowerDistribution(entries, total_hashrate)


def equal_distribution(ids: Sequence[str], total_hashrate: float = 1.0) -> PowerDistribution:
    return load_power_distribution([{"name": i, "power": "1"} for i in ids], total_hashrate)


def mining_rate(power: float, total_hashrate: float, difficulty: int) -> float:
    """Blocks per second for one miner."""
    if difficulty <= 0:
        raise PowerError(f"difficulty must be positive, got {difficulty}")
    if power <= 0 or total_hashrate <= 0:
        raise PowerError("power and hashrate must be positive")
    return power * total_hashrate / difficulty


def next_block_delay(rng: random.Random, power: float, total_hashrate: float, difficulty: int) -> float:
    """Seconds until ``power`` finds a block at ``difficulty``; exponentially distributed."""
    return rng.expovariate(1.0) / mining_rate(power, total_hashrate, difficulty)


@dataclass
class WorkRace:
    """One miner's search process on its current head.

    The miner draws an Exp(1) amount of work per block from its own stream.
    Switching heads rescales the unfinished work to the new rate instead of
    redrawing it, which is equivalent in distribution (memorylessness) and
    keeps each miner's draws aligned across scenarios that share a seed.
    """

    rng: random.Random
    power: float
    total_hashrate: float
    work_left: float = field(init=False)
    rate: float = field(default=0.0, init=False)
    since: float = field(default=0.0, init=False)

    def __post_init__(self) -> None:
        self.work_left = self.rng.expovariate(1.0)

    def retarget(self, now: float, difficulty: int) -> float:
        """Switch to a head of ``difficulty`` at time ``now`` (s); return the find time."""
        if self.rate:
            self.work_left = max(self.work_left - (now - self.since) * self.rate, 0.0)
        self.rate = mining_rate(self.power, self.total_hashrate, difficulty)
        self.since = now
        return now + self.work_left / self.rate

    def solved(self, now: float, difficulty: int) -> float:
        """Record a found block at ``now`` and start on a child of ``difficulty``."""
        self.work_left = self.rng.expovariate(1.0)
        self.rate = 0.0
        return self.retarget(now, difficulty)


def mine_on(
    miner: str,
    tree: BlockTree,
    now: float,
    block_id: str,
    pending: Sequence[str] = (),
    txs: Optional[Mapping[str, Transaction]] = None,
    balances: Optional[Mapping[str, int]] = None,
    params: HomesteadParams = HOMESTEAD,
) -> Block:
    """Build the block ``miner`` finds at time ``now`` (s) on its local head."""
    parent = tree.head_block
    timestamp = child_timestamp(parent.timestamp, now)
    number = parent.number + 1
    difficulty = compute_difficulty(parent.difficulty, timestamp - parent.timestamp, number, params)
    uncles = tuple(tree.eligible_uncles(parent.id)[: params.max_uncles])
    chosen = includable(tree, parent.id, pending, txs or {}, balances or {}) if pending else []
    return Block(block_id, parent.id, number, timestamp, difficulty, miner, uncles, tuple(chosen))


def block_shares(blocks: Iterable[Block], miners: Iterable[str]) -> Dict[str, float]:
    counts = {m: 0 for m in miners}
    n = 0
    for block in blocks:
        if block.miner in counts:
            counts[block.miner] += 1
            n += 1
    return {m: c / n if n else 0.0 for m, c in counts.items()}
