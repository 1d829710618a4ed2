"""Balance Attack orchestration on top of the network simulator.

One trial: warm up an unpartitioned network, split it into two subgroups of
similar mining power with the adversary in the middle, send one of two
conflicting payments to each side, let the victim side bury its payment,
heal, and check whether the payment vanished from the final canonical chain.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .chain import Block, BlockTree, HomesteadParams, HOMESTEAD, Transaction
from .mining import PowerDistribution
from .netsim import (
    ARP_SPOOF,
    BGP_HIJACK,
    Event,
    InfeasiblePlan,
    PartitionPlan,
    Simulation,
    Topology,
    check_plan,
    propagate,
)

ADVERSARY_SIDE = "adversary"
VICTIM_SIDE = "victim"

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"
UNREACHABLE_MAJORITY = "unreachable-majority"

WALLET = "adversary-wallet"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    adversary: str
    vector: str = BGP_HIJACK
    duration: float = 420.0
    confirmations: int = 12
    spend_fraction: float = 0.6
    group_a: Optional[Tuple[str, ...]] = None
    group_b: Optional[Tuple[str, ...]] = None
    merchant: Optional[str] = None
    probe_nodes: Tuple[str, ...] = ()
    in_the_middle: bool = True
    hijack_points: int = 1
    balance: int = 1000
    split_strategy: str = "exhaustive"

    def __post_init__(self) -> None:
        if self.confirmations < 1:
            raise ScenarioError(f"confirmation depth must be >= 1, got {self.confirmations}")
        if not 0.5 < self.spend_fraction <= 1:
            raise ScenarioError(
                f"spend fraction {self.spend_fraction} must be in (0.5, 1] for the payments to conflict"
            )
        if self.duration < 0:
            raise ScenarioError("attack duration must be non-negative")
        if self.vector not in (BGP_HIJACK, ARP_SPOOF):
            raise ScenarioError(f"attack vector must be {BGP_HIJACK} or {ARP_SPOOF}, got {self.vector!r}")
        if self.split_strategy not in SPLIT_STRATEGIES:
            raise ScenarioError(f"split strategy must be one of {', '.join(SPLIT_STRATEGIES)}")
        if (self.group_a is None) != (self.group_b is None):
            raise ScenarioError("give both subgroups or neither")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one trial needs. ``topology`` may still contain ``$delay`` links."""

    name: str
    topology: Topology
    distribution: PowerDistribution
    attack: AttackSpec
    initial_difficulty: int = 4_200_000
    target_block_time: float = 15.0
    params: HomesteadParams = HOMESTEAD
    warmup: float = 1800.0
    quiescence_timeout: float = 600.0
    delay_ms: Optional[float] = None


@dataclass
class TrialResult:
    scenario: str
    seed: int
    adversary: str
    duration: float
    delay_ms: Optional[float]
    m: int
    success: bool
    victim_committed: bool
    victim_commit_time: Optional[float]
    victim_confirmations: int
    blocks_adversary_side: int
    blocks_victim_side: int
    stale_adversary_side: int
    stale_victim_side: int
    mined_during_partition: int
    final_head_side: str
    victim_difficulty: int
    adversary_difficulty: int
    quiescent: bool
    probe_outcome: Optional[str] = None
    difficulty_series: List[Tuple[float, int, str]] = field(default_factory=list)

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict) -> "TrialResult":
        data = dict(record)
        data["difficulty_series"] = [tuple(x) for x in data.get("difficulty_series", [])]
        return cls(**data)


# --------------------------------------------------------------------------- planning


@dataclass(frozen=True)
class SplitPlan:
    plan: PartitionPlan
    rest_of_a: Tuple[str, ...]
    group_b: Tuple[str, ...]
    imbalance: float
    difference: float


SPLIT_STRATEGIES = ("exhaustive", "greedy")


def _greedy_split(distribution: PowerDistribution, adversary: str) -> Tuple[float, Tuple[str, ...], Tuple[str, ...]]:
    """Largest pool first onto the lighter side (ties to A); A starts with the largest."""
    others = [e for e in distribution.entries if e.id != adversary]
    ordered = sorted(others, key=lambda e: (-e.power, e.id))
    side_a: List[str] = []
    side_b: List[str] = []
    pa = pb = 0.0
    for e in ordered:
        if pa <= pb:
            side_a.append(e.id)
            pa += e.power
        else:
            side_b.append(e.id)
            pb += e.power
    return abs(pa - pb), tuple(side_a), tuple(side_b)


def _candidate_splits(distribution: PowerDistribution, adversary: str) -> Iterable[Tuple[float, Tuple[str, ...], Tuple[str, ...]]]:
    others = [e for e in distribution.entries if e.id != adversary]
    n = len(others)
    if n > 20:
        yield _greedy_split(distribution, adversary)
        return
    for mask in range(2**n):
        rest = tuple(others[i].id for i in range(n) if mask >> i & 1)
        b = tuple(others[i].id for i in range(n) if not mask >> i & 1)
        if not b:
            continue
        pa = sum(others[i].power for i in range(n) if mask >> i & 1)
        pb = sum(others[i].power for i in range(n) if not mask >> i & 1)
        yield abs(pa - pb), rest, b


def plan_balanced_split(
    distribution: PowerDistribution,
    adversary: str,
    topology: Topology,
    vector: str = BGP_HIJACK,
    in_the_middle: bool = True,
    hijack_points: int = 1,
    strategy: str = "exhaustive",
) -> SplitPlan:
    """Most power-balanced feasible two-way split with the adversary on side A.

    ``exhaustive`` minimises |power(A without adversary) - power(B)|; ties go
    to the split whose victim group sorts first. ``greedy`` tries the
    largest-first assignment before falling back to the exhaustive order.
    Raises :class:`InfeasiblePlan` when the topology admits no split for
    ``vector``.
    """
    if adversary not in distribution:
        raise ScenarioError(f"adversary {adversary!r} is not a miner")
    if strategy not in SPLIT_STRATEGIES:
        raise ScenarioError(f"split strategy must be one of {', '.join(SPLIT_STRATEGIES)}, got {strategy!r}")
    order = {e.id: i for i, e in enumerate(distribution.entries)}
    candidates = sorted(
        _candidate_splits(distribution, adversary),
        key=lambda c: (round(c[0], 12), sorted(order[x] for x in c[2])),
    )
    if strategy == "greedy":
        candidates.insert(0, _greedy_split(distribution, adversary))
    bridge = adversary if in_the_middle else None
    first_error: Optional[InfeasiblePlan] = None
    for imbalance, rest, b in candidates:
        plan = PartitionPlan(
            vector,
            frozenset((adversary,) + rest),
            frozenset(b),
            bridge=bridge,
            duration=1.0,
            hijack_points=hijack_points,
        )
        try:
            check_plan(topology, plan)
        except InfeasiblePlan as exc:
            first_error = first_error or exc
            continue
        pa = distribution.power_of(plan.group_a)
        pb = distribution.power_of(plan.group_b)
        return SplitPlan(plan, rest, b, imbalance, pa - pb)
    msg = f"no feasible {vector} partition exists"
    if first_error is not None:
        msg += f": {first_error}"
    raise InfeasiblePlan(msg, first_error.witness if first_error else None)


def resolve_groups(scenario: ScenarioConfig, topology: Optional[Topology] = None) -> ScenarioConfig:
    """Fill in the subgroups with :func:`plan_balanced_split` if the scenario leaves them open."""
    attack = scenario.attack
    if attack.group_a is not None:
        return scenario
    topo = topology or scenario.topology.with_delay(scenario.delay_ms if scenario.topology.has_placeholder else None)
    split = plan_balanced_split(
        scenario.distribution, attack.adversary, topo, attack.vector, attack.in_the_middle, attack.hijack_points,
        attack.split_strategy,
    )
    ids = scenario.distribution.ids
    a = tuple(x for x in ids if x in split.plan.group_a)
    b = tuple(x for x in ids if x in split.plan.group_b)
    return replace(scenario, attack=replace(attack, group_a=a, group_b=b))


def build_plan(scenario: ScenarioConfig, start: float, duration: float) -> PartitionPlan:
    attack = scenario.attack
    assert attack.group_a is not None and attack.group_b is not None
    return PartitionPlan(
        attack.vector,
        frozenset(attack.group_a),
        frozenset(attack.group_b),
        start=start,
        duration=duration,
        bridge=attack.adversary if attack.in_the_middle else None,
        hijack_points=attack.hijack_points,
    )


def validate_scenario(scenario: ScenarioConfig) -> ScenarioConfig:
    """Resolve subgroups and check the partition is feasible; returns the resolved scenario."""
    if scenario.initial_difficulty <= 0:
        raise ScenarioError("initial difficulty must be positive")
    if scenario.target_block_time <= 0 or scenario.warmup <= 0 or scenario.quiescence_timeout <= 0:
        raise ScenarioError("target block time, warm-up and quiescence timeout must be positive")
    topo = scenario.topology.with_delay(scenario.delay_ms if scenario.topology.has_placeholder else None)
    attack = scenario.attack
    if attack.adversary not in scenario.distribution:
        raise ScenarioError(f"adversary {attack.adversary!r} is not in the power distribution")
    for miner in scenario.distribution.ids:
        if miner not in topo.nodes:
            raise ScenarioError(f"miner {miner!r} is not placed in the topology")
    resolved = resolve_groups(scenario, topo)
    a, b = resolved.attack.group_a, resolved.attack.group_b
    assert a is not None and b is not None
    if attack.adversary not in a:
        raise ScenarioError("the adversary must be in subgroup A")
    covered = set(a) | set(b)
    missing = set(scenario.distribution.ids) - covered
    if missing:
        raise ScenarioError(f"subgroups do not cover miners {sorted(missing)}")
    merchant = resolved.attack.merchant
    if merchant is not None and merchant not in b:
        raise ScenarioError(f"merchant {merchant!r} must be in the victim subgroup")
    check_plan(topo, build_plan(resolved, 0.0, max(attack.duration, 1.0)))
    return resolved


# --------------------------------------------------------------------------- adjudication


def confirmations_on(tree: BlockTree, head: str, tx_id: str) -> int:
    """Confirmations of ``tx_id`` on the chain ending at ``head``."""
    head_block = tree[head]
    for block in tree.ancestors(head):
        if tx_id in block.transactions:
            return head_block.number - block.number + 1
    return 0


def adjudicate(
    union: BlockTree,
    tx_victim: str,
    m: int,
    victim_head: str,
    final_head: Optional[str] = None,
) -> bool:
    """Double spend succeeded: buried ``m`` deep on the victim branch, absent from the final chain."""
    committed = confirmations_on(union, victim_head, tx_victim) >= m
    final = final_head if final_head is not None else union.select_canonical_head()
    return committed and confirmations_on(union, final, tx_victim) == 0


def merchant_probe(
    sim: Simulation,
    merchant: str,
    query_nodes: Sequence[str],
    tx_id: str,
    m: int,
    liar: Optional[str] = None,
) -> str:
    """Ask ``query_nodes`` whether ``tx_id`` is committed, as seen from ``merchant``.

    Nodes cut off from the merchant do not answer. A ``liar`` (the bridging
    adversary) echoes the merchant's own view to stay hidden.
    """
    if not query_nodes:
        raise ScenarioError("a probe needs at least one node to query")
    reachable = {merchant} | {n for n, _ in propagate(sim.topology, sim.state, merchant, sim.now)}
    own = sim.nodes[merchant].tree.confirmations(tx_id) >= m
    answers = [own]
    unreachable = 0
    for node in query_nodes:
        if node not in reachable:
            unreachable += 1
            continue
        if node == liar:
            answers.append(own)
        else:
            answers.append(sim.nodes[node].tree.confirmations(tx_id) >= m)
    if unreachable * 2 > len(query_nodes):
        return UNREACHABLE_MAJORITY
    return CONSISTENT if len(set(answers)) == 1 else INCONSISTENT


# --------------------------------------------------------------------------- trials


def _side_tree(genesis: Block, blocks: Sequence[Block]) -> BlockTree:
    tree = BlockTree(genesis)
    for block in blocks:
        tree.add(block)
    return tree


def run_trial(scenario: ScenarioConfig, seed: int, trace: Optional[List[str]] = None) -> TrialResult:
    """Run one attack trial. ``scenario`` must have passed :func:`validate_scenario`."""
    attack = scenario.attack
    if attack.group_a is None:
        scenario = resolve_groups(scenario)
        attack = scenario.attack
    assert attack.group_a is not None and attack.group_b is not None
    topo = scenario.topology.with_delay(scenario.delay_ms if scenario.topology.has_placeholder else None)
    dist = scenario.distribution.calibrated(scenario.initial_difficulty, scenario.target_block_time)
    dist = dist.with_roles(attack.adversary)
    sim = Simulation(
        topo,
        dist,
        scenario.initial_difficulty,
        seed,
        scenario.params,
        balances={WALLET: attack.balance},
        trace=trace is not None,
    )
    m = attack.confirmations
    t0 = scenario.warmup * 1000.0
    duration_ms = attack.duration * 1000.0
    heal_at = t0 + duration_ms
    group_a = set(attack.group_a)
    group_b = set(attack.group_b)
    merchant = attack.merchant or sorted(group_b)[0]
    bridge = attack.adversary if attack.in_the_middle else None
    amount = math.ceil(attack.spend_fraction * attack.balance)
    tx_victim = Transaction("tx-victim", WALLET, "merchant", amount)
    tx_adv = Transaction("tx-adversary", WALLET, WALLET + "-2", amount)

    state: Dict[str, object] = {"commit_time": None, "probe": None}

    def on_head(node_id: str, now: float) -> None:
        if node_id != merchant or state["commit_time"] is not None or now > heal_at:
            return
        if sim.nodes[merchant].tree.confirmations(tx_victim.id) >= m:
            state["commit_time"] = (now - t0) / 1000.0
            if attack.probe_nodes:
                # answers reflect each node's view once the query reaches it
                reach = dict(propagate(sim.topology, sim.state, merchant, now))
                due = max([reach[n] for n in attack.probe_nodes if n in reach], default=now)
                sim.queue.schedule(Event(due, "probe", ("merchant",)))

    def on_probe(now: float) -> None:
        state["probe"] = merchant_probe(sim, merchant, attack.probe_nodes, tx_victim.id, m, bridge)

    snapshot: Dict[str, object] = {}

    def on_heal_snapshot(now: float) -> None:
        snapshot["victim_head"] = sim.nodes[merchant].tree.head
        snapshot["victim_conf"] = sim.nodes[merchant].tree.confirmations(tx_victim.id)

    sim.head_listeners.append(on_head)
    sim.probe_handlers["merchant"] = on_probe
    sim.probe_handlers["heal-snapshot"] = on_heal_snapshot

    sim.run_until(t0)
    if duration_ms > 0:
        plan = build_plan(scenario, t0, duration_ms)
        created = sim.created

        def adversary_view(block: Block) -> bool:
            return not (block.miner in group_b and created.get(block.id, -1.0) >= t0)

        filters = {attack.adversary: adversary_view} if bridge else {}
        sim.queue.schedule(Event(t0, "partition-start", (plan, filters)))
        origin = bridge or merchant
        sim.issue_transaction(tx_victim, origin, group_b, t0)
        sim.issue_transaction(tx_adv, attack.adversary, group_a, t0)
        sim.queue.schedule(Event(heal_at, "probe", ("heal-snapshot",)))
        sim.queue.schedule(Event(heal_at, "partition-end"))
        sim.run_until(heal_at)
    else:
        on_heal_snapshot(t0)

    # blocks produced while the partition was up, split by side
    pre = [b for b in sim.mined if sim.created[b.id] < t0]
    during = [b for b in sim.mined if t0 <= sim.created[b.id] < heal_at]
    side_a = [b for b in during if b.miner in group_a]
    side_b = [b for b in during if b.miner in group_b]
    tree_a = _side_tree(sim.genesis, pre + side_a)
    tree_b = _side_tree(sim.genesis, pre + side_b)
    canon_a = {b.id for b in tree_a.ancestors(tree_a.head)}
    canon_b = {b.id for b in tree_b.ancestors(tree_b.head)}
    blocks_a = sum(1 for b in side_a if b.id in canon_a)
    blocks_b = sum(1 for b in side_b if b.id in canon_b)

    quiescent = True
    if duration_ms > 0:
        quiescent = sim.run_until_quiescent(heal_at + scenario.quiescence_timeout * 1000.0)
    final_head = sim.nodes[merchant].tree.head if quiescent else sim.union.select_canonical_head()
    victim_head = str(snapshot["victim_head"])
    victim_conf = int(snapshot["victim_conf"])  # type: ignore[arg-type]
    committed = victim_conf >= m
    success = duration_ms > 0 and adjudicate(sim.union, tx_victim.id, m, victim_head, final_head)
    final_chain = {b.id for b in sim.union.ancestors(final_head)}
    final_side = VICTIM_SIDE if any(b.id in final_chain for b in side_b) else ADVERSARY_SIDE

    def label(block: Block) -> str:
        t = sim.created[block.id]
        if t < t0:
            return "pre"
        if t >= heal_at:
            return "post"
        return "A" if block.miner in group_a else "B"

    series = [(round(sim.created[b.id] / 1000.0, 3), b.difficulty, label(b)) for b in sim.mined]
    if trace is not None and sim.trace_lines is not None:
        trace.extend(sim.trace_lines)
    return TrialResult(
        scenario=scenario.name,
        seed=seed,
        adversary=attack.adversary,
        duration=attack.duration,
        delay_ms=scenario.delay_ms,
        m=m,
        success=bool(success),
        victim_committed=committed,
        victim_commit_time=state["commit_time"],  # type: ignore[arg-type]
        victim_confirmations=victim_conf,
        blocks_adversary_side=blocks_a,
        blocks_victim_side=blocks_b,
        stale_adversary_side=len(side_a) - blocks_a,
        stale_victim_side=len(side_b) - blocks_b,
        mined_during_partition=len(during),
        final_head_side=final_side,
        victim_difficulty=tree_b.head_block.difficulty,
        adversary_difficulty=tree_a.head_block.difficulty,
        quiescent=quiescent,
        probe_outcome=state["probe"],  # type: ignore[arg-type]
        difficulty_series=series,
    )
