"""Discrete-event network of Ethereum nodes with timed partitions.

Partitions are modelled as suspended overlay edges plus an optional bridge
node (the man in the middle) that still talks to both sides. Whether a
partition is achievable is decided up front from the attack vector:

* ``bgp-hijack`` cannot cut across a peering edge, cannot separate nodes of
  one AS and cannot cover multihomed ASes with fewer hijack points than paths;
* ``arp-spoof`` only works inside a single LAN segment.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import (
    Callable,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import networkx as nx

from .chain import Block, BlockTree, HomesteadParams, HOMESTEAD, Transaction, make_genesis
from .mining import PowerDistribution, WorkRace, mine_on

BGP_HIJACK = "bgp-hijack"
ARP_SPOOF = "arp-spoof"
NO_ATTACK = "none"
VECTORS = (BGP_HIJACK, ARP_SPOOF, NO_ATTACK)

DELAY_PLACEHOLDER = "$delay"

EVENT_KINDS = (
    "block-found",
    "block-arrival",
    "tx-issue",
    "tx-arrival",
    "partition-start",
    "partition-end",
    "probe",
)


class TopologyError(ValueError):
    pass


class InfeasiblePlan(ValueError):
    """A partition plan the chosen attack vector cannot realise."""

    def __init__(self, message: str, witness: Optional[tuple] = None):
        super().__init__(message)
        self.witness = witness


class SimulationError(RuntimeError):
    pass


# --------------------------------------------------------------------------- topology


@dataclass(frozen=True)
class NodeInfo:
    id: str
    asn: int
    lan: Optional[str] = None
    kind: str = "host"


@dataclass
class Topology:
    nodes: Dict[str, NodeInfo] = field(default_factory=dict)
    links: List[Tuple[str, str, Union[float, str]]] = field(default_factory=list)
    as_edges: List[Tuple[int, int, bool]] = field(default_factory=list)
    overlay_edges: List[Tuple[str, str]] = field(default_factory=list)
    as_uplinks: Dict[int, int] = field(default_factory=dict)
    _latency: Dict[str, Dict[str, float]] = field(default_factory=dict, init=False, repr=False)
    _adjacency: Dict[str, List[str]] = field(default_factory=dict, init=False, repr=False)

    @property
    def hosts(self) -> List[str]:
        return [n for n, info in self.nodes.items() if info.kind == "host"]

    @property
    def has_placeholder(self) -> bool:
        return any(lat == DELAY_PLACEHOLDER for _, _, lat in self.links)

    def with_delay(self, delay_ms: Optional[float]) -> "Topology":
        """Copy with every ``$delay`` link set to ``delay_ms``."""
        if not self.has_placeholder:
            return replace(self, links=list(self.links))
        if delay_ms is None:
            raise TopologyError("topology has $delay links but no delay value was given")
        links = [(a, b, float(delay_ms) if lat == DELAY_PLACEHOLDER else lat) for a, b, lat in self.links]
        return replace(self, links=links)

    def link_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        for a, b, lat in self.links:
            if lat == DELAY_PLACEHOLDER:
                raise TopologyError("resolve $delay links with with_delay() first")
            g.add_edge(a, b, latency=float(lat))
        return g

    def latency(self, a: str, b: str) -> float:
        """Path latency in ms between two nodes: the sum over the fastest link path."""
        if not self._latency:
            g = self.link_graph()
            for host in self.hosts:
                self._latency[host] = nx.single_source_dijkstra_path_length(g, host, weight="latency")
        try:
            return self._latency[a][b]
        except KeyError:
            raise TopologyError(f"no network path between {a} and {b}") from None

    def neighbors(self, node: str) -> List[str]:
        if not self._adjacency:
            adj: Dict[str, List[str]] = {h: [] for h in self.hosts}
            for a, b in self.overlay_edges:
                adj[a].append(b)
                adj[b].append(a)
            self._adjacency = adj
        return self._adjacency.get(node, [])

    def validate(self) -> None:
        for a, b, lat in self.links:
            for n in (a, b):
                if n not in self.nodes:
                    raise TopologyError(f"link references unknown node {n!r}")
            if lat != DELAY_PLACEHOLDER and float(lat) < 0:
                raise TopologyError(f"negative latency on link {a}-{b}")
        hosts = set(self.hosts)
        for a, b in self.overlay_edges:
            if a not in hosts or b not in hosts:
                raise TopologyError(f"overlay edge {a}-{b} must join two hosts")
        known_as = {info.asn for info in self.nodes.values()}
        for x, y, _ in self.as_edges:
            if x not in known_as or y not in known_as:
                # AS edges may mention transit ASes without nodes; that is fine
                continue
        g = nx.Graph()
        g.add_nodes_from(hosts)
        g.add_edges_from(self.overlay_edges)
        if hosts and not nx.is_connected(g):
            raise TopologyError("overlay graph is not connected")
        lg = nx.Graph()
        lg.add_nodes_from(self.nodes)
        lg.add_edges_from((a, b) for a, b, _ in self.links)
        for a, b in self.overlay_edges:
            if not nx.has_path(lg, a, b):
                raise TopologyError(f"overlay edge {a}-{b} has no underlying network path")
        if self.as_edges:
            ag = nx.Graph()
            ag.add_nodes_from(known_as)
            ag.add_edges_from((x, y) for x, y, _ in self.as_edges)
            for a, b in self.overlay_edges:
                x, y = self.nodes[a].asn, self.nodes[b].asn
                if x != y and not nx.has_path(ag, x, y):
                    raise TopologyError(f"overlay edge {a}-{b} crosses AS{x}-AS{y} with no AS path")


def _kv(tokens: Sequence[str], lineno: int) -> Dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise TopologyError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def parse_topology(text: str) -> Topology:
    """Parse the declarative topology format.

    ::

        node <id> as=<asn> [lan=<segment>]
        router <id> as=<asn>
        link <a> <b> <latency-ms | $delay>
        asedge <asn> <asn> peering|transit
        as <asn> uplinks=<k>
        overlay mesh | overlay <a> <b>
    """
    topo = Topology()
    mesh = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kw, args = tokens[0], tokens[1:]
        try:
            if kw in ("node", "router"):
                if not args:
                    raise TopologyError(f"line {lineno}: {kw} needs an id")
                opts = _kv(args[1:], lineno)
                if "as" not in opts:
                    raise TopologyError(f"line {lineno}: {kw} {args[0]} needs as=<asn>")
                if args[0] in topo.nodes:
                    raise TopologyError(f"line {lineno}: duplicate node {args[0]!r}")
                topo.nodes[args[0]] = NodeInfo(
                    args[0], int(opts["as"]), opts.get("lan"), "host" if kw == "node" else "router"
                )
            elif kw == "link":
                a, b, lat = args
                topo.links.append((a, b, lat if lat == DELAY_PLACEHOLDER else float(lat)))
            elif kw == "asedge":
                x, y, kind = args
                if kind not in ("peering", "transit"):
                    raise TopologyError(f"line {lineno}: AS edge kind must be peering or transit")
                topo.as_edges.append((int(x), int(y), kind == "peering"))
            elif kw == "as":
                opts = _kv(args[1:], lineno)
                topo.as_uplinks[int(args[0])] = int(opts.get("uplinks", 1))
            elif kw == "overlay":
                if args == ["mesh"]:
                    mesh = True
                else:
                    a, b = args
                    topo.overlay_edges.append((a, b))
            else:
                raise TopologyError(f"line {lineno}: unknown directive {kw!r}")
        except ValueError as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"line {lineno}: {exc}") from None
    if mesh:
        topo.overlay_edges.extend(itertools.combinations(topo.hosts, 2))
    topo.validate()
    return topo


def load_topology(path: Union[str, Path]) -> Topology:
    return parse_topology(Path(path).read_text())


# --------------------------------------------------------------------------- partitions


@dataclass(frozen=True)
class PartitionPlan:
    vector: str
    group_a: FrozenSet[str]
    group_b: FrozenSet[str]
    start: float = 0.0
    duration: float = 0.0
    bridge: Optional[str] = None
    hijack_points: int = 1


@dataclass
class PartitionState:
    plan: PartitionPlan
    suspended: FrozenSet[Tuple[str, str]]
    bridged: FrozenSet[Tuple[str, str]]
    side: Dict[str, str]
    active: bool = True

    @property
    def bridge(self) -> Optional[str]:
        return self.plan.bridge

    def edge_open(self, a: str, b: str) -> bool:
        return not self.active or _edge(a, b) not in self.suspended


def _edge(a: str, b: str) -> Tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def _peering_witness(topology: Topology, side_a: Set[int], side_b: Set[int]) -> Optional[List[int]]:
    """Shortest AS path over peering edges from side A to side B, if any."""
    peering: Dict[int, List[int]] = {}
    for x, y, is_peering in topology.as_edges:
        if is_peering:
            peering.setdefault(x, []).append(y)
            peering.setdefault(y, []).append(x)
    prev: Dict[int, Optional[int]] = {a: None for a in sorted(side_a)}
    queue = deque(sorted(side_a))
    while queue:
        cur = queue.popleft()
        if cur in side_b:
            path = [cur]
            while prev[path[-1]] is not None:
                path.append(prev[path[-1]])  # type: ignore[arg-type]
            return path[::-1]
        for nxt in sorted(peering.get(cur, ())):
            if nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    return None


def check_plan(topology: Topology, plan: PartitionPlan) -> None:
    """Raise :class:`InfeasiblePlan` if ``plan`` cannot be carried out."""
    if plan.vector not in VECTORS:
        raise InfeasiblePlan(f"unknown attack vector {plan.vector!r}")
    if plan.vector == NO_ATTACK:
        return
    if not plan.group_a or not plan.group_b:
        raise InfeasiblePlan("degenerate partition: both subgroups must be non-empty")
    if plan.group_a & plan.group_b:
        raise InfeasiblePlan(f"subgroups overlap on {sorted(plan.group_a & plan.group_b)}")
    if plan.duration <= 0:
        raise InfeasiblePlan("partition duration must be positive")
    for n in plan.group_a | plan.group_b:
        if n not in topology.nodes:
            raise InfeasiblePlan(f"unknown node {n!r} in partition plan")
    members_a = plan.group_a - {plan.bridge}
    members_b = plan.group_b - {plan.bridge}
    if plan.vector == BGP_HIJACK:
        as_a = {topology.nodes[n].asn for n in members_a}
        as_b = {topology.nodes[n].asn for n in members_b}
        shared = as_a & as_b
        if shared:
            asn = min(shared)
            raise InfeasiblePlan(
                f"AS{asn} hosts both subgroups; route hijacking cannot split traffic inside one AS",
                ("shared-as", asn),
            )
        path = _peering_witness(topology, as_a, as_b)
        if path is not None:
            x, y = path[0], path[1]
            raise InfeasiblePlan(
                f"peering edge AS{x}–AS{y} is un-hijackable "
                f"(peering path {' - '.join(f'AS{p}' for p in path)} joins the subgroups)",
                ("peering", x, y),
            )
        for asn in sorted(as_a | as_b):
            paths = topology.as_uplinks.get(asn, 1)
            if paths > plan.hijack_points:
                raise InfeasiblePlan(
                    f"AS{asn} is multihomed over {paths} paths but the adversary controls "
                    f"{plan.hijack_points} hijack point(s)",
                    ("multipath", asn, paths),
                )
    elif plan.vector == ARP_SPOOF:
        affected = plan.group_a | plan.group_b
        lans = {topology.nodes[n].lan for n in affected}
        if None in lans or len(lans) != 1:
            shown = sorted(str(x) for x in lans)
            raise InfeasiblePlan(
                f"ARP spoofing needs every affected node on one LAN segment, found {shown}",
                ("lan", tuple(shown)),
            )


def apply_partition(topology: Topology, plan: PartitionPlan) -> PartitionState:
    """Suspend every overlay edge crossing the cut; the bridge keeps its links to both sides."""
    check_plan(topology, plan)
    side: Dict[str, str] = {}
    for n in plan.group_a:
        side[n] = "A"
    for n in plan.group_b:
        side[n] = "B"
    suspended = set()
    bridged = set()
    for a, b in topology.overlay_edges:
        sa, sb = side.get(a), side.get(b)
        if sa is None or sb is None or sa == sb:
            continue
        if plan.bridge in (a, b):
            bridged.add(_edge(a, b))
        else:
            suspended.add(_edge(a, b))
    return PartitionState(plan, frozenset(suspended), frozenset(bridged), side, plan.vector != NO_ATTACK)


# --------------------------------------------------------------------------- events


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    payload: tuple = ()


class EventQueue:
    """Min-heap of events ordered by (time, insertion sequence)."""

    def __init__(self) -> None:
        self._heap: List[Tuple[float, int, Event]] = []
        self._seq = itertools.count()
        self.now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, event: Event) -> "EventQueue":
        if event.time < self.now:
            raise SimulationError(f"cannot schedule {event.kind} at {event.time} before now={self.now}")
        heapq.heappush(self._heap, (event.time, next(self._seq), event))
        return self

    def peek_time(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def pop(self) -> Event:
        time, _, event = heapq.heappop(self._heap)
        self.now = time
        return event


def schedule_event(queue: EventQueue, event: Event) -> EventQueue:
    return queue.schedule(event)


def propagate(
    topology: Topology,
    state: Optional[PartitionState],
    from_node: str,
    send_time: float = 0.0,
    restrict: Optional[Set[str]] = None,
) -> List[Tuple[str, float]]:
    """Flood arrival times of an announcement sent by ``from_node``.

    Every node relays on first receipt, so arrival times are shortest-path
    distances over open overlay edges. During an active partition the bridge
    relays only towards the sender's own side, and ``restrict`` limits which
    nodes take part.
    """
    if from_node not in topology.nodes:
        raise TopologyError(f"unknown node {from_node!r}")
    active = state is not None and state.active
    origin_side = state.side.get(from_node) if active else None  # type: ignore[union-attr]
    dist = {from_node: send_time}
    heap = [(send_time, from_node)]
    done: Set[str] = set()
    out = []
    while heap:
        t, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        relay_same_side = False
        if node != from_node:
            out.append((node, t))
            relay_same_side = active and node == state.bridge  # type: ignore[union-attr]
        for nb in topology.neighbors(node):
            if restrict is not None and nb not in restrict:
                continue
            if active and not state.edge_open(node, nb):  # type: ignore[union-attr]
                continue
            if relay_same_side and state.side.get(nb) != origin_side:  # type: ignore[union-attr]
                continue
            nt = t + topology.latency(node, nb)
            if nt < dist.get(nb, math.inf):
                dist[nb] = nt
                heapq.heappush(heap, (nt, nb))
    out.sort(key=lambda x: (x[1], x[0]))
    return out


def heal(
    topology: Topology,
    state: PartitionState,
    views: Mapping[str, BlockTree],
    now: float,
) -> List[Event]:
    """End the partition and return the head-exchange deliveries over each restored edge.

    Both endpoints send their canonical head plus every ancestor the peer
    lacks, arriving after the normal path latency.
    """
    state.active = False
    events = []
    for a, b in sorted(state.suspended | state.bridged):
        for src, dst in ((a, b), (b, a)):
            have = views[dst].blocks
            missing = [blk for blk in views[src].ancestors(views[src].head) if blk.id not in have]
            t = now + topology.latency(src, dst)
            for blk in reversed(missing):
                events.append(Event(t, "block-arrival", (dst, blk, "sync")))
    return events


# --------------------------------------------------------------------------- engine


@dataclass
class Node:
    id: str
    tree: BlockTree
    race: Optional[WorkRace] = None
    version: int = 0
    pending: List[str] = field(default_factory=list)
    orphans: Dict[str, List[Block]] = field(default_factory=dict)
    accept: Optional[Callable[[Block], bool]] = None
    shadow: List[Block] = field(default_factory=list)


def stream_seed(seed: int, label: str) -> int:
    """Deterministic sub-seed for ``label`` within a trial seeded by ``seed``."""
    import hashlib

    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class Simulation:
    """Block production and gossip across the topology for one trial.

    Times on the queue are milliseconds; block timestamps and mining rates
    use seconds.
    """

    def __init__(
        self,
        topology: Topology,
        distribution: PowerDistribution,
        initial_difficulty: int,
        seed: int,
        params: HomesteadParams = HOMESTEAD,
        balances: Optional[Mapping[str, int]] = None,
        trace: bool = False,
    ):
        self.topology = topology
        self.distribution = distribution
        self.params = params
        self.queue = EventQueue()
        self.genesis = make_genesis(initial_difficulty)
        self.union = BlockTree(self.genesis, params)
        self.nodes: Dict[str, Node] = {}
        for host in topology.hosts:
            self.nodes[host] = Node(host, BlockTree(self.genesis, params))
        for spec in distribution.entries:
            if spec.id not in self.nodes:
                raise TopologyError(f"miner {spec.id!r} is not a host in the topology")
            rng = random.Random(stream_seed(seed, f"miner:{spec.id}"))
            self.nodes[spec.id].race = WorkRace(rng, spec.power, distribution.total_hashrate)
        self.txs: Dict[str, Transaction] = {}
        self.balances: Dict[str, int] = dict(balances or {})
        self.state: Optional[PartitionState] = None
        self.created: Dict[str, float] = {}
        self.mined: List[Block] = []
        self.delivered: List[Tuple[float, str, str]] = []
        self.head_listeners: List[Callable[[str, float], None]] = []
        self.probe_handlers: Dict[str, Callable[[float], None]] = {}
        self.trace_lines: Optional[List[str]] = [] if trace else None
        self.in_flight = 0
        self._scheduled: Dict[Tuple[str, str], float] = {}
        self._block_seq = itertools.count(1)
        for node in self.nodes.values():
            if node.race is not None:
                self._restart(node, 0.0)

    # -- helpers
    @property
    def now(self) -> float:
        return self.queue.now

    def _trace(self, event: Event) -> None:
        if self.trace_lines is None:
            return
        parts = []
        for item in event.payload:
            if isinstance(item, Block):
                parts.append(item.id)
            elif isinstance(item, Transaction):
                parts.append(item.id)
            elif isinstance(item, (set, frozenset)):
                parts.append(",".join(sorted(item)))
            elif isinstance(item, PartitionPlan):
                parts.append(
                    f"{item.vector} A={','.join(sorted(item.group_a))} B={','.join(sorted(item.group_b))}"
                    f" bridge={item.bridge or '-'}"
                )
            elif isinstance(item, Mapping):
                parts.append("filters=" + (",".join(sorted(item)) or "-"))
            else:
                parts.append(str(item))
        self.trace_lines.append(f"{event.time:.3f} {event.kind} {' '.join(parts)}".rstrip())

    def _restart(self, node: Node, now_ms: float) -> None:
        assert node.race is not None
        node.version += 1
        find_s = node.race.retarget(now_ms / 1000.0, node.tree.head_block.difficulty)
        self.queue.schedule(Event(find_s * 1000.0, "block-found", (node.id, node.version)))

    def _send_block(self, dst: str, block: Block, when: float, via: str) -> None:
        key = (dst, block.id)
        if block.id in self.nodes[dst].tree or self._scheduled.get(key, math.inf) <= when:
            return
        self._scheduled[key] = when
        self.in_flight += 1
        self.queue.schedule(Event(when, "block-arrival", (dst, block, via)))

    def _flood_block(self, src: str, block: Block) -> None:
        restrict = None
        st = self.state
        if st is not None and st.active and src == st.bridge:
            restrict = {n for n, s in st.side.items() if s == st.side.get(src)}
        for dst, t in propagate(self.topology, st, src, self.now, restrict):
            self._send_block(dst, block, t, "flood")

    # -- public controls
    def schedule(self, event: Event) -> None:
        if event.kind == "block-arrival":
            dst, block, via = event.payload
            self._send_block(dst, block, event.time, via)
        else:
            self.queue.schedule(event)

    def issue_transaction(self, tx: Transaction, origin: str, audience: Iterable[str], at: float) -> None:
        self.queue.schedule(Event(at, "tx-issue", (tx, origin, frozenset(audience))))

    def start_partition(self, plan: PartitionPlan, accept_filters: Optional[Mapping[str, Callable[[Block], bool]]] = None) -> PartitionState:
        self.state = apply_partition(self.topology, plan)
        for node_id, fn in (accept_filters or {}).items():
            self.nodes[node_id].accept = fn
        return self.state

    def end_partition(self) -> None:
        if self.state is None or not self.state.active:
            return
        for node in self.nodes.values():
            node.accept = None
            shadow, node.shadow = node.shadow, []
            for block in shadow:
                self._receive(node, block, "sync")
        for event in heal(self.topology, self.state, {k: v.tree for k, v in self.nodes.items()}, self.now):
            dst, block, via = event.payload
            self._send_block(dst, block, event.time, via)

    # -- dispatch
    def step(self) -> Event:
        event = self.queue.pop()
        kind = event.kind
        if kind == "block-found":
            node_id, version = event.payload
            node = self.nodes[node_id]
            if version != node.version:
                return event
            self._trace(event)
            self._on_found(node)
        elif kind == "block-arrival":
            self.in_flight -= 1
            dst, block, via = event.payload
            node = self.nodes[dst]
            if block.id in node.tree:
                return event
            self._trace(event)
            self.delivered.append((event.time, dst, block.id))
            self._receive(node, block, via)
        elif kind == "tx-issue":
            self._trace(event)
            tx, origin, audience = event.payload
            self.txs[tx.id] = tx
            if origin in audience:
                self.nodes[origin].pending.append(tx.id)
            for dst, t in propagate(self.topology, self.state, origin, self.now, set(audience) | {origin}):
                self.queue.schedule(Event(t, "tx-arrival", (dst, tx.id)))
        elif kind == "tx-arrival":
            self._trace(event)
            dst, tx_id = event.payload
            if tx_id not in self.nodes[dst].pending:
                self.nodes[dst].pending.append(tx_id)
        elif kind == "partition-start":
            self._trace(event)
            plan, filters = event.payload
            self.start_partition(plan, filters)
        elif kind == "partition-end":
            self._trace(event)
            self.end_partition()
        elif kind == "probe":
            self._trace(event)
            (name,) = event.payload
            self.probe_handlers[name](self.now)
        else:
            raise SimulationError(f"unknown event kind {kind!r}")
        return event

    def _on_found(self, node: Node) -> None:
        now_s = self.now / 1000.0
        block_id = f"b{next(self._block_seq)}"
        block = mine_on(
            node.id, node.tree, now_s, block_id, node.pending, self.txs, self.balances, self.params
        )
        self.created[block.id] = self.now
        self.mined.append(block)
        self.union.add(block)
        node.tree.add(block)
        assert node.race is not None
        node.version += 1
        find_s = node.race.solved(now_s, block.difficulty)
        self.queue.schedule(Event(find_s * 1000.0, "block-found", (node.id, node.version)))
        self._flood_block(node.id, block)
        self._notify(node.id)

    def _receive(self, node: Node, block: Block, via: str) -> None:
        if block.id in node.tree:
            return
        if node.accept is not None and not node.accept(block):
            node.shadow.append(block)
            return
        if block.parent not in node.tree:
            node.orphans.setdefault(block.parent, []).append(block)  # type: ignore[arg-type]
            return
        changed = False
        stack = [block]
        while stack:
            blk = stack.pop()
            if blk.id in node.tree:
                continue
            changed |= node.tree.add(blk)
            if via == "sync":
                self._flood_block(node.id, blk)
            stack.extend(reversed(node.orphans.pop(blk.id, [])))
        if changed:
            if node.race is not None:
                self._restart(node, self.now)
            self._notify(node.id)

    def _notify(self, node_id: str) -> None:
        for listener in self.head_listeners:
            listener(node_id, self.now)

    # -- loops
    def run_until(self, t_ms: float) -> None:
        while self.queue.peek_time() <= t_ms:
            self.step()
        if self.queue.now < t_ms:
            self.queue.now = t_ms

    def heads(self) -> Dict[str, str]:
        return {n: node.tree.head for n, node in self.nodes.items()}

    def quiescent(self) -> bool:
        if self.in_flight:
            return False
        return len(set(self.heads().values())) == 1

    def run_until_quiescent(self, deadline_ms: float) -> bool:
        while not self.quiescent():
            if self.queue.peek_time() > deadline_ms:
                return False
            self.step()
        return True
