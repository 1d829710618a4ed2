"""Public-network feasibility: how much mining power can route hijacking separate?

Pools publish stratum servers hosted in autonomous systems. Members of a pool
connect to a server and fail over to the pool's next server when theirs
becomes unreachable. Hijacking can only cut transit adjacencies between ASes.
Direct peering links carry statically known prefixes and stay up.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

PEERING = "peering"
TRANSIT = "transit"
EDGE_KINDS = (PEERING, TRANSIT)

EXHAUSTIVE_EDGE_LIMIT = 12
MAX_SUPER_NODES = 24


class IntelError(ValueError):
    """Dataset content is inconsistent (duplicates, dangling references)."""


class IntelParseError(IntelError):
    """Dataset file is malformed."""


@dataclass(frozen=True)
class StratumServer:
    hostname: str
    location: str
    asn: int
    as_owner: str = ""


@dataclass(frozen=True)
class PoolRecord:
    name: str
    power: float  # percent of network hash rate
    servers: Tuple[StratumServer, ...]

    def __post_init__(self) -> None:
        if not self.power > 0:
            raise IntelError(f"pool {self.name}: power must be positive")
        if not self.servers:
            raise IntelError(f"pool {self.name}: no stratum servers")

    @property
    def asns(self) -> Tuple[int, ...]:
        return tuple(dict.fromkeys(s.asn for s in self.servers))


Edge = Tuple[int, int]


def _edge(a: int, b: int) -> Edge:
    return (a, b) if a <= b else (b, a)


@dataclass
class AsGraph:
    """Undirected simple AS graph. ``edges`` maps (low, high) ASN pairs to a kind."""

    vertices: Tuple[int, ...]
    edges: Dict[Edge, str] = field(default_factory=dict)
    hosting: Dict[int, List[Tuple[str, str]]] = field(default_factory=dict)

    def add_edge(self, a: int, b: int, kind: str) -> None:
        if kind not in EDGE_KINDS:
            raise IntelParseError(f"edge {a}-{b}: kind must be peering or transit, got {kind!r}")
        if a == b:
            raise IntelError(f"self-loop on AS{a}")
        for asn in (a, b):
            if asn not in self.vertices:
                raise IntelError(f"peering file references unknown AS{asn}")
        key = _edge(a, b)
        if key in self.edges:
            raise IntelError(f"duplicate edge AS{key[0]}-AS{key[1]}")
        self.edges[key] = kind

    def hijackable(self) -> List[Edge]:
        return sorted(e for e, k in self.edges.items() if k == TRANSIT)

    def peering(self) -> List[Edge]:
        return sorted(e for e, k in self.edges.items() if k == PEERING)

    def with_kind(self, edge: Edge, kind: str) -> "AsGraph":
        edges = dict(self.edges)
        edges[_edge(*edge)] = kind
        return AsGraph(self.vertices, edges, self.hosting)

    def components(self, removed: Iterable[Edge] = ()) -> List[Tuple[int, ...]]:
        """Connected components with ``removed`` edges dropped, ordered by smallest ASN."""
        cut = set(removed)
        uf = _UnionFind(self.vertices)
        for e in self.edges:
            if e not in cut:
                uf.union(*e)
        return uf.groups()


class _UnionFind:
    def __init__(self, items: Iterable[int]) -> None:
        self.parent = {x: x for x in items}

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self) -> List[Tuple[int, ...]]:
        out: Dict[int, List[int]] = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return sorted(tuple(sorted(g)) for g in out.values())


def _csv_rows(text: str) -> List[Dict[str, str]]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines)), skipinitialspace=True))


def _read(source: Union[str, Path]) -> str:
    return Path(source).read_text()


def parse_pools(text: str) -> List[PoolRecord]:
    """One row per stratum server; a pool's rows must be contiguous and in priority order."""
    rows = _csv_rows(text)
    if not rows:
        raise IntelParseError("pool dataset has no rows")
    missing = {"pool", "power", "server", "asn"} - set(rows[0])
    if missing:
        raise IntelParseError(f"pool dataset lacks columns: {', '.join(sorted(missing))}")
    pools: List[PoolRecord] = []
    seen = set()
    name = None
    power: Optional[float] = None
    servers: List[StratumServer] = []

    def flush() -> None:
        if name is not None:
            pools.append(PoolRecord(name, power, tuple(servers)))  # type: ignore[arg-type]

    for i, row in enumerate(rows, start=2):
        pool = (row.get("pool") or "").strip()
        if not pool:
            raise IntelParseError(f"line {i}: empty pool name")
        try:
            asn = int(row["asn"])
            raw_power = (row.get("power") or "").strip()
            row_power = float(raw_power) if raw_power else None
        except (TypeError, ValueError):
            raise IntelParseError(f"line {i}: asn and power must be numeric") from None
        if pool != name:
            if pool in seen:
                raise IntelError(f"duplicate pool {pool!r} at line {i}")
            flush()
            seen.add(pool)
            name, power, servers = pool, row_power, []
            if power is None:
                raise IntelParseError(f"line {i}: first row of {pool} needs a power")
        elif row_power is not None and row_power != power:
            raise IntelError(f"line {i}: {pool} power {row_power} disagrees with {power}")
        servers.append(
            StratumServer(row["server"].strip(), (row.get("location") or "").strip(), asn,
                          (row.get("as_owner") or "").strip())
        )
    flush()
    return pools


def build_graph(pools: Sequence[PoolRecord], peering_text: str) -> AsGraph:
    hosting: Dict[int, List[Tuple[str, str]]] = {}
    for pool in pools:
        for server in pool.servers:
            hosting.setdefault(server.asn, []).append((pool.name, server.hostname))
    graph = AsGraph(tuple(sorted(hosting)), {}, hosting)
    for row in _csv_rows(peering_text):
        try:
            a, b = int(row["as_a"]), int(row["as_b"])
        except (KeyError, TypeError, ValueError):
            raise IntelParseError(f"bad peering row {dict(row)}") from None
        graph.add_edge(a, b, (row.get("kind") or "").strip().lower())
    return graph


def ingest_pool_dataset(
    pool_source: Union[str, Path], peering_source: Union[str, Path]
) -> Tuple[List[PoolRecord], AsGraph]:
    pools = parse_pools(_read(pool_source))
    return pools, build_graph(pools, _read(peering_source))


# -- failover ---------------------------------------------------------------


@dataclass
class FailoverOutcome:
    power: Dict[object, Fraction]  # component -> power mass, in pool power units
    knocked_out: Dict[str, Fraction]

    def total(self) -> Fraction:
        return sum(self.power.values(), Fraction(0)) + sum(self.knocked_out.values(), Fraction(0))


def _weights(pool: PoolRecord, weights: Optional[Mapping[str, Sequence[float]]]) -> List[Fraction]:
    raw = weights.get(pool.name) if weights else None
    if raw is None:
        return [Fraction(1, len(pool.servers))] * len(pool.servers)
    if len(raw) != len(pool.servers):
        raise IntelError(f"{pool.name}: {len(raw)} weights for {len(pool.servers)} servers")
    fr = [Fraction(w) for w in raw]
    total = sum(fr)
    if total <= 0 or any(w < 0 for w in fr):
        raise IntelError(f"{pool.name}: weights must be non-negative with positive sum")
    return [w / total for w in fr]


def failover_reassign(
    pools: Sequence[PoolRecord],
    reachability: Mapping[str, object],
    weights: Optional[Mapping[str, Sequence[float]]] = None,
) -> FailoverOutcome:
    """Place each pool's members on the component of the server they end up using.

    ``reachability`` maps a server hostname to its component, or to None when
    the server is cut off from its members. Member group ``i`` (share
    ``weights[pool][i]``) starts on server ``i`` and walks the pool's list in
    order, wrapping, until it finds a reachable server.
    """
    power: Dict[object, Fraction] = {}
    knocked: Dict[str, Fraction] = {}
    for pool in pools:
        mass = Fraction(str(pool.power))
        n = len(pool.servers)
        for i, share in enumerate(_weights(pool, weights)):
            if not share:
                continue
            for k in range(n):
                comp = reachability.get(pool.servers[(i + k) % n].hostname)
                if comp is not None:
                    power[comp] = power.get(comp, Fraction(0)) + mass * share
                    break
            else:
                knocked[pool.name] = knocked.get(pool.name, Fraction(0)) + mass * share
    return FailoverOutcome(power, knocked)


# -- separability -----------------------------------------------------------


@dataclass
class Separation:
    fraction: float
    cut: Tuple[Edge, ...]
    components: List[Tuple[Tuple[int, ...], float]]
    knocked_out: Dict[str, float]
    method: str


def _score(graph: AsGraph, pools: Sequence[PoolRecord], comps: List[Tuple[int, ...]], weights) -> Tuple[Fraction, FailoverOutcome]:
    where = {asn: idx for idx, comp in enumerate(comps) for asn in comp}
    reach = {s.hostname: where[s.asn] for p in pools for s in p.servers}
    outcome = failover_reassign(pools, reach, weights)
    masses = sorted(outcome.power.values(), reverse=True)
    return (masses[1] if len(masses) > 1 else Fraction(0)), outcome


def _crossing(graph: AsGraph, comps: List[Tuple[int, ...]]) -> Tuple[Edge, ...]:
    where = {asn: idx for idx, comp in enumerate(comps) for asn in comp}
    return tuple(e for e in sorted(graph.edges) if where[e[0]] != where[e[1]])


def max_separable_power(
    graph: AsGraph,
    pools: Sequence[PoolRecord],
    weights: Optional[Mapping[str, Sequence[float]]] = None,
    exhaustive_limit: int = EXHAUSTIVE_EDGE_LIMIT,
) -> Separation:
    """Largest power a hijack can split off, as a fraction of the pools' total.

    An outcome's value is the power of its second-largest component. Up to
    ``exhaustive_limit`` hijackable edges every subset is tried, smallest
    first. Beyond that, peering-connected ASes are merged into super-nodes
    and every two-sided split of the super-nodes is bounded and scored; the
    best two-sided split is as good as the best arbitrary cut.
    """
    for p in pools:
        for s in p.servers:
            if s.asn not in graph.vertices:
                raise IntelError(f"{p.name}: server {s.hostname} on AS{s.asn} is not in the graph")
    total = sum((Fraction(str(p.power)) for p in pools), Fraction(0))
    hijackable = graph.hijackable()
    best_val, best_cut, best_comps = Fraction(-1), (), graph.components()
    if len(hijackable) <= exhaustive_limit:
        method = "exhaustive"
        for size in range(len(hijackable) + 1):
            for subset in itertools.combinations(hijackable, size):
                comps = graph.components(subset)
                val, _ = _score(graph, pools, comps, weights)
                if val > best_val:
                    best_val, best_cut, best_comps = val, subset, comps
    else:
        method = "super-node bipartition"
        supers = graph.components(hijackable)
        if len(supers) > MAX_SUPER_NODES:
            raise IntelError(f"{len(supers)} peering groups exceed the search limit of {MAX_SUPER_NODES}")
        base = failover_reassign(pools, {s.hostname: s.asn for p in pools for s in p.servers}, weights)
        mass = [sum((base.power.get(a, Fraction(0)) for a in sup), Fraction(0)) for sup in supers]
        n = len(supers)
        for bits in range(1 << (n - 1)):
            side = [(bits >> i) & 1 for i in range(n - 1)] + [0]
            if not any(side):
                comps = graph.components()
            else:
                upper = min(sum(m for m, s in zip(mass, side) if s), sum(m for m, s in zip(mass, side) if not s))
                if upper <= best_val:
                    continue
                label = {a: s for sup, s in zip(supers, side) for a in sup}
                cut = [e for e in graph.edges if label[e[0]] != label[e[1]]]
                comps = graph.components(cut)
            val, _ = _score(graph, pools, comps, weights)
            if val > best_val:
                best_val, best_comps = val, comps
                best_cut = _crossing(graph, comps)
    _, outcome = _score(graph, pools, best_comps, weights)
    comp_power = [(comp, float(outcome.power.get(i, Fraction(0)) / total)) for i, comp in enumerate(best_comps)]
    knocked = {k: float(v / total) for k, v in outcome.knocked_out.items()}
    fraction = float(best_val / total) if best_val > 0 else 0.0
    if fraction == 0.0:
        best_cut = ()
    return Separation(fraction, tuple(best_cut), comp_power, knocked, method)


def peering_groups(graph: AsGraph) -> List[Tuple[int, ...]]:
    """ASes linked to each other by peering alone."""
    return graph.components(graph.hijackable())


def peering_connected_pools(graph: AsGraph, pools: Sequence[PoolRecord]) -> List[PoolRecord]:
    """Pools whose servers all sit inside one multi-AS peering group."""
    out = []
    for group in peering_groups(graph):
        if len(group) < 2:
            continue
        members = set(group)
        out.extend(p for p in pools if set(p.asns) <= members)
    return out


# -- report -----------------------------------------------------------------


def weight_scenarios(pools: Sequence[PoolRecord]) -> Dict[str, Dict[str, List[float]]]:
    """Member-location assumptions used for the sensitivity table."""
    return {
        "uniform": {},
        "first-server": {p.name: [1.0] + [0.0] * (len(p.servers) - 1) for p in pools},
        "last-server": {p.name: [0.0] * (len(p.servers) - 1) + [1.0] for p in pools},
    }


@dataclass
class FeasibilityReport:
    total_power: float
    separation: Separation
    sensitivity: Dict[str, float]
    peering_pools: List[str]
    peering_pool_power: float
    peering_pool_separation: float

    def render(self) -> str:
        s = self.separation
        lines = [
            f"pools total power: {self.total_power:.2f}%",
            f"max separable power: {s.fraction:.4f} ({s.method})",
            "witness cut: " + (", ".join(f"AS{a}-AS{b}" for a, b in s.cut) or "none"),
        ]
        for comp, frac in s.components:
            if frac:
                lines.append(f"  component {'/'.join(f'AS{a}' for a in comp)}: {frac:.4f}")
        lines.append("knocked out: " + (", ".join(f"{k} {v:.4f}" for k, v in s.knocked_out.items()) or "none"))
        lines.append(
            f"peering-connected pools ({len(self.peering_pools)}, {self.peering_pool_power:.2f}%): "
            + ", ".join(self.peering_pools)
        )
        lines.append(f"max separable power among them: {self.peering_pool_separation:.4f}")
        lines.append("member-location sensitivity:")
        for name, frac in self.sensitivity.items():
            lines.append(f"  {name:<13} {frac:.4f}")
        return "\n".join(lines)


def feasibility_report(graph: AsGraph, pools: Sequence[PoolRecord]) -> FeasibilityReport:
    separation = max_separable_power(graph, pools)
    sensitivity = {
        name: max_separable_power(graph, pools, w).fraction for name, w in weight_scenarios(pools).items()
    }
    core = peering_connected_pools(graph, pools)
    core_sep = max_separable_power(graph, core).fraction if core else 0.0
    return FeasibilityReport(
        total_power=sum(p.power for p in pools),
        separation=separation,
        sensitivity=sensitivity,
        peering_pools=[p.name for p in core],
        peering_pool_power=sum(p.power for p in core),
        peering_pool_separation=core_sep,
    )
