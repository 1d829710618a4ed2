"""Acceptance checks. Each test prints one PASS/FAIL line and then asserts it."""

import random
import time
from dataclasses import replace

import networkx as nx
import pytest

from ethpartition.analysis import ExperimentGrid, gain_after, project_gain, run_grid, trial_seed, write_trial_records
from ethpartition.attack import run_trial, validate_scenario
from ethpartition.chain import Block, BlockTree, compute_difficulty, make_genesis
from ethpartition.intel import ingest_pool_dataset, max_separable_power, peering_connected_pools
from ethpartition.mining import block_shares, load_power_distribution
from ethpartition.netsim import Simulation, load_topology
from ethpartition.scenario import PRESET_NAMES, data_path, load_scenario

MINUTES = tuple(range(3, 13))


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return report


@pytest.fixture(scope="session")
def consortium_curves():
    """200 trials per duration at <1 ms and 250 ms, paired seeds."""
    scenario, _ = load_scenario("consortium-table-III")
    grid = ExperimentGrid(
        scenario, durations=tuple(60.0 * m for m in MINUTES), delays=(0.5, 250.0), m_values=(12,), trials=200, master_seed=2018
    )
    summaries, _ = run_grid(grid)
    return {(s.delay_ms, int(s.duration // 60)): s for s in summaries}


# ------------------------------------------------------------------ 1


def reference_difficulty(parent, interval, number):
    fraction = parent // 2048
    factor = max(1 - interval // 10, -99)
    exp = number // 100000 - 2
    bomb = 2**exp if exp >= 0 else 0
    return max(parent + fraction * factor + bomb, 131072)


def test_criterion_1_difficulty_oracle(verdict):
    start = time.perf_counter()
    examples = [
        ((2048000, 5, 100), 2049000),
        ((2048000, 15, 100), 2048000),
        ((2048000, 25, 100), 2047000),
        ((2048000, 5000, 100), 1949000),
        ((2048000, 15, 300000), 2048002),
    ]
    bad = [args for args, want in examples if compute_difficulty(*args) != want]
    rng = random.Random(1)
    for _ in range(1000):
        args = (rng.randint(2048, 10**13), rng.randint(1, 3000), rng.randint(1, 3_000_000))
        if compute_difficulty(*args) != reference_difficulty(*args):
            bad.append(args)
    elapsed = time.perf_counter() - start
    verdict(1, "difficulty oracle", not bad and elapsed < 1.0, f"{len(bad)} mismatches, {elapsed:.3f} s")


# ------------------------------------------------------------------ 2


def test_criterion_2_fork_choice(verdict):
    rng = random.Random(2)
    start = time.perf_counter()
    mismatches = 0
    heavier_shorter = 0
    for trial in range(500):
        genesis = make_genesis(1000)
        tree = BlockTree(genesis)
        blocks = [genesis]
        if trial % 5 == 0:
            # short heavy branch against a long light one
            for tag, n, d in (("long", 6, 100), ("short", 2, 1000)):
                parent = genesis
                for i in range(n):
                    b = Block(f"{tag}{i}", parent.id, parent.number + 1, parent.timestamp + 1, d, tag)
                    tree.add(b)
                    blocks.append(b)
                    parent = b
        for i in range(rng.randint(0, 190)):
            parent = rng.choice(blocks)
            d = rng.choice([rng.randint(1, 40), rng.randint(400, 2000)])
            b = Block(f"r{i}", parent.id, parent.number + 1, parent.timestamp + 1, d, "m")
            tree.add(b)
            blocks.append(b)
        by_id = {b.id: b for b in blocks}

        def td(bid):
            b = by_id[bid]
            return b.difficulty + (td(b.parent) if b.parent else 0)

        children = {b.parent for b in blocks}
        leaves = [b.id for b in blocks if b.id not in children]
        best = max(td(x) for x in leaves)
        expected = next(x for x in leaves if td(x) == best)
        if tree.select_canonical_head() != expected or tree.head != expected:
            mismatches += 1
        if by_id[expected].number < max(by_id[x].number for x in leaves):
            heavier_shorter += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and heavier_shorter > 0 and elapsed < 10.0
    verdict(2, "fork choice", ok, f"{mismatches} mismatches, {heavier_shorter} shorter-heavier heads, {elapsed:.2f} s")


# ------------------------------------------------------------------ 3


def test_criterion_3_consortium_bands(verdict, consortium_curves):
    rate = {m: consortium_curves[(0.5, m)].success_rate for m in MINUTES}
    ok = rate[3] <= 0.20 and rate[9] >= 0.40 and rate[12] >= 0.50 and rate[12] - rate[3] >= 0.30
    curve = " ".join(f"{m}:{rate[m]:.3f}" for m in MINUTES)
    verdict(3, "consortium success bands", ok, curve)


# ------------------------------------------------------------------ 4


def test_criterion_4_delay_degrades(verdict, consortium_curves):
    long = [m for m in MINUTES if m >= 5]
    fast = [consortium_curves[(0.5, m)] for m in long]
    slow = [consortium_curves[(250.0, m)] for m in long]
    wins_fast, wins_slow = sum(s.successes for s in fast), sum(s.successes for s in slow)
    blocks = {}
    for label, cells in (("fast", fast), ("slow", slow)):
        blocks[label] = (
            sum(s.mean_blocks_adversary for s in cells) / len(cells),
            sum(s.mean_blocks_victim for s in cells) / len(cells),
        )
    ok = wins_slow <= wins_fast and blocks["slow"][0] < blocks["fast"][0] and blocks["slow"][1] < blocks["fast"][1]
    n = sum(s.trials for s in fast)
    detail = (
        f"success {wins_slow / n:.4f} vs {wins_fast / n:.4f}; blocks A {blocks['slow'][0]:.2f} vs "
        f"{blocks['fast'][0]:.2f}, B {blocks['slow'][1]:.2f} vs {blocks['fast'][1]:.2f}"
    )
    verdict(4, "250 ms delay degrades", ok, detail)


# ------------------------------------------------------------------ 5


def test_criterion_5_deeper_confirmation(verdict):
    scenario, _ = load_scenario("consortium-table-III")
    scenario = validate_scenario(scenario)
    wins = {12: 0, 40: 0}
    violations = 0
    n = 0
    for minutes in (9, 10):
        for i in range(200):
            seed = trial_seed(2018, "adv", i)
            out = {}
            for m in (12, 40):
                sc = replace(scenario, attack=replace(scenario.attack, duration=60.0 * minutes, confirmations=m))
                out[m] = run_trial(sc, seed).success
                wins[m] += out[m]
            violations += out[40] and not out[12]
            n += 1
    ok = wins[12] >= 5 * wins[40] and wins[12] > 0 and violations == 0
    verdict(5, "m=40 countermeasure", ok, f"m=12 {wins[12] / n:.4f}, m=40 {wins[40] / n:.4f}, {violations} subset violations")


# ------------------------------------------------------------------ 6


def test_criterion_6_difficulty_inertia(verdict):
    scenario, _ = load_scenario("consortium-table-III")
    scenario = validate_scenario(replace(scenario, attack=replace(scenario.attack, duration=1800.0)))
    diffs = [run_trial(scenario, trial_seed(2018, "inertia", i)).victim_difficulty for i in range(100)]
    high = sum(d > 3_600_000 for d in diffs)
    verdict(6, "difficulty inertia", high >= 95, f"{high}/100 above 3.6e6, lowest {min(diffs)}")


# ------------------------------------------------------------------ 7


def test_criterion_7_gain(verdict):
    g = project_gain(0.8, 9, 67 * 9)
    flat = project_gain(0.5, 540, 36000, y0=2.5)
    exact = all(project_gain(p, 540, k * 540) == gain_after(p, k) for p in (0.3, 0.8, 1.0) for k in (0, 1, 66, 67))
    ok = 201_900 <= g <= 201_910 and flat == 2.5 and exact
    verdict(7, "gain projection", ok, f"67 attempts {g:.2f}, p=0.5 -> {flat}, integer agreement {exact}")


# ------------------------------------------------------------------ 8


def enumerate_cuts(graph, pools):
    """Second-largest component mass over every subset of transit edges."""
    mass = dict.fromkeys(graph.vertices, 0.0)
    for p in pools:
        for srv in p.servers:
            mass[srv.asn] += p.power / len(p.servers)
    transit = graph.hijackable()
    best = 0.0
    for bits in range(1 << len(transit)):
        cut = {e for i, e in enumerate(transit) if bits >> i & 1}
        h = nx.Graph()
        h.add_nodes_from(graph.vertices)
        h.add_edges_from(e for e in graph.edges if e not in cut)
        sizes = sorted((sum(mass[v] for v in c) for c in nx.connected_components(h)), reverse=True)
        best = max(best, sizes[1] if len(sizes) > 1 else 0.0)
    return best / sum(p.power for p in pools)


def test_criterion_8_feasibility(verdict):
    pools, graph = ingest_pool_dataset(data_path("intel", "table1_pools.csv"), data_path("intel", "as_peering_illustrative.csv"))
    core = peering_connected_pools(graph, pools)
    core_sep = max_separable_power(graph, core).fraction
    toy_pools, toy_graph = ingest_pool_dataset(data_path("intel", "toy_pools.csv"), data_path("intel", "toy_peering.csv"))
    toy = max_separable_power(toy_graph, toy_pools).fraction
    oracle = enumerate_cuts(toy_graph, toy_pools)
    ok = core_sep == 0 and abs(toy - 0.40) < 1e-12 and abs(toy - oracle) < 1e-12
    verdict(8, "partition feasibility", ok, f"{len(core)} peering-connected pools -> {core_sep}, toy -> {toy:.2f}")


# ------------------------------------------------------------------ 9


def test_criterion_9_determinism(verdict, tmp_path):
    differing = []
    for preset in PRESET_NAMES:
        scenario, grid = load_scenario(preset)
        grid = replace(grid, durations=(300.0,), delays=grid.delays[:1], m_values=grid.m_values[:1], trials=3,
                       adversaries=grid.adversaries[:2])
        blobs = []
        for k, par in enumerate((1, 1, 2)):
            _, trials = run_grid(grid, parallelism=par)
            path = tmp_path / f"{preset}-{k}.jsonl"
            write_trial_records(trials, path)
            blobs.append(path.read_bytes())
        if len(set(blobs)) != 1:
            differing.append(preset)
    verdict(9, "determinism", not differing, f"{len(PRESET_NAMES)} presets, differing: {differing or 'none'}")


# ------------------------------------------------------------------ 10


def test_criterion_10_mining_fairness(verdict):
    dist = load_power_distribution(data_path("powers", "table1_emulation.csv")).calibrated(4_200_000, 15)
    topo = load_topology(data_path("topologies", "public_emulation.topo"))
    sim = Simulation(topo, dist, 4_200_000, seed=10)
    while len(sim.mined) < 10_000:
        sim.step()
    shares = block_shares(sim.mined[:10_000], dist.ids)
    worst = max(abs(shares[e.id] - e.power) for e in dist.entries)
    verdict(10, "mining fairness", worst <= 0.015, f"max deviation {100 * worst:.2f} pp over 10000 blocks")
