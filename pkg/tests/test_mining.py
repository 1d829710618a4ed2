import random
import statistics

import pytest

from ethpartition.chain import BlockTree, make_genesis
from ethpartition.mining import (
    PowerError,
    WorkRace,
    block_shares,
    equal_distribution,
    load_power_distribution,
    mine_on,
    mining_rate,
    next_block_delay,
)
from ethpartition.scenario import data_path


def test_mean_delay_matches_rate():
    rng = random.Random(1)
    power, H, D = 0.25, 4.2e6 / 15, 4_200_000
    draws = [next_block_delay(rng, power, H, D) for _ in range(100_000)]
    expected = 1 / mining_rate(power, H, D)  # 60 s
    assert statistics.fmean(draws) == pytest.approx(expected, rel=0.02)


def race_shares(dist, blocks, seed=0):
    races = {e.id: WorkRace(random.Random(f"{seed}:{e.id}"), e.power, dist.total_hashrate) for e in dist.entries}
    due = {m: r.retarget(0.0, 1000) for m, r in races.items()}
    wins = {m: 0 for m in races}
    for _ in range(blocks):
        winner = min(due, key=due.__getitem__)
        now = due[winner]
        wins[winner] += 1
        due[winner] = races[winner].solved(now, 1000)
        for m, r in races.items():
            if m != winner:
                due[m] = r.retarget(now, 1000)
    return {m: w / blocks for m, w in wins.items()}


def test_consortium_group_shares():
    ids = ["adv"] + [f"m{i}" for i in range(1, 9)]
    dist = equal_distribution(ids)
    shares = race_shares(dist, 20_000)
    group_a = sum(shares[m] for m in ids[:5])
    assert group_a == pytest.approx(5 / 9, abs=0.01)
    assert 1 - group_a == pytest.approx(4 / 9, abs=0.01)


def test_rescaling_keeps_find_time_on_same_difficulty():
    race = WorkRace(random.Random(4), 0.5, 2.0)
    first = race.retarget(0.0, 100)
    again = race.retarget(first / 2, 100)
    assert again == pytest.approx(first)
    # doubling difficulty halfway doubles the remaining time
    slower = race.retarget(first / 2, 200)
    assert slower == pytest.approx(first / 2 + first)


def test_table_one_normalised():
    dist = load_power_distribution(data_path("powers", "table1_emulation.csv"))
    assert len(dist.entries) == 10
    assert sum(e.power for e in dist.entries) == pytest.approx(1.0, abs=1e-12)
    assert dist["f2pool"].power == pytest.approx(27.02 / 96.07, abs=1e-9)
    assert dist["f2pool"].power == pytest.approx(0.28125, abs=1e-4)


def test_loader_errors(tmp_path):
    with pytest.raises(PowerError):
        load_power_distribution([])
    with pytest.raises(PowerError):
        load_power_distribution([{"name": "a", "power": "x"}])
    with pytest.raises(PowerError):
        load_power_distribution([{"name": "a", "power": "0"}])
    with pytest.raises(PowerError):
        load_power_distribution([{"name": "a", "power": "-3"}])
    with pytest.raises(PowerError):
        equal_distribution(["a", "a"])
    f = tmp_path / "p.csv"
    f.write_text("name,power\n")
    with pytest.raises(PowerError):
        load_power_distribution(f)


def test_rate_errors():
    with pytest.raises(PowerError):
        mining_rate(0.5, 1.0, 0)
    with pytest.raises(PowerError):
        mining_rate(0.0, 1.0, 10)


def test_roles():
    dist = equal_distribution(["a", "b"]).with_roles("b")
    assert dist["b"].role == "adversary" and dist["a"].role == "honest"
    assert "a" in dist and "z" not in dist
    with pytest.raises(KeyError):
        dist["z"]


def test_mine_on_builds_valid_child():
    tree = BlockTree(make_genesis(4_200_000), validate=True)
    b = mine_on("m1", tree, 14.2, "b1")
    assert b.parent == "genesis" and b.number == 1 and b.timestamp == 14
    assert tree.add(b)


def test_block_shares_empty():
    assert block_shares([], ["a"]) == {"a": 0.0}
