from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from ethpartition.analysis import (
    ExperimentGrid,
    GridError,
    emit_results,
    gain_after,
    gain_series,
    project_gain,
    read_trial_records,
    run_grid,
    success_matrix,
    trial_seed,
    wilson_interval,
)
from ethpartition.attack import AttackSpec
from ethpartition.scenario import load_scenario


# ----------------------------------------------------------------------- gain


def test_gain_after_67_attempts():
    assert 201_900 <= project_gain(0.8, 9, 67 * 9) <= 201_910


def test_gain_ten_hours_of_nine_minute_attacks():
    # 600 / 9 is not whole: the continuous projection lands below 67 attempts
    g = project_gain(0.8, 9 * 60, 10 * 3600)
    assert gain_after(0.8, 66) < g < gain_after(0.8, 67)


def test_coin_flip_keeps_the_fund():
    assert project_gain(0.5, 9, 600, y0=3.0) == pytest.approx(3.0)


@given(st.floats(0, 1), st.integers(1, 200), st.integers(0, 60))
def test_whole_attempts_agree(p, T, k):
    assert project_gain(p, T, k * T) == pytest.approx(gain_after(p, k), rel=1e-12)


def test_gain_errors():
    for args in ((1.2, 9, 60), (0.8, 0, 60), (0.8, 9, -1)):
        with pytest.raises(ValueError):
            project_gain(*args)
    with pytest.raises(ValueError):
        project_gain(0.8, 9, 60, y0=0)
    with pytest.raises(ValueError):
        gain_after(0.8, -1)


def test_gain_series_steps():
    series = gain_series(0.8, 540, 3600)
    assert [s[0] for s in series] == list(range(7))
    assert series[-1][1] == 6 * 540
    assert series[3][2] == pytest.approx(1.2**3)


# ---------------------------------------------------------------- statistics


def test_wilson_single_trial():
    lo, hi = wilson_interval(1, 1)
    assert 0 < lo < 1 and hi == pytest.approx(1.0)
    lo, hi = wilson_interval(0, 1)
    assert lo == pytest.approx(0.0) and 0 < hi < 1


def test_wilson_contains_estimate():
    lo, hi = wilson_interval(77, 100)
    assert lo < 0.77 < hi
    assert hi - lo < 0.2


def test_trial_seed_pairs_across_axes():
    assert trial_seed(2018, "adv", 3) == trial_seed(2018, "adv", 3)
    assert trial_seed(2018, "adv", 3) != trial_seed(2018, "adv", 4)
    assert trial_seed(2018, "adv", 3) != trial_seed(2019, "adv", 3)
    assert trial_seed(2018, "adv", 3) != trial_seed(2018, "m1", 3)


# ---------------------------------------------------------------------- grids


@pytest.fixture(scope="module")
def small_grid():
    scenario, _ = load_scenario("consortium-table-III")
    scenario = replace(scenario, warmup=600.0)
    return ExperimentGrid(scenario, durations=(180.0, 600.0), delays=(0.5, 250.0), m_values=(12,), trials=4, master_seed=5)


@pytest.fixture(scope="module")
def small_run(small_grid):
    return run_grid(small_grid)


def test_grid_order_and_pairing(small_grid, small_run):
    summaries, trials = small_run
    assert [(s.delay_ms, s.duration) for s in summaries] == [(0.5, 180.0), (0.5, 600.0), (250.0, 180.0), (250.0, 600.0)]
    assert len(trials) == 16
    for i, r in enumerate(trials):
        assert r.seed == trial_seed(5, "adv", i % 4)
        assert r.duration == summaries[i // 4].duration
    for s in summaries:
        assert 0 <= s.ci_low <= s.success_rate <= s.ci_high <= 1


def test_parallel_run_is_identical(small_grid, small_run):
    _, trials = small_run
    _, again = run_grid(small_grid, parallelism=2)
    assert [t.to_record() for t in again] == [t.to_record() for t in trials]


def test_emit_round_trip(tmp_path, small_run):
    summaries, trials = small_run
    files = emit_results(summaries, trials, tmp_path)
    assert read_trial_records(files["trials"]) == trials
    header, rows = success_matrix(summaries)
    lines = files["success_rate"].read_text().splitlines()
    assert lines[0] == ",".join(header) and len(lines) == len(rows) + 1
    assert files["block_counts"].read_text().count("\n") == len(summaries) + 1
    assert "side" in files["difficulty"].read_text().splitlines()[0]
    tsv = emit_results(summaries, trials, tmp_path / "t", fmt="tsv")
    assert "\t" in tsv["cells"].read_text()
    with pytest.raises(ValueError):
        emit_results([], [], tmp_path)


def test_grid_errors_name_the_cell(small_grid):
    bad = replace(small_grid, scenario=replace(small_grid.scenario, attack=AttackSpec("adv", merchant="m1", group_a=("adv", "m1"), group_b=("m5",))))
    with pytest.raises(GridError, match="adv=adv duration=180s"):
        run_grid(bad)
    with pytest.raises(ValueError):
        ExperimentGrid(small_grid.scenario, durations=())
    with pytest.raises(ValueError):
        ExperimentGrid(small_grid.scenario, durations=(60.0,), trials=0)
