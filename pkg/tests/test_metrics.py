import statistics

import numpy as np
import pytest
from hypothesis import given, strategies as st

from midas.config import ExperimentConfig, WorkloadSpec
from midas.metrics import (ComparisonError, CsvVersionError, RunResult, balls_into_bins_check,
                           balls_into_bins_max_load, coefficient_of_variation, compare, dispersion,
                           lyapunov_violations, read_csv, reroute_cap_violations, summary_from_dir,
                           time_averages)
from midas.sim import run_experiment


def _flat(levels, duration_us=1_000_000, arrivals=()):
    """A run where server i holds queue ``levels[i]`` for the whole duration."""
    log = [(0, i, q) for i, q in enumerate(levels)]
    return RunResult("t", "x", 0, len(levels), duration_us, arrivals=list(arrivals), queue_log=log)


def test_dispersion_examples():
    assert dispersion(_flat([0, 10])) == pytest.approx(1.0)
    assert dispersion(_flat([3, 3, 3, 3])) == 0.0
    assert dispersion(_flat([7])) == 0.0
    assert dispersion(_flat([0, 0, 0])) == 0.0


def test_time_average_of_a_step():
    # queue 0 for the first quarter, 4 afterwards
    log = [(0, 0, 0), (250_000, 0, 4)]
    assert time_averages(log, 1, 1_000_000) == [3.0]


@given(st.lists(st.floats(0.1, 100.0), min_size=2, max_size=20), st.floats(0.1, 50.0))
def test_adding_a_constant_lowers_dispersion(values, c):
    if statistics.pstdev(values) == 0:
        return
    assert coefficient_of_variation([v + c for v in values]) < coefficient_of_variation(values)


@given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=20))
def test_cv_matches_numpy(values):
    expected = 0.0 if np.mean(values) == 0 else np.std(values) / np.mean(values)
    assert coefficient_of_variation(values) == pytest.approx(expected, abs=1e-9)


def test_compare_examples():
    base = _flat([10, 10])
    rep = compare(base, _flat([7.7, 7.7]))
    assert rep.mean_queue_reduction == pytest.approx(0.23)
    rep = compare(_flat([50, 0]), _flat([10, 0]))
    assert rep.worst_case_reduction == pytest.approx(0.80)
    assert compare(base, base).mean_queue_reduction == 0.0


def test_compare_refuses_different_arrivals():
    a = _flat([1, 1], arrivals=[(0, 0, "/a", "getattr", False, 0, 0, False)])
    b = _flat([1, 1], arrivals=[(0, 5, "/a", "getattr", False, 0, 0, False)])
    with pytest.raises(ComparisonError):
        compare(a, b)


def test_summary_matches_raw_csv(tmp_path):
    wl = WorkloadSpec(pattern="skewed_zipf", duration_s=20.0, base_rate=40.0, zipf_s=1.0,
                      key_universe=2000)
    res = run_experiment(ExperimentConfig(name="s", m=4, workload=wl), 1)
    res.write(tmp_path)
    assert summary_from_dir(tmp_path) == pytest.approx(res.summary)


def test_csv_header_is_versioned(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("# midas-csv v1 x\na,b\n1,2\n")
    assert read_csv(p) == [{"a": "1", "b": "2"}]
    p.write_text("# midas-csv v0 x\na,b\n1,2\n")
    with pytest.raises(CsvVersionError):
        read_csv(p)
    p.write_text("a,b\n1,2\n")
    with pytest.raises(CsvVersionError):
        read_csv(p)


def _dec(t_us, steered, f_max=0.1, proxy=0, eligible=True, Lp=5, Lc=1):
    return (t_us, 0, proxy, "/k", 0, 1 if steered else 0, eligible, steered, False, False,
            2, 2, 1.0, f_max, Lp, Lc, t_us)


def test_lyapunov_audit_flags_small_margins():
    assert lyapunov_violations([_dec(0, True, Lp=5, Lc=3)]) == []
    bad = _dec(0, True, Lp=5, Lc=4)
    assert lyapunov_violations([bad]) == [bad]
    assert lyapunov_violations([_dec(0, False, Lp=5, Lc=5)]) == []


def _brute_cap(decisions, window_us):
    out = []
    evs = [d for d in decisions if d[6]]
    for i, a in enumerate(evs):
        inside = [d for d in evs[i:] if d[0] - a[0] < window_us]
        acc = 0.0
        for d in inside:
            acc += (1.0 if d[7] else 0.0) - d[13]
            if acc > 1.0 + 1e-9:
                out.append((a[2], a[0]))
                break
    return out


@given(st.lists(st.tuples(st.integers(0, 3_000_000), st.booleans(), st.booleans()), max_size=60))
def test_cap_audit_matches_brute_force(events):
    decs = [_dec(t, s, eligible=e) for t, s, e in sorted(events)]
    decs = [d for d in decs if d[6] or not d[7]]
    assert reroute_cap_violations(decs, 1_000_000) == _brute_cap(decs, 1_000_000)


def test_balls_into_bins_single_bin_takes_everything():
    rng = np.random.default_rng(0)
    assert balls_into_bins_max_load(1, 17, 1, rng) == 17
    assert balls_into_bins_max_load(1, 17, 3, rng) == 17
    assert balls_into_bins_max_load(5, 0, 2, rng) == 0


def test_balls_into_bins_two_choices_beat_one():
    one = balls_into_bins_check(1000, 1000, 1, 10, seed=1)
    two = balls_into_bins_check(1000, 1000, 2, 10, seed=1)
    assert all(b <= a for a, b in zip(one.max_loads, two.max_loads))
    assert two.median < one.median
