import math

import pytest
from hypothesis import given, strategies as st

from midas.telemetry import (LATENCY_WINDOW_CAP, NoDataError, PressureInputs, Telemetry,
                             ewma_update, imbalance, pressure, quantile)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
latencies = st.lists(st.floats(min_value=0, max_value=1e5, allow_nan=False), min_size=1, max_size=300)


def test_ewma_examples():
    assert ewma_update(10, 20, 0.2) == pytest.approx(12.0)
    assert ewma_update(0, 5, 1.0) == 5.0


@given(finite, st.floats(min_value=0.01, max_value=1.0))
def test_ewma_fixed_point(x, alpha):
    assert ewma_update(x, x, alpha) == pytest.approx(x)


@given(finite, finite, st.floats(min_value=0.01, max_value=1.0), st.integers(1, 50))
def test_ewma_geometric_contraction(x0, c, alpha, k):
    x = x0
    for _ in range(k):
        x = ewma_update(x, c, alpha)
    assert abs(x - c) <= (1 - alpha) ** k * abs(x0 - c) + 1e-6 * (1 + abs(c) + abs(x0))


def test_ewma_alpha_range():
    with pytest.raises(ValueError):
        ewma_update(1, 2, 0.0)


def test_quantile_nearest_rank():
    assert quantile([1, 2, 3, 4, 5], 0.5) == 3
    assert quantile([7], 0.99) == 7
    assert quantile(list(range(1, 101)), 0.99) == 99


def test_quantile_empty():
    with pytest.raises(NoDataError):
        quantile([], 0.5)


@given(latencies)
def test_quantile_ordered(w):
    assert quantile(w, 0.5) <= quantile(w, 0.99)
    assert quantile(w, 0.99) in w


def test_imbalance_examples():
    assert imbalance([5, 5, 5, 5], 1e-6) == 0.0
    assert imbalance([0, 10], 1e-6) == pytest.approx(1.0, rel=1e-6)
    assert imbalance([0, 0, 0], 1e-6) == 0.0


@given(st.lists(st.floats(min_value=0.1, max_value=1e3), min_size=1, max_size=32))
def test_imbalance_scale_free(loads):
    scaled = [10 * x for x in loads]
    assert imbalance(scaled, 1e-12) == pytest.approx(imbalance(loads, 1e-12), abs=1e-6)


def test_pressure_examples():
    assert pressure(PressureInputs(0.2, 30, 0.1, 40)) == pytest.approx(0.1)
    assert pressure(PressureInputs(0.1, 40, 0.1, 40)) == 0.0
    # only the latency hinge fires: 50/40 - 1
    assert pressure(PressureInputs(0.05, 50, 0.1, 40)) == pytest.approx(0.25)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 1e4), st.floats(0, 1e4),
       st.floats(0.01, 2), st.floats(1, 1e3))
def test_pressure_monotone(b1, b2, p1, p2, btgt, ptgt):
    lo = pressure(PressureInputs(min(b1, b2), min(p1, p2), btgt, ptgt))
    hi = pressure(PressureInputs(max(b1, b2), max(p1, p2), btgt, ptgt))
    assert 0.0 <= lo <= hi


def test_unmeasured_server_has_no_quantiles():
    t = Telemetry(3)
    t.record_latency(1, 4.0)
    snap = t.tick(250_000, [0, 2, 1])
    assert snap.p50 == (None, 4.0, None)
    assert snap.queue == (0.0, 2.0, 1.0)
    assert snap.p99_global() == 4.0
    assert snap.staleness_us(300_000) == 50_000


def test_snapshot_is_ewma_smoothed():
    t = Telemetry(1, alpha=0.2)
    t.tick(0, [10])
    snap = t.tick(1, [20])
    assert snap.queue[0] == pytest.approx(12.0)


def test_latency_window_capped():
    t = Telemetry(1)
    for i in range(LATENCY_WINDOW_CAP + 500):
        t.record_latency(0, float(i))
    assert len(t.servers[0].latency_window) == LATENCY_WINDOW_CAP
    t.tick(0, [0])
    # nearest-rank median of the last 1024 samples 500..1523
    assert t.servers[0].p50 == 500 + math.ceil(0.5 * LATENCY_WINDOW_CAP) - 1
