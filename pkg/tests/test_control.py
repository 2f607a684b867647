import pytest
from hypothesis import given, strategies as st

from midas.cache import CacheClass
from midas.control import (ControlDefaults, ControlKnobs, HysteresisState, WarmupError,
                           WarmupTrace, delta_v, fast_tick, slow_tick, warmup_targets)
from midas.core import Rng

D = ControlDefaults()
RTT = 1.0


class FakeWarmup:
    def __init__(self, B, lat, rtt):
        self.trace = WarmupTrace(B, lat, rtt, 60_000.0)
        self.calls = []

    def run_warmup(self, duration_ms, cap):
        self.calls.append((duration_ms, cap))
        return self.trace


def run(P_seq, knobs=None, state=None, seed=0):
    rng = Rng(seed).substream("jitter")
    knobs = knobs or ControlKnobs.initial(D, RTT)
    state = state or HysteresisState()
    out = []
    for P in P_seq:
        knobs, state = fast_tick(state, knobs, P, rng, D, RTT)
        out.append((knobs, state))
    return out


def test_warmup_uniform():
    h = FakeWarmup([0.0] * 100, [100.0] * 50, [1.0])
    t = warmup_targets(h)
    assert t.B_tgt == pytest.approx(0.05)
    assert h.calls == [(60_000.0, 0.30)]


def test_warmup_latency_target():
    lat = [50.0] * 98 + [120.0] * 2  # nearest-rank p99 of 100 samples is the 99th
    assert warmup_targets(FakeWarmup([0.1], lat, [1.0])).P99_tgt == pytest.approx(150.0)


def test_warmup_rtt_floor():
    assert warmup_targets(FakeWarmup([0.1], [1.0] * 10, [5.0])).P99_tgt == pytest.approx(7.0)


def test_warmup_without_data():
    with pytest.raises(WarmupError):
        warmup_targets(FakeWarmup([0.1], [], [1.0]))


def test_escalation_after_three_ticks():
    steps = run([0.2, 0.2, 0.2])
    assert [(k.d, k.delta_L) for k, _ in steps] == [(2, 4), (2, 4), (3, 3)]
    assert steps[-1][1] == HysteresisState(0, 0)


def test_broken_run_resets_counter():
    steps = run([0.2, 0.05, 0.2, 0.2, 0.05, 0.2] * 20)
    assert all((k.d, k.delta_L) == (2, 4) for k, _ in steps)


def test_escalation_saturates():
    knobs = ControlKnobs(4, 3, 1.0, 0.1)
    k, _ = run([0.2] * 3, knobs)[-1]
    assert (k.d, k.delta_L) == (4, 2)
    k, _ = run([0.2] * 3, k)[-1]
    assert (k.d, k.delta_L) == (4, 2)


def test_deescalation_after_eight_quiet_ticks():
    steps = run([0.0] * 8, ControlKnobs(3, 3, 1.0, 0.1))
    assert (steps[6][0].d, steps[6][0].delta_L) == (3, 3)
    assert (steps[7][0].d, steps[7][0].delta_L) == (2, 4)


def test_f_max_fixed_by_default():
    steps = run([5.0] * 30)
    assert all(k.f_max == D.f_cap for k, _ in steps)


@given(st.lists(st.floats(0, 1), max_size=300), st.integers(0, 50))
def test_knob_bounds_and_single_steps(P_seq, seed):
    prev = ControlKnobs.initial(D, RTT)
    for k, _ in run(P_seq, seed=seed):
        assert 1 <= k.d <= 4
        assert D.delta_L_min <= k.delta_L <= D.delta_L_max
        assert k.f_max <= D.f_cap
        assert abs(k.d - prev.d) <= 1 and abs(k.delta_L - prev.delta_L) <= 1
        assert abs(k.delta_t_ms - RTT) <= 0.1 * RTT + 1e-12
        prev = k


@given(st.lists(st.floats(0.0201, 0.0999), min_size=1, max_size=500))
def test_no_chatter_inside_deadband(P_seq):
    assert {(k.d, k.delta_L) for k, _ in run(P_seq)} == {(2, 4)}


def test_jitter_redrawn_each_tick():
    ts = [k.delta_t_ms for k, _ in run([0.05] * 20)]
    assert len(set(ts)) == 20


def _cls(**kw):
    c = CacheClass("mds:/d000:getattr", **kw)
    return c


def test_slow_tick_quiet_class_unchanged():
    c = _cls(hazard=1e-5, ttl_ms=10.0)
    knobs = slow_tick([c], ControlKnobs.initial(D, RTT), D, RTT)
    assert c.hazard == 1e-5
    assert knobs.ttl_ms[c.id] == pytest.approx(10.0005, abs=1e-4)
    again = slow_tick([c], knobs, D, RTT)
    assert again.ttl_ms[c.id] == knobs.ttl_ms[c.id]


def test_slow_tick_applies_write_shrink_on_tick():
    c = _cls(hazard=1e-5, write_fraction=0.25)
    k1 = slow_tick([c], ControlKnobs.initial(D, RTT), D, RTT)
    assert k1.ttl_ms[c.id] == pytest.approx(10.0005, abs=1e-4)
    # the interval is all writes: W_c moves 0.25 -> 0.325 at this tick
    c.requests, c.writes = 10, 10
    k2 = slow_tick([c], k1, D, RTT)
    assert c.write_fraction == pytest.approx(0.325)
    assert k2.ttl_ms[c.id] == pytest.approx(10.0005 * 0.5, abs=1e-4)
    assert c.requests == c.writes == 0


def test_slow_tick_lease_cap():
    c = _cls(hazard=1e-5)
    k = slow_tick([c], ControlKnobs.initial(D, RTT), D, RTT, lease_remaining_ms=5.0)
    assert k.ttl_ms[c.id] == 5.0


def test_delta_v_examples():
    assert delta_v(10, 5) == -8
    assert delta_v(6, 5) == 0
    assert delta_v(7, 4, batch=3) == 0
    with pytest.raises(ValueError):
        delta_v(1, 0, 0)


@given(st.floats(-1e3, 1e3), st.floats(2, 1e3))
def test_margin_two_always_descends(Lj, gap):
    assert delta_v(Lj + gap, Lj) <= -2 + 1e-9


def test_defaults_validate():
    assert D.validate() == []
    assert "d0: must be in {1,2,3,4} (got 9)" in ControlDefaults(d0=9).validate()
