import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resilsim.contracts import Envelope, parse_contract
from resilsim.observers import (
    ENVELOPE_EXCEEDED,
    MISSED_DEADLINE,
    MISSED_SAMPLE,
    OUT_OF_RANGE,
    HybridObserver,
    PointObserver,
    TimedObserver,
    TimeRegression,
    envelope_observer,
    fresh_copy,
    synthesize_observer,
)

from oracles import brute_force_timing


def run_timed(events, period, deadline, end):
    obs = TimedObserver(period, deadline)
    out = []
    for t, kind in events:
        v = obs.step_event(kind, t)
        out.append((v.status, v.kind, v.at))
    v = obs.advance_time(end)
    out.append((v.status, v.kind, v.at))
    return out


@st.composite
def timing_traces(draw, horizon=300):
    period = draw(st.integers(1, 40))
    deadline = draw(st.integers(1, 40))
    times = sorted(draw(st.lists(st.integers(0, horizon), max_size=30)))
    events = [(t, draw(st.sampled_from(["sample", "done"]))) for t in times]
    return events, period, deadline, horizon


class TestTimedObserver:
    def test_gap_equal_to_period_is_fine(self):
        obs = TimedObserver(150, 10)
        for t in (0, 150, 300):
            obs.step_event("sample", t)
            obs.step_event("done", t + 5)
        assert not obs.advance_time(450).violated
        v = obs.advance_time(451)
        assert (v.kind, v.at) == (MISSED_SAMPLE, 451)

    def test_deadline_is_strict(self):
        obs = TimedObserver(150, 10)
        obs.step_event("sample", 100)
        assert not obs.advance_time(109).violated
        v = obs.advance_time(120)
        assert (v.kind, v.at) == (MISSED_DEADLINE, 110)

    def test_done_just_before_deadline(self):
        obs = TimedObserver(150, 10)
        obs.step_event("sample", 100)
        assert not obs.step_event("done", 109).violated

    def test_deadline_wins_a_tie(self):
        obs = TimedObserver(10, 10)
        obs.step_event("sample", 0)
        obs.step_event("sample", 1)
        v = obs.advance_time(50)
        assert (v.kind, v.at) == (MISSED_DEADLINE, 10)

    def test_verdict_is_sticky_until_reset(self):
        obs = TimedObserver(5, 2)
        v = obs.advance_time(100)
        assert v.at == 6
        assert obs.step_event("sample", 101).violated
        assert not obs.reset(102).violated
        assert obs.next_timeout() == 108

    def test_next_timeout(self):
        obs = TimedObserver(150, 10)
        assert obs.next_timeout() == 151
        obs.step_event("sample", 20)
        assert obs.next_timeout() == 30

    def test_time_cannot_go_back(self):
        obs = TimedObserver(5, 2)
        obs.advance_time(10)
        with pytest.raises(TimeRegression):
            obs.step_event("sample", 9)

    @settings(max_examples=300, deadline=None)
    @given(timing_traces())
    def test_matches_tick_walker(self, trace):
        events, period, deadline, end = trace
        assert run_timed(events, period, deadline, end) == brute_force_timing(events, period, deadline, end)

    @settings(max_examples=200, deadline=None)
    @given(timing_traces(horizon=200))
    def test_finer_grid_gives_same_verdicts(self, trace):
        events, period, deadline, end = trace
        coarse = run_timed(events, period, deadline, end)
        fine = run_timed([(2 * t, k) for t, k in events], 2 * period, 2 * deadline, 2 * end)
        for c, f in zip(coarse, fine):
            assert c[:2] == f[:2]
            if c[2] is not None:
                assert abs(f[2] - 2 * c[2]) <= 2

    def test_fresh_copy_is_independent(self):
        obs = TimedObserver(10, 5)
        obs.step_event("sample", 0)
        twin = fresh_copy(obs, 3)
        twin.advance_time(40)
        assert twin.verdict.violated
        assert not obs.step_event("done", 4).violated


class TestPointObserver:
    contract = parse_contract(
        "contract C3 { inputs: raw : real\n outputs: colour : real\n assumptions: raw <= 1023\n"
        " guarantee: member colour in [750, 755] [568, 590] }"
    )

    def test_flags_every_bad_reading(self):
        obs = PointObserver(self.contract)
        obs.step_event({"raw": 1, "colour": 752}, 1)
        obs.step_event({"raw": 1, "colour": 600}, 2)
        obs.step_event({"raw": 1, "colour": 601}, 3)
        assert obs.verdict.kind == OUT_OF_RANGE and obs.verdict.at == 2
        assert obs.flags == [(2, 600), (3, 601)]

    def test_broken_assumption_is_not_a_violation(self):
        obs = PointObserver(self.contract)
        obs.step_event({"raw": 5000, "colour": 0}, 1)
        assert not obs.verdict.violated and obs.assumption_flags == [1]

    def test_needs_point_guarantee(self):
        timing = parse_contract("contract T { guarantee: timing every 1 ms within 1 ms }")
        with pytest.raises(ValueError):
            PointObserver(timing)

    def test_synthesis_picks_family(self):
        assert isinstance(synthesize_observer(self.contract), PointObserver)
        timing = parse_contract("contract T { guarantee: timing every 150 ms within 10 ms }")
        obs = synthesize_observer(timing)
        assert isinstance(obs, TimedObserver) and (obs.period, obs.deadline) == (15000, 1000)


class TestHybridObserver:
    env = Envelope("p", -0.5, 6.0, 0.05)

    def test_rk4_tracks_closed_form(self):
        obs = envelope_observer(self.env, h=100)
        obs.advance_time(100 * 1000)  # 1 s
        assert obs.expected == pytest.approx(6 * math.exp(-0.5), rel=1e-9)

    def test_euler_is_coarser(self):
        rk = envelope_observer(self.env, h=1000)
        eu = envelope_observer(self.env, h=1000, integrator="euler")
        rk.advance_time(100000)
        eu.advance_time(100000)
        exact = 6 * math.exp(-0.5)
        assert abs(eu.expected - exact) > 100 * abs(rk.expected - exact)

    def test_band_violation_low_and_high(self):
        obs = envelope_observer(self.env, h=100)
        obs.step_event({"p": 6.0}, 0)
        assert not obs.verdict.violated
        obs.step_event({"p": 5.6}, 50)
        assert obs.verdict.kind == ENVELOPE_EXCEEDED and obs.verdict.at == 50
        high = envelope_observer(self.env, h=100)
        high.step_event({"p": 6.4}, 10)
        assert high.verdict.violated

    def test_reset_rearms_trajectory(self):
        obs = envelope_observer(self.env, h=100)
        obs.advance_time(50000)
        obs.reset()
        assert obs.expected == 6.0 and obs.armed_at == 50000

    def test_custom_jump_priority(self):
        from resilsim.observers import Jump

        obs = HybridObserver(
            lambda _t, y: 0.0,
            1.0,
            [Jump(5, lambda e, o: o > e, "high"), Jump(1, lambda e, o: o > 2 * e, "very_high")],
            h=10,
            port="y",
        )
        obs.step_event({"y": 5.0}, 0)
        assert obs.verdict.kind == "very_high"

    def test_bad_step(self):
        with pytest.raises(ValueError):
            envelope_observer(self.env, h=0)
