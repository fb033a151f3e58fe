from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resilsim.kernel import (
    FaultSpec,
    Kernel,
    NodeStatus,
    PlatformMapping,
    SchedulingError,
    UnknownTarget,
)
from resilsim.metrics import Segment
from resilsim.timebase import ms, to_ms, fmt_ms


class TestTimebase:
    def test_quoted_durations_are_whole_ticks(self):
        assert ms(9.1) == 910
        assert ms(9.72) == 972
        assert ms(0.62) == 62
        assert ms(259.2) == 25920
        assert ms(460.5) == 46050

    def test_off_grid_value_rejected(self):
        with pytest.raises(ValueError):
            ms(0.001)
        assert ms(0.001, strict=False) == 0

    def test_formatting(self):
        assert fmt_ms(46050) == "460.5"
        assert fmt_ms(379972) == "3799.72"
        assert fmt_ms(45000) == "450"
        assert to_ms(972) == pytest.approx(9.72)


class TestScheduling:
    def test_same_tick_events_run_in_insertion_order(self):
        k = Kernel()
        seen = []
        for name in "abc":
            k.schedule(5, name, "ev", lambda n=name: seen.append(n))
        k.schedule(1, "z", "ev", lambda: seen.append("z"))
        k.run_until(10)
        assert seen == ["z", "a", "b", "c"]

    def test_scheduling_in_the_past_fails(self):
        k = Kernel()
        k.run_until(100)
        with pytest.raises(SchedulingError):
            k.schedule(50, "x", "ev")

    def test_run_until_stops_at_horizon(self):
        k = Kernel()
        k.schedule(10, "a", "ev")
        k.schedule(20, "b", "ev")
        assert k.run_until(15) == 1
        assert k.now == 15
        assert k.pending() == 1

    def test_cancelled_event_is_skipped(self):
        k = Kernel()
        seen = []
        ev = k.schedule(3, "a", "ev", lambda: seen.append(1))
        k.cancel(ev)
        k.run_until(10)
        assert seen == [] and k.dispatch_log == []

    def test_dispatch_log_format(self):
        k = Kernel()
        k.schedule(7, "C1", "complete", detail="a,b")
        k.run_until(7)
        assert k.dispatch_log == ["7,C1,complete,a;b"]

    def test_actions_can_schedule_follow_ups(self):
        k = Kernel()
        seen = []

        def chain(n):
            seen.append((k.now, n))
            if n < 3:
                k.schedule(k.now + 2, "x", "ev", lambda: chain(n + 1))

        k.schedule(0, "x", "ev", lambda: chain(0))
        k.run_until(100)
        assert seen == [(0, 0), (2, 1), (4, 2), (6, 3)]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 1000), max_size=60))
    def test_dispatch_is_sorted_by_time_then_seq(self, times):
        k = Kernel()
        order = []
        for i, t in enumerate(times):
            k.schedule(t, "x", "ev", lambda t=t, i=i: order.append((t, i)))
        k.run_until(1000)
        assert order == sorted(order)

    def test_same_seed_same_draws(self):
        a, b = Kernel(seed=11), Kernel(seed=11)
        assert [a.rng.random() for _ in range(5)] == [b.rng.random() for _ in range(5)]


def _platform(**kw):
    k = Kernel(**kw)
    k.add_node("N1")
    k.set_mapping(PlatformMapping({"C1": "N1"}, {("C1", "Beh1"): ms(9.1), ("C1", "*"): ms(4.1)}))
    return k


class TestPlatform:
    def test_execution_cost_lookup_with_wildcard(self):
        k = _platform()
        assert k.execution_duration("C1", "Beh1") == 910
        assert k.execution_duration("C1", "Beh2") == 410

    def test_unmapped_component(self):
        k = _platform()
        with pytest.raises(KeyError):
            k.execution_duration("C9", "Beh1")

    def test_mapping_to_unknown_node_rejected(self):
        k = Kernel()
        with pytest.raises(UnknownTarget):
            k.set_mapping(PlatformMapping({"C1": "N7"}))

    def test_slowdown_stretches_to_exact_tick(self):
        k = _platform()
        k.inject_fault(FaultSpec("N1", 0, "permanent", "slowdown", Fraction(2592, 91)))
        k.run_until(0)
        assert k.nodes["N1"].status is NodeStatus.DEGRADED
        assert k.execution_duration("C1", "Beh1") == ms(259.2)

    def test_down_node_never_completes(self):
        k = _platform()
        k.inject_fault(FaultSpec("N1", 0, "permanent", "down"))
        k.run_until(0)
        assert k.execution_duration("C1", "Beh1") is None

    def test_unknown_fault_target(self):
        with pytest.raises(UnknownTarget):
            Kernel().inject_fault(FaultSpec("N9", 0))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "sometimes"},
            {"effect": "melt"},
            {"kind": "transient"},
            {"kind": "intermittent", "on_ms": 5.0},
            {"effect": "slowdown", "factor": Fraction(1, 2)},
            {"effect": "stuck_value"},
        ],
    )
    def test_invalid_fault_specs(self, kwargs):
        with pytest.raises(ValueError):
            FaultSpec("N1", 0, **kwargs)


class TestAvailability:
    def test_permanent_fault_profile(self):
        k = _platform()
        k.inject_fault(FaultSpec("N1", ms(200), "permanent", "down", id="F1"))
        k.run_until(ms(1000))
        a = k.availability("N1")
        assert a.segments == (Segment(0, ms(200), 1), Segment(ms(200), ms(1000), 0))
        assert [r.to_line() for r in k.fault_log] == ["20000,F1,N1,inject,down"]

    def test_transient_fault_profile_with_slowdown(self):
        k = _platform()
        k.inject_fault(FaultSpec("N1", ms(300), "transient", "slowdown", Fraction(4), duration_ms=150))
        k.run_until(ms(1000))
        a = k.availability("N1")
        assert a.value_at(ms(299)) == 1
        assert a.value_at(ms(300)) == Fraction(1, 4)
        assert a.value_at(ms(449.99)) == Fraction(1, 4)
        assert a.value_at(ms(450)) == 1

    def test_degraded_counts_as_up_when_configured(self):
        k = _platform(degraded_availability="up")
        k.inject_fault(FaultSpec("N1", 10, "transient", "slowdown", Fraction(4), duration_ms=1))
        k.run_until(1000)
        assert k.availability("N1").segments == (Segment(0, 1000, 1),)

    def test_intermittent_alternates_up_then_down(self):
        k = _platform()
        k.inject_fault(FaultSpec("N1", ms(100), "intermittent", "down", on_ms=50, off_ms=20))
        k.run_until(ms(300))
        a = k.availability("N1")
        # up-phase first, then down, repeating
        expected = [(0, 150, 1), (150, 170, 0), (170, 220, 1), (220, 240, 0), (240, 290, 1), (290, 300, 0)]
        assert [(to_ms(s.start), to_ms(s.end), s.value) for s in a.segments] == expected

    def test_stuck_value_on_sensor_is_unavailable(self):
        k = Kernel()
        k.add_target("CS", "sensor")
        k.inject_fault(FaultSpec("CS", 5, "transient", "stuck_value", value=600.0, duration_ms=0.1))
        k.run_until(100)
        assert k.availability("CS").segments == (Segment(0, 5, 1), Segment(5, 15, 0), Segment(15, 100, 1))

    def test_duplicate_target_rejected(self):
        k = Kernel()
        k.add_target("CS", "sensor")
        with pytest.raises(ValueError):
            k.add_target("CS", "sensor")

    def test_fault_from_dict(self):
        spec = FaultSpec.from_dict(
            {"target": "N1", "t0_ms": 300, "kind": "transient", "effect": "slowdown", "factor": "2592/91", "duration_ms": 150}
        )
        assert spec.t0 == 30000 and spec.factor == Fraction(2592, 91)
