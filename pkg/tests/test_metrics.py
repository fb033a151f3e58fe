from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resilsim.metrics import (
    NoEpisodeError,
    Segment,
    StepTrace,
    TraceError,
    build_report,
    parse_faults,
    parse_verdicts,
    performance,
    recovery_period,
    resilience,
    utilization,
)

from oracles import BENCH_TIMELINE_FAULTS, BENCH_TIMELINE_VERDICTS, pointwise_perf, pointwise_util

fractions01 = st.fractions(min_value=0, max_value=1, max_denominator=50)


@st.composite
def trace_pair(draw, end=200):
    """Two step traces on the same window with independent breakpoints."""

    def one():
        cuts = sorted(draw(st.sets(st.integers(1, end - 1), max_size=8)))
        bounds = [0, *cuts, end]
        return StepTrace(tuple(Segment(lo, hi, draw(fractions01)) for lo, hi in zip(bounds, bounds[1:])))

    return one(), one()


class TestStepTrace:
    def test_rejects_gaps_and_out_of_range_values(self):
        with pytest.raises(TraceError):
            StepTrace((Segment(0, 5, 1), Segment(6, 9, 1)))
        with pytest.raises(TraceError):
            StepTrace((Segment(0, 5, 1.5),))
        with pytest.raises(TraceError):
            StepTrace((Segment(3, 3, 1),))
        with pytest.raises(TraceError):
            StepTrace(())

    def test_half_open_lookup(self):
        t = StepTrace.from_segments([(0, 10, 1), (10, 20, 0)])
        assert t.value_at(9) == 1
        assert t.value_at(10) == 0
        with pytest.raises(TraceError):
            t.value_at(20)

    def test_from_changes_merges_equal_runs(self):
        t = StepTrace.from_changes([(0, 1), (5, 1), (8, 0), (8, Fraction(1, 2))], 12)
        assert t.segments == (Segment(0, 8, 1), Segment(8, 12, Fraction(1, 2)))

    def test_text_roundtrip_keeps_fractions(self):
        t = StepTrace.from_segments([(0, 3, Fraction(1, 3)), (3, 7, 0.25), (7, 9, 1)])
        assert StepTrace.from_text(t.to_text()) == t

    def test_empty_text(self):
        with pytest.raises(TraceError):
            StepTrace.from_text("# nothing\n")

    def test_restrict_and_integral(self):
        t = StepTrace.from_segments([(0, 10, 1), (10, 20, Fraction(1, 2))])
        assert t.restrict(5, 15).integral() == 5 + Fraction(5, 2)
        with pytest.raises(TraceError):
            t.restrict(5, 25)


class TestPerformanceUtilization:
    def test_hand_built_six_segments(self):
        a = StepTrace.from_segments(
            [(0, 10, 1), (10, 20, Fraction(1, 2)), (20, 30, 0), (30, 40, 1), (40, 50, Fraction(3, 4)), (50, 60, 0)]
        )
        d = StepTrace.from_segments(
            [(0, 10, 1), (10, 20, 1), (20, 30, Fraction(1, 2)), (30, 40, Fraction(1, 4)), (40, 50, Fraction(3, 4)), (50, 60, 0)]
        )
        p = performance(a, d)
        u = utilization(a, d)
        expected_p = [1, Fraction(1, 2), 0, 1, 1, 1]
        expected_u = [1, 1, 1, Fraction(1, 4), 1, 1]
        assert [p.value_at(t) for t in range(5, 60, 10)] == expected_p
        assert [u.value_at(t) for t in range(5, 60, 10)] == expected_u

    def test_mismatched_windows(self):
        with pytest.raises(TraceError):
            performance(StepTrace.constant(1, 0, 10), StepTrace.constant(1, 0, 11))

    @settings(max_examples=200, deadline=None)
    @given(trace_pair())
    def test_pointwise_agreement(self, pair):
        a, d = pair
        p, u = performance(a, d), utilization(a, d)
        for t in range(0, 200, 7):
            assert p.value_at(t) == pointwise_perf(a.value_at(t), d.value_at(t))
            assert u.value_at(t) == pointwise_util(a.value_at(t), d.value_at(t))

    @settings(max_examples=200, deadline=None)
    @given(trace_pair())
    def test_both_one_iff_equal(self, pair):
        a, d = pair
        p, u = performance(a, d), utilization(a, d)
        for t in set(a.breakpoints()[:-1]) | set(d.breakpoints()[:-1]):
            assert 0 <= p.value_at(t) <= 1 and 0 <= u.value_at(t) <= 1
            both = p.value_at(t) == 1 and u.value_at(t) == 1
            assert both == (a.value_at(t) == d.value_at(t))


class TestResilience:
    def test_two_thirds(self):
        pf = StepTrace.constant(Fraction(2, 3), 0, 1000)
        pn = StepTrace.constant(1, 0, 1000)
        assert resilience(pf, pn, 100, 900) == Fraction(2, 3)

    def test_endpoints(self):
        pn = StepTrace.from_segments([(0, 5, Fraction(1, 2)), (5, 10, 1)])
        assert resilience(pn, pn, 0, 10) == 1
        assert resilience(StepTrace.constant(0, 0, 10), pn, 0, 10) == 0

    def test_zero_over_zero_counts_as_one(self):
        pn = StepTrace.from_segments([(0, 5, 0), (5, 10, 1)])
        assert resilience(pn, pn, 0, 10) == 1

    def test_undefined_ratio_raises(self):
        with pytest.raises(TraceError):
            resilience(StepTrace.constant(1, 0, 10), StepTrace.constant(0, 0, 10), 0, 10)

    def test_empty_window(self):
        t = StepTrace.constant(1, 0, 10)
        with pytest.raises(TraceError):
            resilience(t, t, 5, 5)

    @settings(max_examples=100, deadline=None)
    @given(trace_pair())
    def test_bounded_when_fault_is_dominated(self, pair):
        a, _ = pair
        nominal = StepTrace.constant(1, 0, 200)
        assert 0 <= resilience(a, nominal, 0, 200) <= 1


class TestRecovery:
    def test_fixture_period_from_fault(self):
        rec = recovery_period(parse_verdicts(BENCH_TIMELINE_VERDICTS), parse_faults(BENCH_TIMELINE_FAULTS))
        assert len(rec) == 1
        assert rec[0].period_from_fault == 46050
        assert rec[0].period_from_detection == 45050
        assert rec[0].to_json()["period_from_fault_ms"] == "460.5"

    def test_no_episode(self):
        with pytest.raises(NoEpisodeError):
            recovery_period(parse_verdicts(BENCH_TIMELINE_VERDICTS), [])
        with pytest.raises(NoEpisodeError):
            recovery_period([], parse_faults(BENCH_TIMELINE_FAULTS))

    def test_repeat_violation_does_not_reopen(self):
        text = "1,C,K,violated,x\n2,C,K,violated,y\n9,C,K,recovered,\n"
        rec = recovery_period(parse_verdicts(text), parse_faults("0,F,N,inject,down\n"))
        assert (rec[0].detected_at, rec[0].recovered_at) == (1, 9)

    def test_report_tolerates_missing_episode(self):
        a = StepTrace.from_segments([(0, 10, 1), (10, 20, Fraction(1, 2))])
        report = build_report(a, StepTrace.constant(1, 0, 20))
        assert report.recovery == []
        assert report.resilience == Fraction(3, 4)
        assert report.to_json()["perf"] == [[0, 10, "1"], [10, 20, "1/2"]]
