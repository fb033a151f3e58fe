"""Resilience metric over piecewise-constant traces.

Availability a(t) and demand d(t) are step functions on integer ticks.
Performance and utilization are derived pointwise on the common refinement
of both segmentations, and resilience is the normalized integral of the
ratio between a faulty and a nominal performance trace. Values may be
floats or ``Fraction`` instances; arithmetic stays exact for the latter.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from resilsim.timebase import Time, fmt_ms

Number = float | int | Fraction


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    start: Time
    end: Time
    value: Number


@dataclass(frozen=True)
class StepTrace:
    """Contiguous, non-overlapping segments covering ``[start, end)``."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise TraceError("a trace needs at least one segment")
        prev_end = None
        for seg in self.segments:
            if seg.end <= seg.start:
                raise TraceError(f"empty or reversed segment [{seg.start}, {seg.end})")
            if prev_end is not None and seg.start != prev_end:
                raise TraceError(f"segments not contiguous at tick {seg.start}")
            if not 0 <= seg.value <= 1:
                raise TraceError(f"value {seg.value} outside [0, 1]")
            prev_end = seg.end

    @classmethod
    def from_segments(cls, rows: Iterable[Sequence]) -> "StepTrace":
        return cls(tuple(Segment(int(s), int(e), v) for s, e, v in rows))

    @classmethod
    def constant(cls, value: Number, start: Time, end: Time) -> "StepTrace":
        return cls((Segment(start, end, value),))

    @classmethod
    def from_changes(cls, changes: Sequence[tuple[Time, Number]], end: Time) -> "StepTrace":
        """Build from (tick, value) change points; the first tick opens the window."""
        segs: list[Segment] = []
        points = [c for c in changes if c[0] < end]
        for i, (t, v) in enumerate(points):
            t_next = points[i + 1][0] if i + 1 < len(points) else end
            if t_next > t:
                segs.append(Segment(t, t_next, v))
        return cls(tuple(segs)).merged()

    @property
    def start(self) -> Time:
        return self.segments[0].start

    @property
    def end(self) -> Time:
        return self.segments[-1].end

    @property
    def window(self) -> tuple[Time, Time]:
        return self.start, self.end

    def value_at(self, t: Time) -> Number:
        for seg in self.segments:
            if seg.start <= t < seg.end:
                return seg.value
        raise TraceError(f"tick {t} outside window {self.window}")

    def breakpoints(self) -> list[Time]:
        return [s.start for s in self.segments] + [self.end]

    @classmethod
    def _derived(cls, segments: tuple[Segment, ...]) -> "StepTrace":
        # segments already contiguous with values in [0, 1]; skip re-validation
        trace = object.__new__(cls)
        object.__setattr__(trace, "segments", segments)
        return trace

    def merged(self) -> "StepTrace":
        """Coalesce neighbouring segments with equal values."""
        return StepTrace._derived(_merge(self.segments))

    def restrict(self, tx: Time, ty: Time) -> "StepTrace":
        if tx < self.start or ty > self.end or ty <= tx:
            raise TraceError(f"[{tx}, {ty}) not inside {self.window}")
        segs = [
            Segment(max(s.start, tx), min(s.end, ty), s.value)
            for s in self.segments
            if s.end > tx and s.start < ty
        ]
        return StepTrace(tuple(segs))

    def integral(self) -> Number:
        return sum((s.end - s.start) * s.value for s in self.segments)

    def to_text(self) -> str:
        return "".join(f"{s.start},{s.end},{_num(s.value)}\n" for s in self.segments)

    @classmethod
    def from_text(cls, text: str) -> "StepTrace":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise TraceError(f"line {lineno}: expected start_tick,end_tick,value")
            rows.append((int(parts[0]), int(parts[1]), _parse_num(parts[2])))
        if not rows:
            raise TraceError("empty trace")
        return cls.from_segments(rows)


def _merge(segments: Iterable[Segment]) -> tuple[Segment, ...]:
    out: list[Segment] = []
    for seg in segments:
        if out and out[-1].value == seg.value:
            out[-1] = Segment(out[-1].start, seg.end, seg.value)
        else:
            out.append(seg)
    return tuple(out)


def _num(v: Number) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(v)


def _parse_num(text: str) -> Number:
    text = text.strip()
    if "/" in text:
        return Fraction(text)
    value = float(text)
    return int(value) if value.is_integer() and "." not in text and "e" not in text.lower() else value


def _refine(a: StepTrace, d: StepTrace):
    if a.window != d.window:
        raise TraceError(f"mismatched windows {a.window} and {d.window}")
    cuts = sorted(set(a.breakpoints()) | set(d.breakpoints()))
    ia = id_ = 0
    for lo, hi in zip(cuts, cuts[1:]):
        while a.segments[ia].end <= lo:
            ia += 1
        while d.segments[id_].end <= lo:
            id_ += 1
        yield lo, hi, a.segments[ia].value, d.segments[id_].value


def perf_value(a: Number, d: Number) -> Number:
    return 1 if a >= d else a / d


def util_value(a: Number, d: Number) -> Number:
    return 1 if a <= d else d / a


def performance(a: StepTrace, d: StepTrace) -> StepTrace:
    """p(t) = 1 where availability covers demand, a/d elsewhere."""
    return StepTrace._derived(_merge(Segment(lo, hi, perf_value(av, dv)) for lo, hi, av, dv in _refine(a, d)))


def utilization(a: StepTrace, d: StepTrace) -> StepTrace:
    """u(t) = 1 where availability does not exceed demand, d/a elsewhere."""
    return StepTrace._derived(_merge(Segment(lo, hi, util_value(av, dv)) for lo, hi, av, dv in _refine(a, d)))


def resilience(p_fault: StepTrace, p_norm: StepTrace, tx: Time, ty: Time) -> Number:
    """Mean of p_fault/p_norm over [tx, ty).

    A 0/0 ratio counts as 1. A nominal value of 0 against a positive faulty
    value has no meaningful ratio and raises.
    """
    if ty <= tx:
        raise TraceError("resilience window must have ty > tx")
    pf = p_fault.restrict(tx, ty)
    pn = p_norm.restrict(tx, ty)
    total: Number = 0
    for lo, hi, f, n in _refine(pf, pn):
        if n == 0:
            if f != 0:
                raise TraceError(f"p_norm is 0 while p_fault={f} on [{lo}, {hi})")
            ratio: Number = 1
        else:
            ratio = f / n
        total += (hi - lo) * ratio
    return total / (ty - tx)


# -- recovery periods ---------------------------------------------------------


@dataclass(frozen=True)
class VerdictRecord:
    tick: Time
    component: str
    contract: str
    event: str  # violated | recovered | flag | switch | escalate | fault_in
    kind: str = ""

    def to_line(self) -> str:
        return f"{self.tick},{self.component},{self.contract},{self.event},{self.kind}"


@dataclass(frozen=True)
class FaultRecord:
    tick: Time
    fault_id: str
    target: str
    event: str  # inject | clear
    effect: str = ""

    def to_line(self) -> str:
        return f"{self.tick},{self.fault_id},{self.target},{self.event},{self.effect}"


@dataclass(frozen=True)
class Recovery:
    component: str
    contract: str
    fault_at: Time
    detected_at: Time
    recovered_at: Time

    @property
    def period_from_fault(self) -> Time:
        return self.recovered_at - self.fault_at

    @property
    def period_from_detection(self) -> Time:
        return self.recovered_at - self.detected_at

    def to_json(self) -> dict:
        return {
            "component": self.component,
            "contract": self.contract,
            "fault_at": self.fault_at,
            "detected_at": self.detected_at,
            "recovered_at": self.recovered_at,
            "period_from_fault_ms": fmt_ms(self.period_from_fault),
            "period_from_detection_ms": fmt_ms(self.period_from_detection),
        }


class NoEpisodeError(LookupError):
    pass


def recovery_period(verdicts: Sequence[VerdictRecord], faults: Sequence[FaultRecord]) -> list[Recovery]:
    """Pair each detected violation with its closing recovery and causing fault.

    An episode opens on a ``violated`` record and closes on the next
    ``recovered`` record for the same (component, contract). Its fault time
    is the latest injection at or before detection.
    """
    injections = sorted(r.tick for r in faults if r.event == "inject")
    open_: dict[tuple[str, str], VerdictRecord] = {}
    out: list[Recovery] = []
    for rec in sorted(verdicts, key=lambda r: r.tick):
        key = (rec.component, rec.contract)
        if rec.event == "violated" and key not in open_:
            open_[key] = rec
        elif rec.event == "recovered" and key in open_:
            det = open_.pop(key)
            causes = [t for t in injections if t <= det.tick]
            if not causes:
                continue
            out.append(Recovery(rec.component, rec.contract, causes[-1], det.tick, rec.tick))
    if not out:
        raise NoEpisodeError("no fault episode with detection and recovery found")
    return out


def parse_verdicts(text: str) -> list[VerdictRecord]:
    rows = []
    for row in csv.reader(io.StringIO(text)):
        if not row or row[0].startswith("#") or row[0] == "tick":
            continue
        rows.append(VerdictRecord(int(row[0]), row[1], row[2], row[3], row[4] if len(row) > 4 else ""))
    return rows


def parse_faults(text: str) -> list[FaultRecord]:
    rows = []
    for row in csv.reader(io.StringIO(text)):
        if not row or row[0].startswith("#") or row[0] == "tick":
            continue
        rows.append(FaultRecord(int(row[0]), row[1], row[2], row[3], row[4] if len(row) > 4 else ""))
    return rows


# -- report --------------------------------------------------------------------


@dataclass
class MetricReport:
    perf: StepTrace
    util: StepTrace
    resilience: Number
    recovery: list[Recovery] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "perf": [[s.start, s.end, _num(s.value)] for s in self.perf.segments],
            "util": [[s.start, s.end, _num(s.value)] for s in self.util.segments],
            "resilience": float(self.resilience),
            "recovery": [r.to_json() for r in self.recovery],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def build_report(
    availability: StepTrace,
    demand: StepTrace,
    verdicts: Sequence[VerdictRecord] = (),
    faults: Sequence[FaultRecord] = (),
) -> MetricReport:
    """Compute the full metric set for one run.

    The nominal reference assumes full availability over the demand window.
    """
    perf = performance(availability, demand)
    util = utilization(availability, demand)
    nominal = performance(StepTrace.constant(1, *demand.window), demand)
    r = resilience(perf, nominal, *demand.window)
    try:
        rec = recovery_period(verdicts, faults)
    except NoEpisodeError:
        rec = []
    return MetricReport(perf, util, r, rec)
