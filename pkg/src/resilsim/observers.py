"""Runtime monitors synthesized from contracts.

Three observer families share one interface (``step_event``,
``advance_time``, ``reset``, ``verdict``):

* :class:`TimedObserver` is a discrete-time timed automaton. Clocks are
  integer tick counters and guards compare them against integer constants,
  so every run is a plain finite-automaton run over ticks. When several
  edges are enabled, the one with the lowest ``priority`` number fires.
* :class:`PointObserver` is a two-location FSM for Bound and SetMembership
  guarantees.
* :class:`HybridObserver` integrates an expected trajectory with a fixed
  step and checks a tolerance band against the observed value.

Verdicts are sticky: once violated, an observer stays violated until
:meth:`reset`.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from resilsim.contracts import (
    Bound,
    Contract,
    Envelope,
    SetMembership,
    Timing,
    broken_assumptions,
    check_point,
)
from resilsim.timebase import TICKS_PER_MS, Time, ms


class TimeRegression(ValueError):
    pass


OK = "ok"
VIOLATED = "violated"

MISSED_SAMPLE = "missed_sample"
MISSED_DEADLINE = "missed_deadline"
OUT_OF_RANGE = "out_of_range"
ENVELOPE_EXCEEDED = "envelope_exceeded"


@dataclass(frozen=True)
class Verdict:
    status: str = OK
    kind: str | None = None
    at: Time | None = None

    @property
    def violated(self) -> bool:
        return self.status == VIOLATED


@dataclass(frozen=True)
class ObsEvent:
    kind: str
    values: Mapping[str, float] = field(default_factory=dict)


# -- timed automata -------------------------------------------------------------


@dataclass(frozen=True)
class ClockGuard:
    clock: str
    op: str  # one of < <= > >= ==
    bound: int

    def holds(self, v: int) -> bool:
        return {
            "<": v < self.bound,
            "<=": v <= self.bound,
            ">": v > self.bound,
            ">=": v >= self.bound,
            "==": v == self.bound,
        }[self.op]

    def window(self, v: int) -> tuple[int, float]:
        """Delays d >= 0 for which the guard holds at clock value v + d, as [lo, hi]."""
        if self.op in (">", ">="):
            need = self.bound + (1 if self.op == ">" else 0)
            return max(0, need - v), math.inf
        if self.op in ("<", "<="):
            last = self.bound - (1 if self.op == "<" else 0)
            return 0, last - v
        return self.bound - v, self.bound - v


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    event: str | None = None  # None marks an internal (time-triggered) edge
    guards: tuple[ClockGuard, ...] = ()
    resets: tuple[str, ...] = ()
    priority: int = 0
    violation: str | None = None


class TimedAutomaton:
    def __init__(
        self,
        locations: Sequence[str],
        clocks: Sequence[str],
        edges: Sequence[Edge],
        initial: str,
        obs_id: str = "obs",
        start: Time = 0,
    ):
        self.id = obs_id
        self.locations = tuple(locations)
        self.clock_names = tuple(clocks)
        # stable sort keeps declaration order among equal priorities
        self.edges = tuple(sorted(edges, key=lambda e: e.priority))
        self.initial = initial
        self.now: Time = start
        self.location = initial
        self.clocks = {c: 0 for c in self.clock_names}
        self.verdict = Verdict()

    def _check_time(self, t: Time) -> None:
        if t < self.now:
            raise TimeRegression(f"{self.id}: time {t} is before {self.now}")

    def _enabled_window(self, edge: Edge) -> tuple[int, float]:
        lo, hi = 0, math.inf
        for g in edge.guards:
            glo, ghi = g.window(self.clocks[g.clock])
            lo, hi = max(lo, glo), min(hi, ghi)
        return lo, hi

    def next_timeout(self) -> Time | None:
        """Earliest tick at which an internal edge becomes enabled."""
        best = None
        for e in self.edges:
            if e.src != self.location or e.event is not None:
                continue
            lo, hi = self._enabled_window(e)
            if lo <= hi and (best is None or lo < best):
                best = lo
        return None if best is None else self.now + best

    def _fire(self, edge: Edge) -> None:
        for c in edge.resets:
            self.clocks[c] = 0
        self.location = edge.dst
        if edge.violation and not self.verdict.violated:
            self.verdict = Verdict(VIOLATED, edge.violation, self.now)

    def _elapse(self, d: int) -> None:
        for c in self.clocks:
            self.clocks[c] += d
        self.now += d

    def advance_time(self, t: Time) -> Verdict:
        self._check_time(t)
        while True:
            firing: tuple[int, Edge] | None = None
            for e in self.edges:
                if e.src != self.location or e.event is not None:
                    continue
                lo, hi = self._enabled_window(e)
                if lo <= hi and self.now + lo <= t and (firing is None or lo < firing[0]):
                    firing = (lo, e)
            if firing is None:
                break
            self._elapse(firing[0])
            self._fire(firing[1])
        self._elapse(t - self.now)
        return self.verdict

    def step_event(self, event: ObsEvent | str, t: Time) -> Verdict:
        kind = event if isinstance(event, str) else event.kind
        self.advance_time(t)
        for e in self.edges:
            if e.src == self.location and e.event == kind and all(g.holds(self.clocks[g.clock]) for g in e.guards):
                self._fire(e)
                break
        return self.verdict

    def reset(self, t: Time | None = None) -> Verdict:
        if t is not None:
            self._check_time(t)
            self.now = t
        self.location = self.initial
        self.clocks = {c: 0 for c in self.clock_names}
        self.verdict = Verdict()
        return self.verdict

    def dump(self) -> str:
        clocks = ",".join(f"{c}={v}" for c, v in self.clocks.items())
        return f"{self.now},{self.id},{self.location},{clocks},{self.verdict.status}"


class TimedObserver(TimedAutomaton):
    """Two-clock monitor for a sampling period and a processing deadline.

    Clock ``x`` measures the gap since the previous sample (inclusive bound:
    a gap equal to the period is fine). Clock ``y`` measures processing time,
    which must stay strictly below the deadline. Samples arriving while a
    processing obligation is open refresh ``x`` only.
    """

    def __init__(self, period: Time, deadline: Time, obs_id: str = "timing", start: Time = 0):
        if period <= 0 or deadline <= 0:
            raise ValueError("period and deadline must be positive")
        self.period = period
        self.deadline = deadline
        x_late = ClockGuard("x", ">", period)
        x_ok = ClockGuard("x", "<=", period)
        edges = [
            Edge("busy", "violated", None, (ClockGuard("y", ">=", deadline),), priority=0, violation=MISSED_DEADLINE),
            Edge("busy", "violated", None, (x_late,), priority=1, violation=MISSED_SAMPLE),
            Edge("idle", "violated", None, (x_late,), priority=1, violation=MISSED_SAMPLE),
            Edge("idle", "busy", "sample", (x_ok,), resets=("x", "y")),
            Edge("idle", "idle", "done"),
            Edge("busy", "idle", "done", (ClockGuard("y", "<", deadline),)),
            Edge("busy", "busy", "sample", (x_ok,), resets=("x",)),
        ]
        super().__init__(("idle", "busy", "violated"), ("x", "y"), edges, "idle", obs_id, start)


class PointObserver:
    """Stateless guarantee check on each sample; two locations, ok and violated.

    Every out-of-range sample is appended to ``flags`` even after the verdict
    has latched, so callers can count individual bad readings.
    """

    def __init__(self, contract: Contract, obs_id: str | None = None, start: Time = 0):
        if not isinstance(contract.guarantee, (Bound, SetMembership)):
            raise ValueError("PointObserver needs a Bound or SetMembership contract")
        self.contract = contract
        self.id = obs_id or contract.id
        self.now: Time = start
        self.location = "ok"
        self.verdict = Verdict()
        self.flags: list[tuple[Time, float]] = []
        self.assumption_flags: list[Time] = []

    def next_timeout(self) -> Time | None:
        return None

    def advance_time(self, t: Time) -> Verdict:
        if t < self.now:
            raise TimeRegression(f"{self.id}: time {t} is before {self.now}")
        self.now = t
        return self.verdict

    def step_event(self, event: ObsEvent | Mapping[str, float], t: Time) -> Verdict:
        self.advance_time(t)
        values = event.values if isinstance(event, ObsEvent) else event
        if broken_assumptions(self.contract, {**values, "t": t}):
            self.assumption_flags.append(t)
            return self.verdict
        if not check_point(self.contract, values):
            self.flags.append((t, values[self.contract.guarantee.port]))
            self.location = "violated"
            if not self.verdict.violated:
                self.verdict = Verdict(VIOLATED, OUT_OF_RANGE, t)
        return self.verdict

    def reset(self, t: Time | None = None) -> Verdict:
        if t is not None:
            self.advance_time(t)
        self.location = "ok"
        self.verdict = Verdict()
        return self.verdict

    def dump(self) -> str:
        return f"{self.now},{self.id},{self.location},,{self.verdict.status}"


# -- hybrid observers -----------------------------------------------------------


def rk4_step(f: Callable[[float, float], float], t: float, y: float, h: float) -> float:
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def euler_step(f: Callable[[float, float], float], t: float, y: float, h: float) -> float:
    return y + h * f(t, y)


INTEGRATORS = {"rk4": rk4_step, "euler": euler_step}


@dataclass(frozen=True)
class Jump:
    """Guarded jump out of the tracking location; lower priority fires first."""

    priority: int
    condition: Callable[[float, float], bool]  # (expected, observed) -> bool
    violation: str


class HybridObserver:
    """Fixed-step tracker of an expected trajectory with tolerance jumps.

    The expected value follows ``flow`` (dy/dt with t in seconds) from
    ``initial`` at the arming tick. After each integration step of ``h``
    ticks the jump conditions are evaluated against the latest observation.
    """

    def __init__(
        self,
        flow: Callable[[float, float], float],
        initial: float,
        jumps: Sequence[Jump],
        h: Time,
        port: str,
        obs_id: str = "hybrid",
        start: Time = 0,
        integrator: str = "rk4",
        ticks_per_ms: int = TICKS_PER_MS,
    ):
        if h <= 0:
            raise ValueError("step size must be positive")
        self.flow = flow
        self.initial = initial
        self.jumps = tuple(sorted(jumps, key=lambda j: j.priority))
        self.h = h
        self.port = port
        self.id = obs_id
        self.step_fn = INTEGRATORS[integrator]
        self._h_s = h / ticks_per_ms / 1000.0
        self._tick_s = 1 / ticks_per_ms / 1000.0
        self.now: Time = start
        self._arm(start)

    def _arm(self, t: Time) -> None:
        self.armed_at = t
        self.grid: Time = t
        self.expected = self.initial
        self.observed: float | None = None
        self.location = "track"
        self.verdict = Verdict()

    def next_timeout(self) -> Time | None:
        return None

    def _jump(self, t: Time) -> None:
        if self.observed is None or self.verdict.violated:
            return
        for j in self.jumps:
            if j.condition(self.expected, self.observed):
                self.location = "violated"
                self.verdict = Verdict(VIOLATED, j.violation, t)
                return

    def advance_time(self, t: Time) -> Verdict:
        if t < self.now:
            raise TimeRegression(f"{self.id}: time {t} is before {self.now}")
        while self.grid + self.h <= t and not self.verdict.violated:
            elapsed = (self.grid - self.armed_at) * self._tick_s
            self.expected = self.step_fn(self.flow, elapsed, self.expected, self._h_s)
            self.grid += self.h
            self._jump(self.grid)
        self.now = t
        return self.verdict

    def step_event(self, event: ObsEvent | Mapping[str, float], t: Time) -> Verdict:
        self.advance_time(t)
        values = event.values if isinstance(event, ObsEvent) else event
        if self.port in values:
            self.observed = float(values[self.port])
            self._jump(t)
        return self.verdict

    def reset(self, t: Time | None = None) -> Verdict:
        if t is not None:
            if t < self.now:
                raise TimeRegression(f"{self.id}: time {t} is before {self.now}")
            self.now = t
        self._arm(self.now)
        return self.verdict

    def dump(self) -> str:
        return f"{self.now},{self.id},{self.location},p_exp={self.expected!r},{self.verdict.status}"


def envelope_observer(
    g: Envelope,
    h: Time,
    obs_id: str = "envelope",
    start: Time = 0,
    integrator: str = "rk4",
    ticks_per_ms: int = TICKS_PER_MS,
) -> HybridObserver:
    k1, tol = g.k1, g.rel_tol
    jumps = [
        Jump(0, lambda exp, obs: obs < (1 - tol) * exp, ENVELOPE_EXCEEDED),
        Jump(1, lambda exp, obs: obs > (1 + tol) * exp, ENVELOPE_EXCEEDED),
    ]
    return HybridObserver(
        lambda _t, p: k1 * p, g.k2, jumps, h, g.port, obs_id, start, integrator, ticks_per_ms
    )


Observer = TimedObserver | PointObserver | HybridObserver


def synthesize_observer(
    c: Contract,
    *,
    start: Time = 0,
    ticks_per_ms: int = TICKS_PER_MS,
    h_ms: float = 0.1,
    integrator: str = "rk4",
) -> Observer:
    """Build the executable monitor for a validated contract."""
    g = c.guarantee
    if isinstance(g, Timing):
        return TimedObserver(
            ms(g.period_ms, ticks_per_ms=ticks_per_ms),
            ms(g.deadline_ms, ticks_per_ms=ticks_per_ms),
            c.id,
            start,
        )
    if isinstance(g, (Bound, SetMembership)):
        return PointObserver(c, c.id, start)
    return envelope_observer(g, ms(h_ms, ticks_per_ms=ticks_per_ms), c.id, start, integrator, ticks_per_ms)


def fresh_copy(obs: Observer, t: Time) -> Observer:
    """Independent observer with the same structure, armed at ``t``."""
    twin = copy.copy(obs)
    if isinstance(obs, TimedAutomaton):
        twin.clocks = dict(obs.clocks)
    if isinstance(obs, PointObserver):
        twin.flags = []
        twin.assumption_flags = []
    twin.now = min(obs.now, t)
    twin.reset(t)
    return twin
