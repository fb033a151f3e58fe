"""Deterministic discrete-event kernel with platform nodes and fault injection."""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable

from resilsim.metrics import FaultRecord, StepTrace
from resilsim.timebase import Time, ms


class SchedulingError(ValueError):
    """Raised when an event is scheduled in the past."""


class UnknownTarget(KeyError):
    pass


@dataclass(order=True)
class SimEvent:
    time: Time
    seq: int
    target: str = field(compare=False)
    kind: str = field(compare=False)
    detail: str = field(compare=False, default="")
    action: Callable[[], None] | None = field(compare=False, default=None, repr=False)
    cancelled: bool = field(compare=False, default=False)


class NodeStatus(Enum):
    AVAILABLE = "available"
    DEGRADED = "degraded"
    DOWN = "down"


@dataclass
class PlatformNode:
    id: str
    status: NodeStatus = NodeStatus.AVAILABLE
    slowdown: Fraction = Fraction(1)


@dataclass
class PlatformMapping:
    """Component placement plus execution and communication cost tables.

    Costs are in ticks. ``"*"`` as a behaviour key is a wildcard.
    """

    assignments: dict[str, str] = field(default_factory=dict)
    exec_cost: dict[tuple[str, str], Time] = field(default_factory=dict)
    comm_cost: dict[tuple[str, str], Time] = field(default_factory=dict)

    def validate(self, nodes) -> None:
        for comp, node in self.assignments.items():
            if node not in nodes:
                raise UnknownTarget(f"component {comp} mapped to unknown node {node}")
        for table in (self.exec_cost, self.comm_cost):
            for key, cost in table.items():
                if cost < 0:
                    raise ValueError(f"negative cost for {key}")

    def exec_for(self, component: str, behaviour: str) -> Time:
        for key in ((component, behaviour), (component, "*")):
            if key in self.exec_cost:
                return self.exec_cost[key]
        raise KeyError(f"no execution cost for ({component}, {behaviour})")

    def comm_for(self, edge: str, behaviour: str | None) -> Time | None:
        for key in ((edge, behaviour), (edge, "*")):
            if key in self.comm_cost:
                return self.comm_cost[key]
        return None


FAULT_KINDS = ("permanent", "intermittent", "transient")
FAULT_EFFECTS = ("down", "slowdown", "stuck_value", "leak")


@dataclass(frozen=True)
class FaultSpec:
    """One fault on a node, sensor, or link.

    ``intermittent`` alternates an ``on_ms`` up-phase with an ``off_ms``
    down-phase starting at ``t0``; ``transient`` is active for
    ``duration_ms`` from ``t0``.
    """

    target: str
    t0: Time
    kind: str = "permanent"
    effect: str = "down"
    factor: Fraction | None = None
    value: float | None = None
    on_ms: float | None = None
    off_ms: float | None = None
    duration_ms: float | None = None
    id: str | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if self.effect not in FAULT_EFFECTS:
            raise ValueError(f"unknown fault effect {self.effect!r}")
        if self.t0 < 0:
            raise ValueError("t0 must be >= 0")
        if self.kind == "intermittent" and not (self.on_ms and self.off_ms and self.on_ms > 0 and self.off_ms > 0):
            raise ValueError("intermittent faults need on_ms > 0 and off_ms > 0")
        if self.kind == "transient" and not (self.duration_ms and self.duration_ms > 0):
            raise ValueError("transient faults need duration_ms > 0")
        if self.effect in ("slowdown", "leak") and not (self.factor is not None and self.factor > 1):
            raise ValueError(f"{self.effect} needs factor > 1")
        if self.effect == "stuck_value" and self.value is None:
            raise ValueError("stuck_value needs a value")

    def describe(self) -> str:
        if self.effect in ("slowdown", "leak"):
            return f"{self.effect}({self.factor})"
        if self.effect == "stuck_value":
            return f"stuck_value({self.value})"
        return self.effect

    @classmethod
    def from_dict(cls, d: dict, default_id: str | None = None) -> "FaultSpec":
        factor = d.get("factor")
        return cls(
            target=d["target"],
            t0=ms(d.get("t0_ms", 0)),
            kind=d.get("kind", "permanent"),
            effect=d.get("effect", "down"),
            factor=Fraction(str(factor)) if factor is not None else None,
            value=d.get("value"),
            on_ms=d.get("on_ms"),
            off_ms=d.get("off_ms"),
            duration_ms=d.get("duration_ms"),
            id=d.get("id", default_id),
        )


@dataclass
class _Target:
    id: str
    kind: str  # node | sensor | link
    active: dict[str, FaultSpec] = field(default_factory=dict)
    changes: list[tuple[Time, Fraction]] = field(default_factory=list)


class Kernel:
    """Single-threaded event scheduler.

    Events dequeue in (time, seq) order; ``seq`` is the insertion counter so
    ties resolve first-scheduled-first. All randomness comes from ``rng``.
    """

    def __init__(self, seed: int | None = 0, degraded_availability: str = "inverse"):
        if degraded_availability not in ("inverse", "up"):
            raise ValueError("degraded_availability must be 'inverse' or 'up'")
        self.now: Time = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self.degraded_availability = degraded_availability
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self.dispatch_log: list[str] = []
        self.fault_log: list[FaultRecord] = []
        self.nodes: dict[str, PlatformNode] = {}
        self.mapping = PlatformMapping()
        self._targets: dict[str, _Target] = {}
        self._fault_ids = itertools.count(1)

    # -- scheduling -----------------------------------------------------------

    def schedule(
        self,
        time: Time,
        target: str,
        kind: str,
        action: Callable[[], None] | None = None,
        detail: str = "",
    ) -> SimEvent:
        if time < self.now:
            raise SchedulingError(f"event {kind}@{target} at tick {time} is before now={self.now}")
        ev = SimEvent(int(time), next(self._seq), target, kind, detail, action)
        heapq.heappush(self._queue, ev)
        return ev

    def cancel(self, ev: SimEvent) -> None:
        ev.cancelled = True

    def pending(self) -> int:
        return sum(1 for e in self._queue if not e.cancelled)

    def run_until(self, t_end: Time) -> int:
        if t_end < self.now:
            raise SchedulingError(f"run_until({t_end}) is before now={self.now}")
        count = 0
        while self._queue and self._queue[0].time <= t_end:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            detail = ev.detail.replace(",", ";").replace("\n", " ")
            self.dispatch_log.append(f"{ev.time},{ev.target},{ev.kind},{detail}")
            count += 1
            if ev.action is not None:
                ev.action()
        self.now = t_end
        return count

    # -- platform -------------------------------------------------------------

    def add_node(self, node_id: str) -> PlatformNode:
        node = PlatformNode(node_id)
        self.nodes[node_id] = node
        self._register(node_id, "node")
        return node

    def add_target(self, target_id: str, kind: str) -> None:
        """Register a sensor or link so faults can address it."""
        self._register(target_id, kind)

    def _register(self, target_id: str, kind: str) -> None:
        if target_id in self._targets:
            raise ValueError(f"duplicate target id {target_id}")
        self._targets[target_id] = _Target(target_id, kind, changes=[(self.now, Fraction(1))])

    def set_mapping(self, mapping: PlatformMapping) -> None:
        mapping.validate(self.nodes)
        self.mapping = mapping

    def node_of(self, component: str) -> PlatformNode:
        try:
            return self.nodes[self.mapping.assignments[component]]
        except KeyError:
            raise KeyError(f"component {component} is not mapped to a node") from None

    def execution_duration(self, component: str, behaviour: str) -> Time | None:
        """Execution cost scaled by the node's slowdown; ``None`` if the node is down."""
        node = self.node_of(component)
        cost = self.mapping.exec_for(component, behaviour)
        if node.status is NodeStatus.DOWN:
            return None
        return int(round(cost * node.slowdown))

    # -- faults ---------------------------------------------------------------

    def inject_fault(self, spec: FaultSpec) -> str:
        """Schedule the fault's activation and clearing; returns the target id.

        The target's availability profile is then available from
        :meth:`availability`.
        """
        if spec.target not in self._targets:
            raise UnknownTarget(f"unknown fault target {spec.target!r}")
        fid = spec.id or f"F{next(self._fault_ids)}"
        if spec.kind == "permanent":
            self._at(spec.t0, fid, spec, True)
        elif spec.kind == "transient":
            self._at(spec.t0, fid, spec, True)
            self._at(spec.t0 + ms(spec.duration_ms, strict=False), fid, spec, False)
        else:
            self._intermittent(spec.t0, fid, spec, up=True)
        return spec.target

    def _at(self, t: Time, fid: str, spec: FaultSpec, on: bool) -> None:
        kind = "fault_inject" if on else "fault_clear"
        self.schedule(t, spec.target, kind, lambda: self._apply(fid, spec, on), f"{fid} {spec.describe()}")

    def _intermittent(self, t: Time, fid: str, spec: FaultSpec, up: bool) -> None:
        def toggle():
            self._apply(fid, spec, not up)
            span = spec.on_ms if up else spec.off_ms
            self._intermittent(t + ms(span, strict=False), fid, spec, not up)

        kind = "fault_clear" if up else "fault_inject"
        self.schedule(t, spec.target, kind, toggle, f"{fid} {spec.describe()}")

    def _apply(self, fid: str, spec: FaultSpec, on: bool) -> None:
        tgt = self._targets[spec.target]
        if on:
            tgt.active[fid] = spec
        elif fid in tgt.active:
            del tgt.active[fid]
        else:
            # intermittent faults start in their up-phase; nothing to clear
            self._record_availability(tgt)
            return
        self.fault_log.append(FaultRecord(self.now, fid, spec.target, "inject" if on else "clear", spec.describe()))
        if tgt.kind == "node":
            self._refresh_node(self.nodes[tgt.id], tgt)
        self._record_availability(tgt)

    def _refresh_node(self, node: PlatformNode, tgt: _Target) -> None:
        effects = list(tgt.active.values())
        if any(f.effect == "down" for f in effects):
            node.status, node.slowdown = NodeStatus.DOWN, Fraction(1)
            return
        factor = Fraction(1)
        for f in effects:
            if f.effect == "slowdown":
                factor *= f.factor
        node.slowdown = factor
        node.status = NodeStatus.DEGRADED if factor > 1 else NodeStatus.AVAILABLE

    def _availability_value(self, tgt: _Target) -> Fraction:
        effects = list(tgt.active.values())
        if not effects:
            return Fraction(1)
        if any(f.effect in ("down", "stuck_value") for f in effects):
            return Fraction(0)
        factor = Fraction(1)
        for f in effects:
            factor *= f.factor
        return Fraction(1) if self.degraded_availability == "up" else 1 / factor

    def _record_availability(self, tgt: _Target) -> None:
        value = self._availability_value(tgt)
        if tgt.changes and tgt.changes[-1][0] == self.now:
            tgt.changes[-1] = (self.now, value)
        else:
            tgt.changes.append((self.now, value))

    def active_effects(self, target: str) -> list[FaultSpec]:
        return list(self._targets[target].active.values())

    def availability(self, target: str, end: Time | None = None, start: Time = 0) -> StepTrace:
        """Availability profile a(t) of ``target`` over ``[start, end)``."""
        if target not in self._targets:
            raise UnknownTarget(f"unknown target {target!r}")
        end = self.now if end is None else end
        changes = [(max(t, start), v) for t, v in self._targets[target].changes]
        # keep only the last value per clamped tick
        dedup: dict[Time, Fraction] = {}
        for t, v in changes:
            dedup[t] = v
        return StepTrace.from_changes(sorted(dedup.items()), end)
