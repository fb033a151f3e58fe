"""Per-component resilience manager.

The manager owns one observer per contract. A violation opens a fault
episode for that contract: the active behaviour is blamed, the next
unblamed behaviour (declaration order) is latched, and a fault message is
published. While the episode is open a probe observer, armed at a clean
boundary, watches the contract; the episode closes once the probe has seen
the contract hold (one full period for timing contracts, one good sample
otherwise). The probe then replaces the main observer.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from resilsim.fb.component import Activation, Binding, ComponentInstance
from resilsim.metrics import VerdictRecord
from resilsim.observers import (
    Observer,
    ObsEvent,
    PointObserver,
    TimedObserver,
    fresh_copy,
)
from resilsim.timebase import Time

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Decision:
    kind: str  # switch | escalate | recovered | fault_in
    contract: str
    detail: str = ""


@dataclass
class _Episode:
    detected_at: Time
    probe: Observer | None = None
    close_at: Time | None = None


@dataclass
class ResilienceManager:
    instance: ComponentInstance
    publish_fault: Callable[[dict, Time], None] | None = None
    verdicts: list[VerdictRecord] = field(default_factory=list)

    def __post_init__(self):
        self.episodes: dict[str, _Episode] = {}
        self.blamed: set[str] = set()
        self.inbox: deque[tuple[dict, Time]] = deque()
        self._bindings: dict[str, list[Binding]] = {}
        for b in self.instance.spec.bindings:
            self._bindings.setdefault(b.event, []).append(b)
            if b.arm_event and b.arm_event != b.event:
                self._bindings.setdefault(b.arm_event, []).append(b)

    @property
    def id(self) -> str:
        return self.instance.id

    def _record(self, t: Time, contract: str, event: str, kind: str = "") -> None:
        self.verdicts.append(VerdictRecord(t, self.id, contract, event, kind))
        log.debug("%s %s %s %s %s", t, self.id, contract, event, kind)

    # -- observation ----------------------------------------------------------

    def _feed(self, cid: str, event: ObsEvent | dict, t: Time) -> None:
        main = self.instance.observers[cid]
        before = len(main.flags) if isinstance(main, PointObserver) else 0
        main.step_event(event, t)
        if isinstance(main, PointObserver):
            for tick, _ in main.flags[before:]:
                self._record(tick, cid, "flag", "out_of_range")
        ep = self.episodes.get(cid)
        if ep is not None and ep.probe is not None:
            ep.probe.step_event(event, t)
            if not isinstance(ep.probe, TimedObserver) and not ep.probe.verdict.violated:
                ep.close_at = t

    def on_start(self, act: Activation, data: dict) -> None:
        for b in self._bindings.get(act.event, ()):
            cid, t = b.contract, act.start
            obs = self.instance.observers[cid]
            ep = self.episodes.get(cid)
            if b.arm_event == act.event:
                if ep is None:
                    obs.reset(t)
                elif ep.probe is None:
                    ep.probe = fresh_copy(obs, t)
            if b.event != act.event:
                continue
            if isinstance(obs, TimedObserver):
                if ep is not None and ep.probe is None:
                    ep.probe = fresh_copy(obs, t)
                    ep.close_at = t + obs.period
                self._feed(cid, ObsEvent("sample"), t)
            elif b.source == "input":
                port = self.instance.contracts[cid].guarantee.port
                if port in data:
                    self._feed(cid, {port: data[port]}, t)

    def on_done(self, act: Activation) -> None:
        if act.completion is None:
            return
        t = act.completion
        for b in self._bindings.get(act.event, ()):
            if b.event != act.event:
                continue
            obs = self.instance.observers[b.contract]
            if isinstance(obs, TimedObserver):
                self._feed(b.contract, ObsEvent("done"), t)
            elif b.source == "output":
                port = self.instance.contracts[b.contract].guarantee.port
                for name, payload in act.emissions:
                    if (b.emission is None or name == b.emission) and port in payload:
                        self._feed(b.contract, {port: payload[port]}, t)

    def receive(self, message: dict, t: Time) -> None:
        self.inbox.append((message, t))

    # -- decisions ------------------------------------------------------------

    def next_timeout(self) -> Time | None:
        """Earliest tick at which :meth:`step` could change a decision by itself."""
        ticks = []
        for cid, obs in self.instance.observers.items():
            ep = self.episodes.get(cid)
            if ep is None:
                ticks.append(obs.next_timeout())
            else:
                if ep.probe is not None:
                    ticks.append(ep.probe.next_timeout())
                ticks.append(ep.close_at)
        ticks = [t for t in ticks if t is not None]
        return min(ticks) if ticks else None

    def _react(self, cid: str, kind: str, t: Time) -> list[Decision]:
        inst = self.instance
        culprit = inst.behaviour
        self.blamed.add(culprit)
        remaining = [b for b in inst.spec.behaviour_ids if b not in self.blamed]
        message = {"component": self.id, "contract": cid, "kind": kind, "behaviour": culprit}
        if remaining:
            target = remaining[0]
            inst.switch_behavior(target, t)
            self._record(t, cid, "switch", f"{culprit}->{target}")
            decision = Decision("switch", cid, target)
            message["action"] = "switch"
        else:
            self._record(t, cid, "escalate", kind)
            decision = Decision("escalate", cid, culprit)
            message["action"] = "escalate"
        if self.publish_fault is not None:
            self.publish_fault(message, t)
        return [decision]

    def step(self, t: Time) -> list[Decision]:
        decisions: list[Decision] = []
        for cid, obs in self.instance.observers.items():
            ep = self.episodes.get(cid)
            obs.advance_time(t)
            if ep is None:
                if obs.verdict.violated:
                    at = obs.verdict.at
                    ep = _Episode(at)
                    self.episodes[cid] = ep
                    self._record(at, cid, "violated", obs.verdict.kind)
                    decisions += self._react(cid, obs.verdict.kind, at)
                    if isinstance(obs, PointObserver):
                        ep.probe = fresh_copy(obs, t)
                continue
            if ep.probe is not None:
                ep.probe.advance_time(t)
                if ep.probe.verdict.violated:
                    at = ep.probe.verdict.at
                    decisions += self._react(cid, ep.probe.verdict.kind, at)
                    ep.probe = fresh_copy(obs, t) if isinstance(obs, PointObserver) else None
                    ep.close_at = None
                    continue
            if ep.probe is not None and ep.close_at is not None and t >= ep.close_at:
                self._record(t, cid, "recovered", "")
                self.instance.observers[cid] = ep.probe
                del self.episodes[cid]
                if not self.episodes:
                    self.blamed.clear()
                decisions.append(Decision("recovered", cid))
        while self.inbox:
            message, at = self.inbox.popleft()
            self._record(at, message.get("contract", ""), "fault_in", message.get("component", ""))
            decisions.append(Decision("fault_in", message.get("contract", ""), message.get("component", "")))
        return decisions


def rm_step(manager: ResilienceManager, t: Time) -> list[Decision]:
    return manager.step(t)

