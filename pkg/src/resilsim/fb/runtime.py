"""Event-queued execution of component instances on the kernel.

Each instance runs one activation at a time. Plain input events wait in a
FIFO queue. Inputs declared as *sampled* model level signals read by the
component: they occupy a single latch slot (a newer arrival overwrites an
older one) and expire ``hold`` ms after arrival, so a component that stays
busy for longer than the hold window misses the sample.
"""

from __future__ import annotations

import logging
from collections import deque
from typing import Callable

from resilsim.fb.component import Activation, ComponentInstance, ComponentSpec, instantiate
from resilsim.fb.manager import ResilienceManager
from resilsim.kernel import Kernel, SimEvent
from resilsim.metrics import VerdictRecord
from resilsim.timebase import Time, ms

log = logging.getLogger(__name__)

Output = Callable[[dict, Time], None]


class Runtime:
    def __init__(self, kernel: Kernel, middleware=None, h_ms: float = 0.1):
        self.kernel = kernel
        self.middleware = middleware
        self.h_ms = h_ms
        self.instances: dict[str, ComponentInstance] = {}
        self.managers: dict[str, ResilienceManager] = {}
        self.activations: list[Activation] = []
        self.activation_log: list[str] = []
        self.drop_log: list[str] = []
        self.verdicts: list[VerdictRecord] = []
        self._queues: dict[str, deque] = {}
        self._latches: dict[str, dict[str, tuple[dict, Time, Time]]] = {}
        self._timeouts: dict[str, SimEvent | None] = {}
        self._topics: dict[tuple[str, str], list[str]] = {}
        self._outputs: dict[tuple[str, str], list[Output]] = {}

    # -- wiring ---------------------------------------------------------------

    def add(self, spec: ComponentSpec) -> ComponentInstance:
        if spec.id in self.instances:
            raise ValueError(f"duplicate component id {spec.id}")
        inst = instantiate(spec, self.kernel.execution_duration, self.h_ms)
        self.instances[spec.id] = inst
        publish = None
        if self.middleware is not None:
            topic = f"fault/{spec.id}"
            self.middleware.declare_fault_channel(topic)
            publish = lambda msg, t, topic=topic, cid=spec.id: self.middleware.publish(topic, msg, cid)
        self.managers[spec.id] = ResilienceManager(inst, publish, self.verdicts)
        self._queues[spec.id] = deque()
        self._latches[spec.id] = {}
        self._timeouts[spec.id] = None
        self._reschedule(spec.id)
        return inst

    def publish_on(self, component: str, emission: str, topic: str) -> None:
        self._topics.setdefault((component, emission), []).append(topic)

    def connect(self, component: str, emission: str, output: Output) -> None:
        """Route an emission straight to a physical actuator."""
        self._outputs.setdefault((component, emission), []).append(output)

    def subscribe(self, component: str, topic: str, event: str) -> str:
        return self.middleware.subscribe(
            topic, component, event, lambda ev, payload, t: self.deliver(component, ev, payload)
        )

    def subscribe_faults(self, component: str, source: str) -> str:
        def on_fault(_ev, payload, t):
            mgr = self.managers[component]
            mgr.receive(payload, t)
            self._step_manager(component)

        return self.middleware.subscribe(f"fault/{source}", component, "fault", on_fault)

    def add_timer(self, component: str, event: str, period_ms: float, data: dict | None = None, start_ms: float = 0) -> None:
        period = ms(period_ms)

        def fire(t: Time):
            self.deliver(component, event, dict(data or {}))
            self.kernel.schedule(t + period, component, "timer", lambda: fire(t + period), event)

        self.kernel.schedule(ms(start_ms), component, "timer", lambda: fire(ms(start_ms)), event)

    # -- execution ------------------------------------------------------------

    def deliver(self, component: str, event: str, data: dict) -> None:
        inst = self.instances[component]
        now = self.kernel.now
        hold = inst.spec.sampled.get(event)
        if hold is not None:
            self._latches[component][event] = (dict(data), now, now + ms(hold, strict=False))
        else:
            self._queues[component].append((event, dict(data), now))
        if not inst.busy:
            self._try_start(component)

    def _next_input(self, component: str) -> tuple[str, dict, Time] | None:
        now = self.kernel.now
        latches = self._latches[component]
        for ev, (data, arrival, expiry) in list(latches.items()):
            if expiry <= now:
                self.drop_log.append(f"{expiry},{component},{ev},{arrival},expired")
                del latches[ev]
        best: tuple[Time, int, str] | None = None
        queue = self._queues[component]
        if queue:
            best = (queue[0][2], 0, queue[0][0])
        for ev, (_, arrival, _) in latches.items():
            if best is None or (arrival, 1) < best[:2]:
                best = (arrival, 1, ev)
        if best is None:
            return None
        if best[1] == 0:
            return queue.popleft()
        data, arrival, _ = latches.pop(best[2])
        return best[2], data, arrival

    def _try_start(self, component: str) -> None:
        inst = self.instances[component]
        nxt = self._next_input(component)
        if nxt is None:
            return
        event, data, arrival = nxt
        now = self.kernel.now
        act = inst.activate(event, data, now, stamp=arrival)
        self.activations.append(act)
        self.activation_log.append(act.log_line())
        inst.busy = True
        inst.busy_until = act.completion
        self.managers[component].on_start(act, data)
        self._step_manager(component)
        if act.completion is not None:
            self.kernel.schedule(act.completion, component, "complete", lambda: self._complete(act), event)

    def _complete(self, act: Activation) -> None:
        inst = self.instances[act.component]
        inst.busy = False
        inst.busy_until = None
        t = self.kernel.now
        for name, payload in act.emissions:
            for topic in self._topics.get((act.component, name), ()):
                self.middleware.publish(topic, payload, act.component, behaviour=act.behaviour)
            for out in self._outputs.get((act.component, name), ()):
                out(payload, t)
        self.managers[act.component].on_done(act)
        self._step_manager(act.component)
        self._try_start(act.component)

    def _step_manager(self, component: str) -> None:
        self.managers[component].step(self.kernel.now)
        self._reschedule(component)

    def _reschedule(self, component: str) -> None:
        old = self._timeouts.get(component)
        due = self.managers[component].next_timeout()
        if old is not None and not old.cancelled and old.time == due:
            return
        if old is not None:
            self.kernel.cancel(old)
        self._timeouts[component] = None
        if due is not None and due >= self.kernel.now:
            self._timeouts[component] = self.kernel.schedule(
                due, component, "observer_timeout", lambda: self._on_timeout(component)
            )

    def _on_timeout(self, component: str) -> None:
        self._timeouts[component] = None
        self._step_manager(component)

    def verdict_lines(self) -> list[str]:
        return [r.to_line() for r in sorted(self.verdicts, key=lambda r: r.tick)]
