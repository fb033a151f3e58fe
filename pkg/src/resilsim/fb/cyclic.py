"""Cyclic (PLC-style) scheduling: one activation per instance per scan."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from resilsim.fb.component import Activation, ComponentInstance
from resilsim.kernel import Kernel
from resilsim.timebase import Time, ms, to_ms

Wiring = Mapping[tuple[str, str], Sequence[tuple[str, str]]]  # (component, emission) -> [(component, event)]


def _activate_once(inst: ComponentInstance, inputs: Sequence[tuple[str, dict]], t: Time) -> Activation:
    if inst.pending is not None:
        inst.behaviour, inst.pending = inst.pending, None
    ecc = inst.eccs[inst.behaviour]
    emissions: list[tuple[str, dict]] = []
    state = inst.states[inst.behaviour]
    for event, data in inputs or [(None, {})]:
        step = ecc.react(state, event, inst.vars, {**data, "_t_ms": to_ms(t)})
        state, inst.vars = step.state, step.vars
        emissions.extend(step.emissions)
    inst.states[inst.behaviour] = state
    label = ";".join(ev for ev, _ in inputs) or "-"
    return Activation(inst.id, inst.behaviour, label, t, state, tuple(emissions), t)


def cyclic_scan(
    instances: Sequence[ComponentInstance],
    t: Time,
    inputs: Mapping[str, Sequence[tuple[str, dict]]] | None = None,
) -> list[Activation]:
    """Activate every instance exactly once, in declaration order."""
    inputs = inputs or {}
    return [_activate_once(inst, list(inputs.get(inst.id, ())), t) for inst in instances]


@dataclass
class CyclicScheduler:
    """Runs scans and moves emissions into the input latches of the next scan."""

    instances: Sequence[ComponentInstance]
    wiring: Wiring = field(default_factory=dict)
    log: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._latched: dict[str, list[tuple[str, dict]]] = {i.id: [] for i in self.instances}
        self.cycles = 0

    def post(self, component: str, event: str, data: dict | None = None) -> None:
        """Latch an input; it is read at the start of the next scan."""
        self._latched[component].append((event, dict(data or {})))

    def scan(self, t: Time) -> list[Activation]:
        snapshot, self._latched = self._latched, {i.id: [] for i in self.instances}
        acts = cyclic_scan(self.instances, t, snapshot)
        for act in acts:
            self.log.append(act.log_line())
            for name, payload in act.emissions:
                for comp, event in self.wiring.get((act.component, name), ()):
                    self._latched[comp].append((event, dict(payload)))
        self.cycles += 1
        return acts

    def attach(self, kernel: Kernel, period_ms: float, start_ms: float = 0) -> None:
        period = ms(period_ms)

        def fire(t: Time):
            self.scan(t)
            kernel.schedule(t + period, "scan", "scan", lambda: fire(t + period))

        kernel.schedule(ms(start_ms), "scan", "scan", lambda: fire(ms(start_ms)))
