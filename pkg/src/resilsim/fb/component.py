"""Component specifications and live instances."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from resilsim.contracts import Contract, Timing, validate_contract
from resilsim.fb.ecc import ECC, Route, pipeline_ecc
from resilsim.observers import Observer, synthesize_observer
from resilsim.timebase import Time, to_ms


class SpecError(ValueError):
    pass


class UnknownEvent(KeyError):
    pass


class UnknownBehaviour(KeyError):
    pass


@dataclass(frozen=True)
class Binding:
    """Which activations feed a contract's observer.

    Timing contracts see a ``sample`` at the start of every activation for
    ``event`` and a ``done`` at its completion. Value contracts read their
    port from the input data (``source="input"``) or from the data of the
    ``emission`` released at completion (``source="output"``). Activations
    for ``arm_event`` re-arm the observer.
    """

    contract: str
    event: str
    source: str = "input"
    emission: str | None = None
    arm_event: str | None = None


@dataclass
class ComponentSpec:
    id: str
    event_inputs: Mapping[str, tuple[str, ...]]
    event_outputs: Mapping[str, tuple[str, ...]]
    behaviours: Sequence[tuple[str, ECC]]
    contracts: Sequence[Contract] = ()
    initial: str | None = None
    init_vars: Mapping[str, object] = field(default_factory=dict)
    sampled: Mapping[str, float] = field(default_factory=dict)  # input event -> hold window in ms
    bindings: Sequence[Binding] = ()

    @property
    def behaviour_ids(self) -> list[str]:
        return [b for b, _ in self.behaviours]

    @property
    def initial_behaviour(self) -> str:
        return self.initial if self.initial is not None else self.behaviour_ids[0]

    def validate(self) -> None:
        ids = self.behaviour_ids
        if not ids:
            raise SpecError(f"{self.id}: a component needs at least one behaviour")
        dupes = sorted({b for b in ids if ids.count(b) > 1})
        if dupes:
            raise SpecError(f"{self.id}: duplicate behaviour ids {dupes}")
        if self.initial_behaviour not in ids:
            raise SpecError(f"{self.id}: initial behaviour {self.initial_behaviour!r} is not defined")
        for beh, ecc in self.behaviours:
            extra = ecc.events() - set(self.event_inputs)
            if extra:
                raise SpecError(f"{self.id}/{beh}: ECC reacts to undeclared events {sorted(extra)}")
        known = set(self.event_inputs) | set(self.event_outputs)
        for names in list(self.event_inputs.values()) + list(self.event_outputs.values()):
            known |= set(names)
        cids = set()
        for c in self.contracts:
            problems = validate_contract(c)
            if problems:
                raise SpecError(f"{self.id}: contract {c.id} is invalid: {'; '.join(problems)}")
            unknown = sorted(set(c.ports) - known)
            if unknown:
                raise SpecError(f"{self.id}: contract {c.id} references unknown ports {unknown}")
            cids.add(c.id)
        for b in self.bindings:
            if b.contract not in cids:
                raise SpecError(f"{self.id}: binding for unknown contract {b.contract!r}")
            if b.event not in self.event_inputs:
                raise SpecError(f"{self.id}: binding on undeclared event {b.event!r}")
        for ev in self.sampled:
            if ev not in self.event_inputs:
                raise SpecError(f"{self.id}: sampled input {ev!r} is not declared")


def behaviour_from_dict(d: Mapping[str, Mapping]) -> ECC:
    """Build an ECC from ``{event: {"stages": [[kernel, params], ...], "emit": ..., "with": [...]}}``."""
    routes = {
        ev: Route(
            tuple((k, dict(p)) for k, p in r.get("stages", ())),
            r.get("emit"),
            tuple(r.get("with", ())),
        )
        for ev, r in d.items()
    }
    return pipeline_ecc(routes)


@dataclass(frozen=True)
class Activation:
    component: str
    behaviour: str
    event: str
    start: Time
    state: str
    emissions: tuple[tuple[str, dict], ...]
    completion: Time | None  # None: the hosting node is down and the activation never ends

    def log_line(self) -> str:
        names = ";".join(name for name, _ in self.emissions)
        return f"{self.start},{self.component},{self.behaviour},{self.state},{self.event},{names}"


DurationFn = Callable[[str, str], "Time | None"]


class ComponentInstance:
    """A component with its shared variables, per-behaviour ECC states and observers."""

    def __init__(self, spec: ComponentSpec, duration_fn: DurationFn | None = None, h_ms: float = 0.1):
        spec.validate()
        self.spec = spec
        self.id = spec.id
        self.eccs = dict(spec.behaviours)
        self.behaviour = spec.initial_behaviour
        self.pending: str | None = None
        self.states = {b: ecc.initial for b, ecc in spec.behaviours}
        self.vars: dict = dict(spec.init_vars)
        self.duration_fn = duration_fn
        self.observers: dict[str, Observer] = {
            c.id: synthesize_observer(c, h_ms=h_ms) for c in spec.contracts
        }
        self.contracts = {c.id: c for c in spec.contracts}
        self.busy_until: Time | None = None
        self.busy = False

    @property
    def state(self) -> str:
        return self.states[self.behaviour]

    def timing_contracts(self) -> list[str]:
        return [cid for cid, c in self.contracts.items() if isinstance(c.guarantee, Timing)]

    def switch_behavior(self, behaviour: str, t: Time) -> Time | None:
        """Latch a switch; returns the tick from which it can take effect.

        A running activation finishes under the old behaviour. ``None`` means
        the current activation never completes.
        """
        if behaviour not in self.eccs:
            raise UnknownBehaviour(f"{self.id}: no behaviour {behaviour!r}")
        if behaviour == self.behaviour:
            self.pending = None
            return t
        self.pending = behaviour
        if not self.busy:
            return t
        return self.busy_until

    def activate(self, event: str, data: Mapping[str, object], t: Time, stamp: Time | None = None) -> Activation:
        """Latch ``data``, react, and compute the completion tick.

        ``stamp`` is the arrival tick handed to algorithms as ``_t_ms``; it
        defaults to ``t``.
        """
        if event not in self.spec.event_inputs:
            raise UnknownEvent(f"{self.id}: unknown input event {event!r}")
        if self.pending is not None:
            self.behaviour, self.pending = self.pending, None
        ecc = self.eccs[self.behaviour]
        inputs = dict(data)
        inputs["_t_ms"] = to_ms(t if stamp is None else stamp)
        step = ecc.react(self.states[self.behaviour], event, self.vars, inputs)
        self.states[self.behaviour] = step.state
        self.vars = step.vars
        duration = 0 if self.duration_fn is None else self.duration_fn(self.id, self.behaviour)
        completion = None if duration is None else t + duration
        return Activation(self.id, self.behaviour, event, t, step.state, step.emissions, completion)


def instantiate(spec: ComponentSpec, duration_fn: DurationFn | None = None, h_ms: float = 0.1) -> ComponentInstance:
    return ComponentInstance(spec, duration_fn, h_ms)
