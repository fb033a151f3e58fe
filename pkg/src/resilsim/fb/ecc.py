"""Execution control charts.

An ECC reacts to one input event at a time: the lowest-priority-number
enabled transition out of the current state is taken, the destination
state's actions run (algorithm, then optional event emission), and
event-less transitions are then followed until none is enabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

Vars = Mapping[str, object]
Algorithm = Callable[[Vars, Vars], dict]  # (internal vars, latched inputs) -> var updates


class EccError(RuntimeError):
    pass


@dataclass(frozen=True)
class EccTransition:
    src: str
    dst: str
    event: str | None = None
    guard: Callable[[Vars], bool] | None = None
    priority: int = 0


@dataclass(frozen=True)
class EccAction:
    algorithm: Algorithm | None = None
    name: str = ""
    emit: str | None = None
    with_vars: tuple[str, ...] = ()


@dataclass(frozen=True)
class EccStep:
    state: str
    vars: dict
    emissions: tuple[tuple[str, dict], ...]
    path: tuple[str, ...]


@dataclass(frozen=True)
class ECC:
    initial: str
    transitions: tuple[EccTransition, ...]
    actions: Mapping[str, tuple[EccAction, ...]] = field(default_factory=dict)
    max_chain: int = 64

    def __post_init__(self):
        states = self.states
        for tr in self.transitions:
            if tr.src not in states or tr.dst not in states:
                raise EccError(f"transition {tr.src}->{tr.dst} uses an undeclared state")

    @property
    def states(self) -> set[str]:
        found = {self.initial} | set(self.actions)
        for tr in self.transitions:
            found |= {tr.src, tr.dst}
        return found

    def events(self) -> set[str]:
        return {tr.event for tr in self.transitions if tr.event is not None}

    def _pick(self, state: str, event: str | None, env: Vars) -> EccTransition | None:
        candidates = [tr for tr in self.transitions if tr.src == state and tr.event == event]
        for tr in sorted(candidates, key=lambda tr: tr.priority):
            if tr.guard is None or tr.guard(env):
                return tr
        return None

    def react(self, state: str, event: str | None, vars_: Vars, inputs: Vars) -> EccStep:
        """Run one activation; returns the resulting state, vars and emissions."""
        env = dict(vars_)
        emissions: list[tuple[str, dict]] = []
        path: list[str] = []
        tr = self._pick(state, event, {**env, **inputs})
        steps = 0
        while tr is not None:
            steps += 1
            if steps > self.max_chain:
                raise EccError(f"ECC did not settle after {self.max_chain} transitions from {state}")
            state = tr.dst
            path.append(state)
            for act in self.actions.get(state, ()):
                if act.algorithm is not None:
                    env.update(act.algorithm(env, inputs))
                if act.emit is not None:
                    emissions.append((act.emit, {k: env.get(k) for k in act.with_vars}))
            tr = self._pick(state, None, {**env, **inputs})
        return EccStep(state, env, tuple(emissions), tuple(path))


# -- built-in kernels -----------------------------------------------------------
#
# Each kernel returns an algorithm that sets ``_pass``; a pipeline advances to
# its next stage only while ``_pass`` is true.


def debounce(delay_ms: float) -> Algorithm:
    """Accept an edge only if ``delay_ms`` has elapsed since the last accepted one."""

    def alg(v: Vars, inp: Vars) -> dict:
        t = inp["_t_ms"]
        last = v.get("_last_edge_ms")
        ok = last is None or t - last >= delay_ms
        return {"_pass": ok, "_last_edge_ms": t if ok else last}

    return alg


def counter(out: str = "count", by: int = 1) -> Algorithm:
    def alg(v: Vars, inp: Vars) -> dict:
        return {"_pass": True, out: int(v.get(out, 0)) + by}

    return alg


def pass_through(src: str, dst: str | None = None) -> Algorithm:
    def alg(v: Vars, inp: Vars) -> dict:
        return {"_pass": True, dst or src: inp[src]}

    return alg


def classify(src: str, classes: Mapping[str, Sequence[Sequence[float]]], dst: str = "class") -> Algorithm:
    """Label a reading with the first class whose closed interval contains it."""

    def alg(v: Vars, inp: Vars) -> dict:
        value = inp[src]
        for name, intervals in classes.items():
            if any(lo <= value <= hi for lo, hi in intervals):
                return {"_pass": True, dst: name}
        return {"_pass": False, dst: None}

    return alg


def schedule_trigger(
    steps_var: str,
    offsets: Mapping[str, tuple[str, int]],
    class_var: str = "class",
    dst: str = "trigger_steps",
    target_var: str = "target",
) -> Algorithm:
    """Compute the step count at which the class's actuator must fire."""

    def alg(v: Vars, inp: Vars) -> dict:
        target, offset = offsets[v[class_var]]
        return {"_pass": True, dst: int(v.get(steps_var, 0)) + offset, target_var: target}

    return alg


def enqueue_trigger(steps_src: str = "trigger_steps", target_src: str = "target", pending: str = "pending") -> Algorithm:
    def alg(v: Vars, inp: Vars) -> dict:
        queue = tuple(v.get(pending, ())) + ((inp[target_src], int(inp[steps_src])),)
        return {"_pass": False, pending: queue}

    return alg


def threshold_trigger(src: str = "motor_steps", pending: str = "pending", fire_var: str = "targets") -> Algorithm:
    """Fire every pending target whose trigger count equals the live count."""

    def alg(v: Vars, inp: Vars) -> dict:
        value = int(inp[src])
        queue = tuple(v.get(pending, ()))
        hits = tuple(target for target, steps in queue if steps == value)
        rest = tuple(item for item in queue if item[1] != value)
        return {"_pass": bool(hits), pending: rest, fire_var: hits}

    return alg


KERNELS: dict[str, Callable[..., Algorithm]] = {
    "debounce": debounce,
    "counter": counter,
    "pass_through": pass_through,
    "classify": classify,
    "schedule_trigger": schedule_trigger,
    "enqueue_trigger": enqueue_trigger,
    "threshold_trigger": threshold_trigger,
}


@dataclass(frozen=True)
class Route:
    """Stages run for one input event; ``emit`` fires if every stage passes."""

    stages: tuple[tuple[str, Mapping], ...]
    emit: str | None = None
    with_vars: tuple[str, ...] = ()


def _passed(env: Vars) -> bool:
    return bool(env.get("_pass"))


def pipeline_ecc(routes: Mapping[str, Route]) -> ECC:
    """Build an ECC chaining kernel stages per input event.

    START --event--> stage 1 --[_pass]--> stage 2 ... --[_pass]--> EMIT --> START.
    A failed stage falls back to START without emitting.
    """
    transitions: list[EccTransition] = []
    actions: dict[str, tuple[EccAction, ...]] = {}
    for event, route in routes.items():
        prev = "START"
        for i, (kernel, params) in enumerate(route.stages):
            if kernel not in KERNELS:
                raise EccError(f"unknown kernel {kernel!r}")
            state = f"{event.upper()}_{i}_{kernel.upper()}"
            actions[state] = (EccAction(KERNELS[kernel](**params), kernel),)
            if prev == "START":
                transitions.append(EccTransition("START", state, event))
            else:
                transitions.append(EccTransition(prev, state, None, _passed, 0))
                transitions.append(EccTransition(prev, "START", None, None, 1))
            prev = state
        if route.emit:
            emit_state = f"{event.upper()}_EMIT"
            actions[emit_state] = (EccAction(emit=route.emit, with_vars=route.with_vars),)
            if prev == "START":
                transitions.append(EccTransition("START", emit_state, event))
            else:
                transitions.append(EccTransition(prev, emit_state, None, _passed, 0))
                transitions.append(EccTransition(prev, "START", None, None, 1))
            transitions.append(EccTransition(emit_state, "START", None, None, 0))
        elif prev != "START":
            transitions.append(EccTransition(prev, "START", None, None, 0))
    actions.setdefault("START", ())
    return ECC("START", tuple(transitions), actions)
