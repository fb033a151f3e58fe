"""The sorting-line application: components C1..C7 on nodes N1..N3.

C1 counts encoder pulses and publishes MotorSteps; C2 forwards light-barrier
crossings; C3 classifies colour readings; C4 turns a colour plus the current
step count into a trigger count; C5 fires an ejector when MotorSteps
reaches a trigger count; C6 publishes the motor duty cycle; C7 watches the
ejector air pressure.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction

from resilsim.contracts import parse_contract
from resilsim.fb import Binding, ComponentSpec, Route, Runtime, pipeline_ecc
from resilsim.kernel import FaultSpec, Kernel, PlatformMapping
from resilsim.metrics import (
    MetricReport,
    NoEpisodeError,
    StepTrace,
    build_report,
    recovery_period,
)
from resilsim.middleware import LinkModel, Middleware, QoS, Topic
from resilsim.plant import (
    COLOUR_INTERVALS,
    BounceNoise,
    Colour,
    Plant,
    PlantGeometry,
    PressureModel,
    WorkPiece,
)
from resilsim.timebase import Time, fmt_ms, ms

log = logging.getLogger(__name__)

NODE_OF = {"C1": "N1", "C2": "N1", "C3": "N2", "C4": "N2", "C5": "N3", "C6": "N3", "C7": "N3"}

DEFAULT_EXEC_MS = {
    ("C1", "Beh1"): 9.1,
    ("C1", "Beh2"): 4.1,
    ("C2", "*"): 1.0,
    ("C3", "*"): 5.0,
    ("C4", "*"): 2.0,
    ("C5", "*"): 50.0,
    ("C6", "*"): 1.0,
    ("C7", "*"): 1.0,
}

# Exp. 2 stretches one 9.1 ms activation to 259.2 ms
EXP2_SLOWDOWN = Fraction(2592, 91)


class ConfigError(ValueError):
    pass


@dataclass
class CaseStudyConfig:
    geometry: PlantGeometry = field(default_factory=PlantGeometry)
    pieces: list[tuple[str, float]] = field(default_factory=list)  # (colour, LS0 arrival in ms)
    exec_ms: dict[tuple[str, str], float] = field(default_factory=lambda: dict(DEFAULT_EXEC_MS))
    comm_ms: float = 0.62
    debounce_ms: dict[str, float] = field(default_factory=lambda: {"Beh1": 9.0, "Beh2": 4.0})
    c1_period_ms: float = 150.0
    c1_deadline_ms: float = 10.0
    jitter_ms: float = 0.0
    drop_prob: float = 0.0
    bounce: BounceNoise | None = None
    faults: list[FaultSpec] = field(default_factory=list)
    seed: int = 0
    until_ms: float = 7000.0
    motor_duty: float = 60.0
    motor_period_ms: float = 100.0
    pressure: dict = field(default_factory=lambda: {"k1": -0.5, "k2": 6.0, "period_ms": 10.0})
    envelope_tol: float = 0.05
    observer_h_ms: float = 1.0
    motor_steps_qos_ms: float | None = None
    demand: list[tuple[float, float]] | None = None  # (from ms, value) change points
    metric_target: str | None = None

    def validate(self) -> None:
        self.geometry.validate()
        if self.until_ms <= 0:
            raise ConfigError("until_ms must be > 0")
        for colour, _ in self.pieces:
            if colour not in {c.value for c in Colour}:
                raise ConfigError(f"unknown colour {colour!r}")
        for key, cost in self.exec_ms.items():
            if cost < 0:
                raise ConfigError(f"negative execution cost for {key}")
        if self.comm_ms < 0:
            raise ConfigError("comm_ms must be >= 0")
        if set(self.debounce_ms) != {"Beh1", "Beh2"}:
            raise ConfigError("debounce_ms needs Beh1 and Beh2")


def random_pieces(n: int, seed: int, first_ms: float = 1660.0, spacing_steps: int = 3, step_ms: float = 150.0):
    """``n`` pieces with seeded colours, ``spacing_steps`` apart."""
    rng = random.Random(seed)
    colours = [c.value for c in Colour]
    return [(rng.choice(colours), first_ms + i * spacing_steps * step_ms) for i in range(n)]


# -- component library ---------------------------------------------------------


def _contract(text: str):
    return parse_contract(text)


def pulse_counter_spec(cfg: CaseStudyConfig) -> ComponentSpec:
    def beh(delay):
        return pipeline_ecc(
            {
                "pulse": Route(
                    (("debounce", {"delay_ms": delay}), ("counter", {"out": "motor_steps"})),
                    "MotorStep",
                    ("motor_steps",),
                )
            }
        )

    contract = _contract(
        f"""
        contract C1_timing {{
          inputs: pulse : boolean
          outputs: motor_steps : integer
          assumptions: none
          guarantee: timing every {cfg.c1_period_ms:g} ms within {cfg.c1_deadline_ms:g} ms
        }}
        """
    )
    return ComponentSpec(
        "C1",
        {"pulse": ()},
        {"MotorStep": ("motor_steps",)},
        [("Beh1", beh(cfg.debounce_ms["Beh1"])), ("Beh2", beh(cfg.debounce_ms["Beh2"]))],
        [contract],
        init_vars={"motor_steps": 0},
        sampled={"pulse": cfg.geometry.pulse_high_ms},
        bindings=[Binding("C1_timing", "pulse")],
    )


def barrier_spec() -> ComponentSpec:
    ecc = pipeline_ecc(
        {
            "barrier": Route(
                (("pass_through", {"src": "barrier"}), ("pass_through", {"src": "piece"})),
                "Barrier",
                ("barrier", "piece"),
            )
        }
    )
    return ComponentSpec("C2", {"barrier": ("barrier", "piece")}, {"Barrier": ("barrier", "piece")}, [("Beh1", ecc)])


def colour_sensor_spec() -> ComponentSpec:
    classes = {c.value: [COLOUR_INTERVALS[c]] for c in Colour}
    ecc = pipeline_ecc(
        {
            "reading": Route(
                (("classify", {"src": "colour_value", "classes": classes}), ("pass_through", {"src": "colour_value"})),
                "Colour",
                ("class", "colour_value"),
            )
        }
    )
    intervals = " ".join(f"[{lo:g}, {hi:g}]" for lo, hi in sorted(COLOUR_INTERVALS.values()))
    contract = _contract(
        f"""
        contract C3_colour {{
          inputs: colour_value : real
          outputs: class : integer
          assumptions: none
          guarantee: member colour_value in {intervals}
        }}
        """
    )
    return ComponentSpec(
        "C3",
        {"reading": ("colour_value", "piece")},
        {"Colour": ("class", "colour_value")},
        [("Beh1", ecc)],
        [contract],
        bindings=[Binding("C3_colour", "reading")],
    )


def controller_spec(cfg: CaseStudyConfig) -> ComponentSpec:
    ecc = pipeline_ecc(
        {
            "motor_steps": Route((("pass_through", {"src": "motor_steps"}),)),
            "barrier": Route((("counter", {"out": "pieces_seen"}),)),
            "colour": Route(
                (
                    ("pass_through", {"src": "class"}),
                    ("schedule_trigger", {"steps_var": "motor_steps", "offsets": cfg.geometry.trigger_offsets()}),
                ),
                "Trigger",
                ("target", "trigger_steps"),
            ),
        }
    )
    return ComponentSpec(
        "C4",
        {"motor_steps": ("motor_steps",), "colour": ("class", "colour_value"), "barrier": ("barrier", "piece")},
        {"Trigger": ("target", "trigger_steps")},
        [("Beh1", ecc)],
        init_vars={"motor_steps": 0, "pieces_seen": 0},
    )


def ejector_spec() -> ComponentSpec:
    ecc = pipeline_ecc(
        {
            "trigger": Route((("enqueue_trigger", {}),)),
            "motor_steps": Route((("threshold_trigger", {"src": "motor_steps"}),), "Eject", ("targets",)),
        }
    )
    return ComponentSpec(
        "C5",
        {"trigger": ("target", "trigger_steps"), "motor_steps": ("motor_steps",)},
        {"Eject": ("targets",)},
        [("Beh1", ecc)],
        init_vars={"pending": ()},
    )


def motor_spec() -> ComponentSpec:
    ecc = pipeline_ecc({"tick": Route((("pass_through", {"src": "duty"}),), "Duty", ("duty",))})
    contract = _contract(
        """
        contract C6_duty {
          inputs: tick : boolean
          outputs: duty : real
          assumptions: none
          guarantee: bound duty in [0, 100]
        }
        """
    )
    return ComponentSpec(
        "C6",
        {"tick": ("duty",)},
        {"Duty": ("duty",)},
        [("Beh1", ecc)],
        [contract],
        bindings=[Binding("C6_duty", "tick", source="output", emission="Duty")],
    )


def pressure_monitor_spec(cfg: CaseStudyConfig) -> ComponentSpec:
    ecc = pipeline_ecc(
        {
            "pressure": Route((("pass_through", {"src": "pressure"}),)),
            "ejected": Route((("counter", {"out": "valve_cycles"}),)),
        }
    )
    p = cfg.pressure
    contract = _contract(
        f"""
        contract C7_pressure {{
          inputs: pressure : real, ejected : boolean
          outputs: none
          assumptions: none
          guarantee: envelope pressure rate {p['k1']!r} initial {p['k2']!r} tol {cfg.envelope_tol!r}
        }}
        """
    )
    return ComponentSpec(
        "C7",
        {"pressure": ("pressure",), "ejected": ()},
        {},
        [("Beh1", ecc)],
        [contract],
        bindings=[Binding("C7_pressure", "pressure", arm_event="ejected")],
    )


# -- assembly ------------------------------------------------------------------


@dataclass
class CaseStudy:
    config: CaseStudyConfig
    kernel: Kernel
    middleware: Middleware
    runtime: Runtime
    plant: Plant
    until: Time

    def run(self) -> "CaseStudy":
        self.kernel.run_until(self.until)
        return self

    # log views

    def fault_lines(self) -> list[str]:
        return [r.to_line() for r in self.kernel.fault_log]

    def verdict_lines(self) -> list[str]:
        return self.runtime.verdict_lines()

    def metric_target(self) -> str:
        if self.config.metric_target:
            return self.config.metric_target
        return self.config.faults[0].target if self.config.faults else "N1"

    def availability(self) -> StepTrace:
        return self.kernel.availability(self.metric_target(), end=self.until)

    def demand(self) -> StepTrace:
        points = self.config.demand or [(0.0, 1.0)]
        changes = [(ms(t, strict=False), Fraction(str(v))) for t, v in points]
        return StepTrace.from_changes(changes, self.until)

    def report(self) -> MetricReport:
        return build_report(self.availability(), self.demand(), self.runtime.verdicts, self.kernel.fault_log)


def build_case_study(cfg: CaseStudyConfig) -> CaseStudy:
    cfg.validate()
    kernel = Kernel(seed=cfg.seed)
    for node in ("N1", "N2", "N3"):
        kernel.add_node(node)

    exec_cost = {k: ms(v) for k, v in cfg.exec_ms.items()}
    edges = [
        ("C1", "C4"), ("C1", "C5"), ("C2", "C4"), ("C3", "C4"), ("C4", "C5"),
        ("C1", "C2"), ("C1", "C3"), ("C1", "C6"), ("C1", "C7"),
    ]
    comm = {(f"{a}->{b}", "*"): ms(cfg.comm_ms) for a, b in edges}
    kernel.set_mapping(PlatformMapping(dict(NODE_OF), exec_cost, comm))

    # faults first so they win same-tick ties against plant events
    for spec in cfg.faults:
        if spec.target.count("->") == 1 and spec.target not in ("CS", "AIR", "ENC"):
            kernel.add_target(spec.target, "link")

    mw = Middleware(kernel, LinkModel(None, cfg.jitter_ms, cfg.drop_prob))
    qos = QoS(deadline_ms=cfg.motor_steps_qos_ms) if cfg.motor_steps_qos_ms else QoS()
    for topic in (Topic("motor_steps", "integer", qos), Topic("barrier"), Topic("colour"), Topic("trigger"), Topic("motor_duty", "real")):
        mw.declare(topic)

    rt = Runtime(kernel, mw, h_ms=cfg.observer_h_ms)
    for spec in (
        pulse_counter_spec(cfg),
        barrier_spec(),
        colour_sensor_spec(),
        controller_spec(cfg),
        ejector_spec(),
        motor_spec(),
        pressure_monitor_spec(cfg),
    ):
        rt.add(spec)

    rt.publish_on("C1", "MotorStep", "motor_steps")
    rt.publish_on("C2", "Barrier", "barrier")
    rt.publish_on("C3", "Colour", "colour")
    rt.publish_on("C4", "Trigger", "trigger")
    rt.publish_on("C6", "Duty", "motor_duty")
    rt.subscribe("C4", "motor_steps", "motor_steps")
    rt.subscribe("C5", "motor_steps", "motor_steps")
    rt.subscribe("C4", "barrier", "barrier")
    rt.subscribe("C4", "colour", "colour")
    rt.subscribe("C5", "trigger", "trigger")
    rt.subscribe_faults("C4", "C1")

    pieces = [
        WorkPiece(f"P{i:03d}", Colour(colour), ms(arrival, strict=False))
        for i, (colour, arrival) in enumerate(cfg.pieces)
    ]
    plant = Plant(kernel, cfg.geometry, pieces, cfg.bounce, PressureModel(**cfg.pressure))
    for spec in cfg.faults:
        kernel.inject_fault(spec)

    plant.on("pulse", lambda ev, data: rt.deliver("C1", "pulse", data))
    plant.on("bounce", lambda ev, data: rt.deliver("C1", "pulse", data))
    plant.on("barrier", lambda ev, data: rt.deliver("C2", "barrier", data))
    plant.on("colour", lambda ev, data: rt.deliver("C3", "reading", data))
    plant.on("pressure", lambda ev, data: rt.deliver("C7", "pressure", data))

    def eject(payload, t):
        for target in payload.get("targets") or ():
            plant.eject(target, t)
            rt.deliver("C7", "ejected", {})

    rt.connect("C5", "Eject", eject)

    until = ms(cfg.until_ms, strict=False)
    plant.attach(until)
    rt.add_timer("C6", "tick", cfg.motor_period_ms, {"duty": cfg.motor_duty})
    return CaseStudy(cfg, kernel, mw, rt, plant, until)


# -- experiments ---------------------------------------------------------------


def exp1_config(**overrides) -> CaseStudyConfig:
    """Nominal timing run: one red piece reaches LS0 10 ms after pulse 12."""
    cfg = CaseStudyConfig(pieces=[("red", 11 * 150.0 + 10.0)], until_ms=7000.0)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def exp2_config(**overrides) -> CaseStudyConfig:
    """Fault run: N1 slows down while the third pulse is processed."""
    pieces = [("red", -5.5 * 150.0)]  # already 5.5 steps down the belt at t = 0
    pieces += [(c, 1660.0 + i * 450.0) for i, c in enumerate(["red", "blue", "white", "blue", "red", "white"])]
    fault = FaultSpec("N1", ms(300), "transient", "slowdown", EXP2_SLOWDOWN, duration_ms=150.0, id="F1")
    cfg = CaseStudyConfig(pieces=pieces, faults=[fault], until_ms=12000.0)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def _pulse_index(t: Time, geometry: PlantGeometry) -> int | float:
    """1-based index of the encoder pulse at tick ``t``."""
    q, r = divmod(t, geometry.step_ticks)
    return q + 1 if r == 0 else t / geometry.step_ticks + 1


def _parse_log(lines):
    return [line.split(",") for line in lines]


@dataclass
class ExperimentReport:
    name: str
    passed: bool
    values: dict
    failures: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"experiment": self.name, "passed": self.passed, "failures": self.failures, **self.values}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def end_to_end_delays(cs: CaseStudy) -> dict[str, Time]:
    """Per piece: ejection tick minus LS0 crossing tick, both read from the plant log."""
    ls0, ejected = {}, {}
    for tick, piece, event, _ in _parse_log(cs.plant.log):
        if event == "ls0_crossing":
            ls0[piece] = int(tick)
        elif event == "ejected":
            ejected[piece] = int(tick)
    return {p: ejected[p] - ls0[p] for p in ejected if p in ls0}


def run_experiment_1(cfg: CaseStudyConfig | None = None) -> tuple[ExperimentReport, CaseStudy]:
    cs = build_case_study(cfg or exp1_config()).run()
    g = cs.config.geometry
    values: dict = {}
    failures = []
    c1 = [a for a in cs.runtime.activations if a.component == "C1" and a.completion is not None]
    if c1:
        values["c1_execution_ms"] = fmt_ms(c1[0].completion - c1[0].start)
        first_delivery = next(
            (int(r[0]) for r in _parse_log(cs.middleware.delivery_log) if r[1] == "motor_steps" and r[3] == "C5" and r[6] == "delivered"),
            None,
        )
        if first_delivery is not None:
            values["compute_and_send_ms"] = fmt_ms(first_delivery - c1[0].start)
    delays = end_to_end_delays(cs)
    first = min(cs.plant.pieces) if cs.plant.pieces else None
    if first in delays:
        values["end_to_end_ms"] = fmt_ms(delays[first])
        values["end_to_end_ticks"] = delays[first]
        if delays[first] >= ms(g.end_to_end_deadline_ms):
            failures.append(f"end-to-end delay {fmt_ms(delays[first])} ms exceeds {g.end_to_end_deadline_ms:g} ms")
    else:
        failures.append("tracked piece was never ejected")
    values["sorting"] = cs.plant.summary()
    return ExperimentReport("exp1", not failures, values, failures), cs


def run_experiment_2(cfg: CaseStudyConfig | None = None) -> tuple[ExperimentReport, CaseStudy]:
    cs = build_case_study(cfg or exp2_config()).run()
    g = cs.config.geometry
    values: dict = {}
    failures = []
    verdicts = [r for r in cs.runtime.verdicts if r.component == "C1"]
    violated = next((r for r in verdicts if r.event == "violated"), None)
    switch = next((r for r in verdicts if r.event == "switch"), None)
    c1 = [a for a in cs.runtime.activations if a.component == "C1"]
    if violated is None:
        failures.append("no violation detected")
    else:
        running = [a for a in c1 if a.start <= violated.tick]
        culprit = running[-1]
        values["violation_tick"] = violated.tick
        values["violation_kind"] = violated.kind
        values["violating_pulse"] = _pulse_index(culprit.start, g)
        values["detection_after_pulse_ms"] = fmt_ms(violated.tick - culprit.start)
        if violated.kind != "missed_deadline" or violated.tick - culprit.start != ms(cs.config.c1_deadline_ms):
            failures.append("violation is not a deadline miss at the contract deadline")
    if switch is not None:
        values["switch_tick"] = switch.tick
        values["switch"] = switch.kind
        new = switch.kind.split("->")[1]
        after = next((a for a in c1 if a.behaviour == new), None)
        if after is not None:
            values["first_pulse_under_new_behaviour"] = _pulse_index(after.start, g)
        values["missed_pulses"] = [_pulse_index(int(r.split(",")[3]), g) for r in cs.runtime.drop_log if ",C1," in r]
    elif violated is not None:
        failures.append("no behaviour switch")
    escalations = [r.tick for r in verdicts if r.event == "escalate"]
    if escalations:
        values["escalations"] = escalations
    try:
        rec = recovery_period(cs.runtime.verdicts, cs.kernel.fault_log)
        values["recovery"] = [r.to_json() for r in rec]
    except NoEpisodeError:
        values["recovery"] = []
        if cs.config.faults:
            failures.append("no recovery recorded")
    values["sorting"] = cs.plant.summary()
    values["pieces"] = {p.id: [p.colour.value, p.status.value, p.bin] for p in cs.plant.pieces.values()}
    return ExperimentReport("exp2", not failures, values, failures), cs


def colour_outlier_faults(cfg: CaseStudyConfig, indices, value: float = 600.0, width_ms: float = 1.0) -> list[FaultSpec]:
    """One transient stuck-value fault on the colour sensor per selected piece.

    Each fault is active for ``width_ms`` around the tick the piece reaches
    the colour sensor, so exactly that piece's reading is corrupted.
    """
    g = cfg.geometry
    faults = []
    for i in sorted(indices):
        _, arrival = cfg.pieces[i]
        at = ms(arrival, strict=False) + int(round(Fraction(str(g.colour_sensor)) * g.step_ticks))
        half = ms(width_ms, strict=False) // 2
        faults.append(
            FaultSpec("CS", at - half, "transient", "stuck_value", value=value, duration_ms=width_ms, id=f"CS{i:03d}")
        )
    return faults
