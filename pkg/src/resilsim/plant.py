"""Physical layer of the sorting line.

The belt moves at constant speed: one step per encoder pulse period. All
positions are in steps measured from light barrier LS0 and all crossing
times are computed in closed form, so a sensor event lands on the exact
tick a piece reaches it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable

from resilsim.kernel import Kernel
from resilsim.timebase import Time, ms


class Colour(str, Enum):
    RED = "red"
    BLUE = "blue"
    WHITE = "white"


COLOUR_INTERVALS: dict[Colour, tuple[float, float]] = {
    Colour.BLUE: (750.0, 755.0),
    Colour.RED: (568.0, 590.0),
    Colour.WHITE: (535.0, 558.0),
}
COLOUR_BIN = {Colour.RED: "SB1", Colour.BLUE: "SB2", Colour.WHITE: "SB3"}
EJECTOR_BIN = {"E1": "SB1", "E2": "SB2", "E3": "SB3"}


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PlantGeometry:
    step_ms: float = 150.0
    colour_sensor: float = 7.0
    barriers: tuple[tuple[str, float], ...] = (("LS0", 0.0), ("LS1", 7.0), ("LS2", 22.0), ("LS3", 47.0))
    ejectors: tuple[tuple[str, float], ...] = (("E1", 25.0), ("E2", 34.0), ("E3", 42.0))
    eject_window: float = 0.75
    belt_end: float = 48.0
    pulse_high_ms: float = 75.0
    end_to_end_deadline_ms: float = 4000.0

    def validate(self) -> None:
        if self.step_ms <= 0:
            raise GeometryError("step_ms must be > 0")
        names = [n for n, _ in self.barriers]
        if not names or names[0] != "LS0" or self.barriers[0][1] != 0:
            raise GeometryError("LS0 must be the first barrier, at step 0")
        positions = [p for _, p in self.barriers]
        if positions != sorted(positions) or len(set(positions)) != len(positions):
            raise GeometryError("barrier positions must strictly increase along the belt")
        if not 0 < self.colour_sensor < self.belt_end:
            raise GeometryError("colour sensor must lie on the belt after LS0")
        ej = [p for _, p in self.ejectors]
        if ej != sorted(ej) or len(set(ej)) != len(ej):
            raise GeometryError("ejector positions must strictly increase along the belt")
        if ej[0] <= self.colour_sensor:
            raise GeometryError("ejectors must sit after the colour sensor")
        if ej[-1] >= self.belt_end or positions[-1] >= self.belt_end:
            raise GeometryError("sensors and ejectors must sit before the belt end")
        if not 0 < self.eject_window < 1.5:
            raise GeometryError("eject_window must lie in (0, 1.5) so one piece matches per firing")
        if not 0 < self.pulse_high_ms < self.step_ms:
            raise GeometryError("pulse_high_ms must lie in (0, step_ms)")

    @property
    def step_ticks(self) -> Time:
        return ms(self.step_ms)

    def ejector_position(self, ejector: str) -> float:
        return dict(self.ejectors)[ejector]

    def trigger_offsets(self) -> dict[str, tuple[str, int]]:
        """Colour class -> (ejector, steps between colour sensor and ejector)."""
        bin_to_ejector = {b: e for e, b in EJECTOR_BIN.items()}
        out = {}
        for colour, bin_ in COLOUR_BIN.items():
            ejector = bin_to_ejector[bin_]
            out[colour.value] = (ejector, int(round(self.ejector_position(ejector) - self.colour_sensor)))
        return out


class PieceStatus(str, Enum):
    ON_BELT = "on_belt"
    EJECTED = "ejected"
    MISSED = "missed"


@dataclass
class WorkPiece:
    id: str
    colour: Colour
    arrival: Time  # tick at which the piece is at LS0; may be negative
    status: PieceStatus = PieceStatus.ON_BELT
    bin: str | None = None

    @property
    def destination(self) -> str:
        return COLOUR_BIN[self.colour]

    @property
    def sorted_correctly(self) -> bool:
        return self.status is PieceStatus.EJECTED and self.bin == self.destination

    def position(self, t: Time, step_ticks: Time) -> Fraction:
        return Fraction(t - self.arrival, step_ticks)

    def crossing(self, pos: float, step_ticks: Time) -> Time:
        return self.arrival + int(round(Fraction(str(pos)) * step_ticks))


@dataclass(frozen=True)
class BounceNoise:
    """Spurious encoder edges after each true edge, all within ``window_ms``."""

    max_edges: int = 3
    window_ms: float = 3.0
    probability: float = 1.0

    def __post_init__(self):
        if self.max_edges < 0 or self.window_ms <= 0 or not 0 <= self.probability <= 1:
            raise ValueError("invalid bounce parameters")


@dataclass
class PressureModel:
    """Reservoir pressure p' = k1 p, refilled to k2 at every valve cycle.

    Active ``leak`` faults on the ``AIR`` target scale k1 by their factor.
    """

    k1: float = -0.5  # 1/s
    k2: float = 6.0  # bar
    period_ms: float = 10.0
    value: float = field(init=False)
    last: Time = field(init=False, default=0)

    def __post_init__(self):
        self.value = self.k2

    def advance(self, t: Time, rate: float) -> float:
        self.value *= math.exp(rate * (t - self.last) / ms(1000))
        self.last = t
        return self.value

    def refill(self, t: Time) -> None:
        self.value, self.last = self.k2, t


@dataclass(frozen=True)
class PlantEvent:
    time: Time
    kind: str  # pulse | bounce | barrier | colour | belt_end
    where: str = ""
    piece: str = ""
    position: float = 0.0

    def sort_key(self):
        return (self.time, self.position, self.kind, self.piece)


Handler = Callable[[PlantEvent, dict], None]


class Plant:
    SENSOR_TARGETS = ("CS", "AIR", "ENC")

    def __init__(
        self,
        kernel: Kernel,
        geometry: PlantGeometry | None = None,
        pieces: list[WorkPiece] | None = None,
        bounce: BounceNoise | None = None,
        pressure: PressureModel | None = None,
    ):
        self.geometry = geometry or PlantGeometry()
        self.geometry.validate()
        self.kernel = kernel
        self.pieces = {p.id: p for p in (pieces or [])}
        self.bounce = bounce
        self.pressure = pressure or PressureModel()
        self.now: Time = 0
        self.log: list[str] = []
        self.handlers: dict[str, list[Handler]] = {}
        for target in self.SENSOR_TARGETS:
            kernel.add_target(target, "sensor")

    # -- kinematics -----------------------------------------------------------

    def _crossings(self):
        g = self.geometry
        for p in self.pieces.values():
            for name, pos in g.barriers:
                yield PlantEvent(p.crossing(pos, g.step_ticks), "barrier", name, p.id, pos)
            yield PlantEvent(p.crossing(g.colour_sensor, g.step_ticks), "colour", "CS", p.id, g.colour_sensor)
            yield PlantEvent(p.crossing(g.belt_end, g.step_ticks), "belt_end", "END", p.id, g.belt_end)

    def events_between(self, t0: Time, t1: Time) -> list[PlantEvent]:
        """Encoder pulses and sensor crossings with t0 <= time < t1, in (time, position) order."""
        g = self.geometry
        step = g.step_ticks
        out = [e for e in self._crossings() if t0 <= e.time < t1]
        n = -(-t0 // step)
        while n * step < t1:
            out.append(PlantEvent(n * step, "pulse", "ENC", "", 0.0))
            n += 1
        return sorted(out, key=PlantEvent.sort_key)

    def step(self, dt_ms: float) -> list[PlantEvent]:
        """Advance the plant clock by ``dt_ms`` and return the events passed."""
        if dt_ms <= 0:
            raise ValueError("dt must be > 0")
        t1 = self.now + ms(dt_ms, strict=False)
        events = self.events_between(self.now, t1)
        self.now = t1
        return events

    def positions(self, t: Time) -> dict[str, Fraction]:
        return {p.id: p.position(t, self.geometry.step_ticks) for p in self.pieces.values()}

    # -- kernel integration ---------------------------------------------------

    def on(self, kind: str, handler: Handler) -> None:
        self.handlers.setdefault(kind, []).append(handler)

    def _emit(self, ev: PlantEvent, data: dict) -> None:
        for h in self.handlers.get(ev.kind, ()):
            h(ev, data)

    def _record(self, t: Time, piece: str, event: str, detail: str = "") -> None:
        self.log.append(f"{t},{piece},{event},{detail}")

    def attach(self, until: Time) -> None:
        """Schedule every plant event in [0, until] on the kernel."""
        for ev in self.events_between(0, until + 1):
            self.kernel.schedule(ev.time, ev.where or "plant", ev.kind, lambda ev=ev: self._fire(ev), ev.piece)
        period = ms(self.pressure.period_ms)
        t = 0
        while t <= until:
            self.kernel.schedule(t, "AIR", "pressure", lambda t=t: self._sample_pressure(t))
            t += period

    def _fire(self, ev: PlantEvent) -> None:
        piece = self.pieces.get(ev.piece)
        if piece is not None and piece.status is not PieceStatus.ON_BELT:
            return
        if ev.kind == "pulse":
            self._emit(ev, {})
            self._schedule_bounce(ev.time)
        elif ev.kind == "barrier":
            self._record(ev.time, piece.id, f"{ev.where.lower()}_crossing", piece.colour.value)
            self._emit(ev, {"barrier": ev.where, "piece": piece.id})
        elif ev.kind == "colour":
            value = self.read_colour(piece)
            self._record(ev.time, piece.id, "colour_reading", f"{value:.2f}")
            self._emit(ev, {"colour_value": value, "piece": piece.id})
        elif ev.kind == "belt_end":
            piece.status = PieceStatus.MISSED
            self._record(ev.time, piece.id, "missed", piece.colour.value)

    def _schedule_bounce(self, t: Time) -> None:
        b = self.bounce
        if b is None or b.max_edges == 0:
            return
        rng = self.kernel.rng
        if rng.random() >= b.probability:
            return
        width = ms(b.window_ms, strict=False)
        offsets = sorted(rng.randint(1, width - 1) for _ in range(rng.randint(1, b.max_edges)))
        for off in offsets:
            ev = PlantEvent(t + off, "bounce", "ENC")
            self.kernel.schedule(ev.time, "ENC", "bounce", lambda ev=ev: self._emit(ev, {}))

    def read_colour(self, piece: WorkPiece) -> float:
        for f in self.kernel.active_effects("CS"):
            if f.effect == "stuck_value":
                return float(f.value)
        lo, hi = COLOUR_INTERVALS[piece.colour]
        return round(self.kernel.rng.uniform(lo, hi), 2)

    def _leak_rate(self) -> float:
        rate = self.pressure.k1
        for f in self.kernel.active_effects("AIR"):
            if f.effect == "leak":
                rate *= float(f.factor)
        return rate

    def _sample_pressure(self, t: Time) -> None:
        value = self.pressure.advance(t, self._leak_rate())
        self._emit(PlantEvent(t, "pressure", "AIR"), {"pressure": value})

    def eject(self, ejector: str, t: Time) -> WorkPiece | None:
        """Fire an ejector; the nearest on-belt piece inside the window is pushed off."""
        g = self.geometry
        pos = g.ejector_position(ejector)
        best, best_d = None, None
        for p in self.pieces.values():
            if p.status is not PieceStatus.ON_BELT:
                continue
            d = abs(p.position(t, g.step_ticks) - Fraction(str(pos)))
            if d <= Fraction(str(g.eject_window)) and (best_d is None or d < best_d):
                best, best_d = p, d
        self.pressure.advance(t, self._leak_rate())
        self.pressure.refill(t)
        if best is None:
            self._record(t, "", "eject_miss", ejector)
            return None
        best.status = PieceStatus.EJECTED
        best.bin = EJECTOR_BIN[ejector]
        self._record(t, best.id, "ejected", f"{ejector}:{best.bin}")
        return best

    def summary(self) -> dict:
        pieces = list(self.pieces.values())
        return {
            "pieces": len(pieces),
            "correct": sum(p.sorted_correctly for p in pieces),
            "wrong_bin": sum(p.status is PieceStatus.EJECTED and not p.sorted_correctly for p in pieces),
            "missed": sum(p.status is PieceStatus.MISSED for p in pieces),
            "on_belt": sum(p.status is PieceStatus.ON_BELT for p in pieces),
        }


def step_plant(plant: Plant, dt_ms: float) -> list[PlantEvent]:
    return plant.step(dt_ms)

