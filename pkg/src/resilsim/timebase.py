"""Integer simulation time.

All timestamps are integer ticks; one tick is 0.01 ms. Every duration quoted
by the case study (9.1 ms, 9.72 ms, 0.62 ms, 259.2 ms, 460.5 ms) is an exact
multiple of the tick.
"""

from __future__ import annotations

from fractions import Fraction

TICKS_PER_MS = 100

Time = int


def ms(value: float | int | Fraction | str, *, strict: bool = True, ticks_per_ms: int = TICKS_PER_MS) -> Time:
    """Convert milliseconds to ticks.

    With ``strict`` the value must land on a tick boundary (within float
    noise); otherwise it is rounded to the nearest tick.
    """
    exact = Fraction(str(value)) if isinstance(value, float) else Fraction(value)
    scaled = exact * ticks_per_ms
    ticks = round(scaled)
    if strict and scaled != ticks:
        raise ValueError(f"{value} ms is not a multiple of the tick (1/{ticks_per_ms} ms)")
    return int(ticks)


def to_ms(ticks: Time, ticks_per_ms: int = TICKS_PER_MS) -> float:
    return ticks / ticks_per_ms


def fmt_ms(ticks: Time, ticks_per_ms: int = TICKS_PER_MS) -> str:
    """Render ticks as a millisecond string without float noise."""
    q = Fraction(ticks, ticks_per_ms)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{float(q):.{len(str(ticks_per_ms)) - 1}f}".rstrip("0")
