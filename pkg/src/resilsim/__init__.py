"""Discrete-event simulation of contract-monitored, self-adapting component systems."""

from resilsim.timebase import TICKS_PER_MS, fmt_ms, ms, to_ms

__version__ = "0.1.0"

__all__ = ["TICKS_PER_MS", "fmt_ms", "ms", "to_ms", "__version__"]
