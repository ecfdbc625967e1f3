"""Injectable clocks.

All timing arithmetic in this package uses integer nanoseconds so that
schedules computed under the virtual clock are exact (no float drift).
"""

from __future__ import annotations

import time

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def ms_to_ns(ms: float) -> int:
    return round(ms * NS_PER_MS)


class MonotonicClock:
    """System monotonic clock; the production time source."""

    def now_ns(self) -> int:
        return time.monotonic_ns()


class VirtualClock:
    """Manually advanced clock for deterministic scheduling tests."""

    def __init__(self, start_ns: int = 0):
        self._now = start_ns

    def now_ns(self) -> int:
        return self._now

    def advance_ns(self, delta_ns: int) -> int:
        if delta_ns < 0:
            raise ValueError("virtual clock cannot move backwards")
        self._now += delta_ns
        return self._now

    def advance_to_ns(self, t_ns: int) -> int:
        if t_ns < self._now:
            raise ValueError("virtual clock cannot move backwards")
        self._now = t_ns
        return self._now
