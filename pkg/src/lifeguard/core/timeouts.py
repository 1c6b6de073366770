"""Timeout arithmetic: suspicion timeouts, their bounds, gossip budgets and
the local health multiplier."""

from __future__ import annotations

import math
from typing import Tuple

from ..config import ConfigError


def suspicion_timeout(min_ms: float, max_ms: float, k: int, c: int) -> float:
    """Suspicion timeout after ``c`` independent confirmations.

    Decays logarithmically from ``max_ms`` (c=0) to ``min_ms`` (c >= k).
    The ratio of logs makes the result independent of the log base.
    """
    if min_ms > max_ms:
        raise ConfigError(f"suspicion min {min_ms} exceeds max {max_ms}")
    if k < 1 or c < 0:
        raise ValueError("need k >= 1 and c >= 0")
    frac = math.log(c + 1) / math.log(k + 1)
    return max(min_ms, max_ms - (max_ms - min_ms) * frac)


def suspicion_bounds(n: int, alpha: float, beta: float, probe_interval: float) -> Tuple[float, float]:
    """(min, max) suspicion timeouts for a group of ``n`` live members.

    min is floored at one probe interval so tiny groups never get a zero
    timeout (log10(1) == 0).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = max(alpha * math.log10(n) * probe_interval, probe_interval)
    return lo, beta * lo


def gossip_budget(n: int, retransmit_mult: float) -> int:
    """Transmissions allotted to one update: ceil(lambda * log10(n + 1))."""
    return max(1, math.ceil(retransmit_mult * math.log10(n + 1)))


class LocalHealth:
    """Saturating counter in [0, limit] scaling probe interval and timeout."""

    __slots__ = ("value", "limit", "enabled")

    def __init__(self, limit: int = 8, enabled: bool = True):
        self.value = 0
        self.limit = limit
        self.enabled = enabled

    def apply(self, delta: int) -> int:
        if self.enabled:
            self.value = min(self.limit, max(0, self.value + delta))
        return self.value

    def scale(self, base: float) -> float:
        return base * (self.value + 1)

    def __repr__(self):
        return f"LocalHealth({self.value}/{self.limit})"
