"""Scalar embedding of a timestamp's phase within the ~11-year solar activity cycle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

__all__ = ["CycleConfig", "cycle_phase", "DEFAULT_CYCLE"]

# Default period: 48,204 two-hour steps = 96,408 hours, almost exactly 11 years.
DEFAULT_PERIOD_HOURS = 48_204 * 2.0
DEFAULT_BASE_TIME = datetime(2008, 12, 1, 0, 0, tzinfo=timezone.utc)


@dataclass(frozen=True)
class CycleConfig:
    """Anchor time and period of the activity cycle, in hours."""

    base_time: datetime = DEFAULT_BASE_TIME
    period_hours: float = DEFAULT_PERIOD_HOURS

    def __post_init__(self) -> None:
        if self.base_time.tzinfo is None:
            raise ValueError("base_time must be timezone-aware UTC")
        if not self.period_hours > 0.0:
            raise ValueError("period_hours must be positive")


DEFAULT_CYCLE = CycleConfig()


def cycle_phase(t: datetime, cfg: CycleConfig = DEFAULT_CYCLE) -> float:
    """Cosine phase of ``t`` within the cycle, in [-1, 1].

    Returns ``-cos(2 pi (t - base) / period)``: -1 at the anchor (cycle
    minimum), +1 half a period later, periodic thereafter. Times before the
    anchor are fine; the embedding is even around it.
    """
    if t.tzinfo is None:
        raise ValueError("timestamp must be timezone-aware UTC")
    delta_hours = (t - cfg.base_time).total_seconds() / 3600.0
    return -math.cos(2.0 * math.pi * delta_hours / cfg.period_hours)
