"""Quasi-dynamic threshold/clock light controller and the Webster fixed-cycle baseline."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class Region(IntEnum):
    X0 = 0
    X1 = 1
    X2 = 2
    X3 = 3
    X4 = 4
    X5 = 5
    X6 = 6


# regions where green lasts until the maximum clock
_MAX_CLOCK_REGIONS = (Region.X0, Region.X3, Region.X5, Region.X6)


@dataclass(frozen=True)
class PhaseParams:
    """Controllable vector of one phase: min green, max green, queue threshold."""

    min_green: float
    max_green: float
    threshold: float

    def feasible(self, tol: float = 0.0) -> bool:
        return self.min_green >= -tol and self.max_green >= self.min_green - tol and self.threshold >= -tol

    def as_array(self) -> np.ndarray:
        return np.array([self.min_green, self.max_green, self.threshold], dtype=float)


def classify_region(x_own_max: float, x_other_max: float, threshold: float) -> Region:
    """Partition cell of the (own phase, other phases) max-queue pair.

    Values at or above ``threshold`` count as high; exactly zero counts as empty.
    With ``threshold == 0`` any positive queue is high.
    """
    s = threshold
    own_zero, other_zero = x_own_max == 0, x_other_max == 0
    if own_zero and other_zero:
        return Region.X0
    if other_zero:
        return Region.X1
    if own_zero:
        return Region.X2
    own_high, other_high = x_own_max >= s, x_other_max >= s
    if not own_high and not other_high:
        return Region.X3
    if not own_high:
        return Region.X4
    if not other_high:
        return Region.X5
    return Region.X6


def control_decision(region: Region, clock: float, params: PhaseParams, idle_hold: float | None = None) -> int:
    """1 keeps the current phase green, 0 switches to the next phase.

    ``idle_hold`` keeps a phase whose own queues are empty green until the
    clock reaches it instead of cutting it at once (``None``).  The fluid
    simulator needs some hold because a red queue with any inflow is
    non-empty immediately.
    """
    if region == Region.X1:
        return 1
    if region == Region.X2:
        return int(0.0 < clock < idle_hold) if idle_hold is not None else 0
    if region == Region.X4:
        return int(0.0 < clock < params.min_green)
    return int(0.0 < clock < params.max_green)


def queue_signal(phase_queues, enabled_phase: str, queue: str, permanent_green=frozenset()) -> int:
    """Signal of ``queue`` given which phase is enabled.

    ``phase_queues`` maps phase id to its queue set.
    """
    if queue in permanent_green:
        return 1
    return int(queue in phase_queues[enabled_phase])


# --- Webster baseline ------------------------------------------------------

class WebsterError(ValueError):
    pass


@dataclass(frozen=True)
class FixedPlan:
    """Periodic schedule: phase ``k`` is green for ``durations[k]`` seconds in turn."""

    cycle: float
    greens: tuple
    lost_time: float

    @property
    def durations(self) -> tuple:
        return tuple(g + self.lost_time for g in self.greens)


def webster_plan(
    phase_flows,
    saturation_rate: float = 1.3,
    lost_time: float = 2.0,
    min_green: float = 5.0,
) -> FixedPlan:
    """Webster cycle ``C = (1.5 L + 5) / (1 - Y)`` with greens split by critical flow ratio.

    ``phase_flows`` holds, per phase, the flows (vehicles/s) of its queues; the
    critical ratio of a phase is its largest flow over ``saturation_rate``.
    Greens below ``min_green`` are raised to it.
    """
    ratios = np.array([max(f, default=0.0) / saturation_rate for f in phase_flows], dtype=float)
    total_lost = lost_time * len(ratios)
    y_sum = float(ratios.sum())
    if y_sum >= 1.0:
        raise WebsterError(f"demand exceeds capacity; Webster undefined (Y = {y_sum:.4g})")
    cycle = (1.5 * total_lost + 5.0) / (1.0 - y_sum)
    effective = cycle - total_lost
    if y_sum > 0:
        greens = effective * ratios / y_sum
    else:
        greens = np.full(len(ratios), effective / len(ratios))
    greens = np.maximum(greens, min_green)
    return FixedPlan(cycle=float(greens.sum() + total_lost), greens=tuple(float(g) for g in greens), lost_time=lost_time)
