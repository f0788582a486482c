"""Event-driven sample-path derivatives (infinitesimal perturbation analysis).

Derivatives are stored densely: one row of length ``|theta|`` per queue.
Parameter ``i`` of the flat vector maps to ``(phase, component)`` with
``i = 3 * phase_index + component``, components ordered min green, max green,
threshold.

Two layers live here.  The generic rules (:func:`crossing_tau`,
:func:`clock_tau`, :func:`front_tau`, :func:`jump`) are what the simulator
calls.  The closed forms for particular event types are written out
separately; the tests use them to check the generic rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_GREEN, MAX_GREEN, THRESHOLD = 0, 1, 2
COMPONENTS = ("min_green", "max_green", "threshold")
GRAZING_TOL = 1e-12


class GrazingCrossing(ArithmeticError):
    """Denominator of an event-time derivative is numerically zero."""


@dataclass(frozen=True)
class ParamIndex:
    """Bijection between flat parameter positions and (phase id, component)."""

    phases: tuple

    def __len__(self) -> int:
        return 3 * len(self.phases)

    def index(self, phase: str, component: int | str) -> int:
        if isinstance(component, str):
            component = COMPONENTS.index(component)
        return 3 * self.phases.index(phase) + component

    def key(self, i: int) -> tuple:
        return self.phases[i // 3], COMPONENTS[i % 3]

    def unit(self, i: int) -> np.ndarray:
        e = np.zeros(len(self))
        e[i] = 1.0
        return e


# --- generic rules ---------------------------------------------------------

def _check(den: float) -> None:
    if abs(den) < GRAZING_TOL:
        raise GrazingCrossing(den)


def crossing_tau(xp: np.ndarray, slope: float, level_index: int | None = None) -> np.ndarray:
    """Time derivative of a content crossing ``x = level``.

    ``level_index`` marks the parameter the level depends on (thresholds);
    crossings of 0 or capacity leave it ``None``.
    """
    _check(slope)
    num = -xp.copy()
    if level_index is not None:
        num[level_index] += 1.0
    return num / slope


def clock_tau(activation_tau: np.ndarray, bound_index: int | None) -> np.ndarray:
    """Clock reaching a green bound that was started at a switch.

    ``bound_index`` is the parameter the bound equals, or ``None`` for a fixed bound.
    """
    out = activation_tau.copy()
    if bound_index is not None:
        out[bound_index] += 1.0
    return out


def front_tau(emit_tau: np.ndarray, xp_dst: np.ndarray, slope_dst: float,
              vehicle_length: float, speed: float) -> np.ndarray:
    """A rate front emitted upstream reaching the tail of the downstream queue.

    The front travels the free road ahead of the queue, whose length shrinks
    as the queue grows; ``slope_dst`` is the queue's rate of change just
    before arrival.
    """
    k = vehicle_length / speed
    den = 1.0 + k * slope_dst
    _check(den)
    return (emit_tau - k * xp_dst) / den


def jump(xp: np.ndarray, slope_before: float, slope_after: float, tau: np.ndarray) -> np.ndarray:
    """State-derivative update when a queue's drift changes at a perturbed time."""
    return xp + (slope_before - slope_after) * tau


# --- closed forms for specific events --------------------------------------

def tau_empty(xp, arrival_rate, departure_rate):
    """Queue emptying while green."""
    return -np.asarray(xp) / (arrival_rate - departure_rate)


def tau_drop_below_threshold(xp, unit_threshold, arrival_rate, departure_rate):
    """Green queue falling through the threshold."""
    return (np.asarray(unit_threshold) - np.asarray(xp)) / (arrival_rate - departure_rate)


def tau_rise_above_threshold(xp, unit_threshold, arrival_rate):
    """Red queue rising through the threshold."""
    return (np.asarray(unit_threshold) - np.asarray(xp)) / arrival_rate


def tau_burst_head_join(speed, vehicle_length, departure_rate, tau_generation, xp):
    """Burst head reaching an empty-inflow downstream queue."""
    return speed / (speed - vehicle_length * departure_rate) * (
        np.asarray(tau_generation) - vehicle_length / speed * np.asarray(xp))


def tau_burst_tail_join(speed, vehicle_length, arrival_rate, departure_rate, tau_end, xp):
    """Burst tail leaving a downstream queue."""
    return speed / (speed + (arrival_rate - departure_rate) * vehicle_length) * (
        np.asarray(tau_end) - vehicle_length / speed * np.asarray(xp))


def tau_capacity(xp, arrival_rate, departure_rate):
    """Queue reaching capacity."""
    return -np.asarray(xp) / (arrival_rate - departure_rate)


# --- cost gradient ---------------------------------------------------------

@dataclass
class NEPRecord:
    """One non-empty period of a queue with its derivative plateaus.

    ``plateaus`` is a list of ``(start time, x' row)``; the first starts at
    ``start`` and each lasts until the next (the last until ``end``).
    """

    queue: str
    start: float
    end: float | None = None
    plateaus: list = field(default_factory=list)

    @property
    def event_times(self) -> list:
        return [t for t, _ in self.plateaus[1:]]


def accumulate_nep_gradient(record: NEPRecord) -> np.ndarray:
    """Integral of x' over one non-empty period (plateau sum)."""
    if record.end is None:
        raise ValueError("NEP still open")
    if not record.plateaus:
        return np.zeros(0)
    total = np.zeros_like(np.asarray(record.plateaus[0][1], dtype=float))
    bounds = [t for t, _ in record.plateaus[1:]] + [record.end]
    for (t0, xp), t1 in zip(record.plateaus, bounds):
        total += np.asarray(xp, dtype=float) * (t1 - t0)
    return total


def finalize_gradient(contributions, weights, horizon: float, n_params: int) -> np.ndarray:
    """Weighted sum of per-queue contributions scaled by 1/T.

    ``contributions`` is an iterable of ``(queue index, vector)``.
    """
    grad = np.zeros(n_params)
    for qi, vec in contributions:
        grad += weights[qi] * np.asarray(vec)
    return grad / horizon


class GradientAccumulator:
    """Running per-queue integrals of x' with window snapshots."""

    def __init__(self, n_queues: int, n_params: int):
        self.total = np.zeros((n_queues, n_params))
        self._mark = self.total.copy()

    def add(self, qi: int, xp: np.ndarray, dt: float) -> None:
        if dt > 0:
            self.total[qi] += xp * dt

    def window(self, weights: np.ndarray, length: float, reset: bool = True) -> np.ndarray:
        delta = self.total - self._mark
        if reset:
            self._mark = self.total.copy()
        return weights @ delta / length

    def gradient(self, weights: np.ndarray, horizon: float) -> np.ndarray:
        return weights @ self.total / horizon
