"""Cost and evaluation metrics computed from a finished trace."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .ipa import NEPRecord


def mean_queue_cost(int_x, weights, horizon: float) -> float:
    """Weighted time-average queue content, ``sum_q w_q * int x_q dt / T``."""
    return float(np.dot(weights, int_x)) / horizon


def nep_area(record: NEPRecord, trajectory) -> float:
    """Area under a piecewise-linear trajectory restricted to one non-empty period."""
    return trajectory_area(trajectory, record.start, record.end)


def trajectory_area(points, t0: float, t1: float) -> float:
    """Exact integral of a piecewise-linear ``[(t, x), ...]`` path over ``[t0, t1]``."""
    total = 0.0
    for (ta, xa), (tb, xb) in zip(points, points[1:]):
        lo, hi = max(ta, t0), min(tb, t1)
        if hi <= lo or tb <= ta:
            continue
        slope = (xb - xa) / (tb - ta)
        ya, yb = xa + slope * (lo - ta), xa + slope * (hi - ta)
        total += 0.5 * (ya + yb) * (hi - lo)
    return total


def mean_waiting_time(total_queue_integral: float, discharged: float) -> tuple[float, bool]:
    """Little's-law waiting time per vehicle; the flag is set when nothing left the network."""
    if discharged <= 0:
        return 0.0, True
    return total_queue_integral / discharged, False


def time_distance_ratio(free_flow_time: float, waiting: float, vehicle_meters: float) -> tuple[float, bool]:
    """Seconds spent per meter travelled: (free-flow time + queueing time) / distance."""
    if vehicle_meters <= 0:
        return 0.0, True
    return (free_flow_time + waiting) / vehicle_meters, False


@dataclass
class MetricsReport:
    cost: float
    mean_waiting_time: float
    time_distance_ratio: float
    total_queue_integral: float
    discharged: float
    vehicle_meters: float
    shed: float
    no_departures: bool = False
    per_queue: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def report(trace) -> MetricsReport:
    """Metrics of a :class:`~ipatlc.sim.SimTrace`."""
    total = float(np.sum(trace.int_x))
    wait, flag = mean_waiting_time(total, trace.sink_outflow)
    tdr, _ = time_distance_ratio(trace.free_flow_time, total, trace.vehicle_meters)
    per_queue = {
        q: {"mean_content": float(ix) / trace.horizon, "inflow": float(ia), "outflow": float(ib)}
        for q, ix, ia, ib in zip(trace.queue_ids, trace.int_x, trace.int_alpha, trace.int_beta)
    }
    return MetricsReport(
        cost=mean_queue_cost(trace.int_x, trace.weights, trace.horizon),
        mean_waiting_time=wait,
        time_distance_ratio=tdr,
        total_queue_integral=total,
        discharged=trace.sink_outflow,
        vehicle_meters=trace.vehicle_meters,
        shed=float(np.sum(trace.int_shed)),
        no_departures=flag,
        per_queue=per_queue,
    )


def conservation_residual(trace) -> np.ndarray:
    """Per-queue ``inflow - outflow - shed - (x(T) - x(0))``."""
    return trace.int_alpha - trace.int_beta - trace.int_shed - (trace.x_final - trace.x_initial)
