import math

import numpy as np
import pytest

from ipatlc.demand import constant_process, poisson_rate_trace
from ipatlc.grid import grid_network
from ipatlc.metrics import conservation_residual
from ipatlc.network import build_network
from ipatlc.sim import (SimConfig, SimulationAborted, arrival_rate, delta, departure_rate,
                        front_arrival_time, run, uniform_theta)

from conftest import grid_with_demand, trace_cost


@pytest.mark.parametrize("content, expected", [(20, 20.0), (0, 30.0), (60, 0.0)])
def test_transit_delay(content, expected):
    assert delta(300.0, content, 5.0, 10.0) == pytest.approx(expected)


def test_transit_delay_rejects_overfull_road():
    with pytest.raises(ValueError):
        delta(300.0, 61.0, 5.0, 10.0)


@pytest.mark.parametrize("content, arrival, signal, blocked, expected", [
    (5.0, 0.2, 1, False, 1.3),
    (5.0, 0.2, 0, False, 0.0),
    (3.0, 0.2, 1, True, 0.0),
    (0.0, 0.2, 1, False, 0.2),
    (0.0, 2.0, 1, False, 1.3),
])
def test_departure_rate(content, arrival, signal, blocked, expected):
    assert departure_rate(content, arrival, signal, blocked, 1.3) == pytest.approx(expected)


def test_arrival_rate_superposition():
    assert arrival_rate([(0.5, 1.3)]) == pytest.approx(0.65)
    assert arrival_rate([]) == 0.0
    assert arrival_rate([(0.5, 1.3), (0.25, 0.4)]) == pytest.approx(0.75)


def test_front_meets_growing_queue():
    # age 15 s, free-road delay 20 s, downstream growing at 1.3 veh/s
    t = front_arrival_time(100.0, 85.0, 20.0, 1.3, 300.0, 5.0, 10.0)
    assert t - 100.0 == pytest.approx(5.0 / 1.65)


def test_front_cannot_catch_a_tail_receding_too_fast():
    assert front_arrival_time(0.0, 0.0, 0.0, -3.0, 300.0, 5.0, 10.0) == math.inf


def _single_queue_doc(rate_phase_queues=("a",)):
    return {"network": {
        "intersections": [{"id": "n"}],
        "queues": [{"id": "a", "intersection": "n", "movements": ["W-s"], "downstream": []}],
        "phases": [{"id": "p", "intersection": "n", "queues": list(rate_phase_queues)}],
    }}


def test_undersaturated_pass_through():
    spec = build_network(_single_queue_doc())
    tr = run(spec, [20.0, 40.0, 10.0], constant_process({"a": 0.5}), 1000.0)
    assert tr.x_final[0] == 0.0
    assert tr.int_x[0] == 0.0
    assert tr.sink_outflow == pytest.approx(500.0, rel=1e-12)


def test_zero_demand_only_clock_events():
    spec = grid_network(1, 2)
    tr = run(spec, uniform_theta(spec), constant_process({}), 500.0, SimConfig(record_log=True))
    assert not np.any(tr.int_x)
    kinds = {k for _, k, _, _ in tr.events}
    assert kinds <= {"init", "switch", "R2G", "G2R", "clock", "timer"}


def test_emptying_time_is_linear_root():
    spec = grid_network(1, 1)
    q = "n0_0.S.sr"
    tr = run(spec, uniform_theta(spec), constant_process({q: 0.2}), 400.0, SimConfig(record_log=True))
    checked = 0
    last_r2g = None
    for t, kind, subject, value in tr.events:
        if subject != q:
            continue
        if kind == "R2G" and value > 0:
            last_r2g = (t, value)
        elif kind == "E" and last_r2g is not None:
            t0, x0 = last_r2g
            assert t - t0 == pytest.approx(x0 / (1.3 - 0.2), abs=1e-9)
            checked += 1
            last_r2g = None
    assert checked >= 3


def test_conservation_on_grid_with_poisson_demand():
    spec, od, entry_of = grid_with_demand(2, 3, (0.02, 0.01, 0.02, 0.01))
    horizon = 1000.0
    tr = run(spec, uniform_theta(spec), poisson_rate_trace(od, entry_of, 50.0, horizon, 4), horizon,
             SimConfig(check_invariants=True))
    assert np.max(np.abs(conservation_residual(tr))) <= 1e-9 * horizon
    assert not any(tr.invariant_violations.values())
    # totals: what entered is either discharged, queued, or on a road
    in_network = float(tr.int_alpha[[spec.queue_index(q) for q in spec.entry_queues]].sum())
    assert tr.sink_outflow <= in_network


def test_blocking_reaches_capacity_without_violations():
    spec, od, entry_of = grid_with_demand(1, 2, (0.1, 0.05, 0.05, 0.05), road_length=40.0)
    horizon = 2000.0
    arr = poisson_rate_trace(od, entry_of, 50.0, horizon, 0)
    tr = run(spec, uniform_theta(spec), arr, horizon, SimConfig(check_invariants=True, record_log=True))
    assert any(k == "x_up_c" for _, k, _, _ in tr.events)
    assert not any(tr.invariant_violations.values())
    assert np.max(np.abs(conservation_residual(tr))) <= 1e-9 * horizon


def test_event_cap_aborts():
    spec, od, entry_of = grid_with_demand(1, 1, (0.02, 0.01, 0.01, 0.01))
    arr = poisson_rate_trace(od, entry_of, 50.0, 1000.0, 0)
    with pytest.raises(SimulationAborted):
        run(spec, uniform_theta(spec), arr, 1000.0, SimConfig(event_cap=50))


def test_identical_inputs_give_identical_hash():
    spec, od, entry_of = grid_with_demand(2, 3, (0.02, 0.01, 0.01, 0.01))
    arr = poisson_rate_trace(od, entry_of, 50.0, 800.0, 9)
    a = run(spec, uniform_theta(spec), arr, 800.0)
    b = run(spec, uniform_theta(spec), arr, 800.0)
    c = run(spec, uniform_theta(spec, min_green=15.0), arr, 800.0)
    assert a.log_hash == b.log_hash
    assert a.log_hash != c.log_hash
    assert trace_cost(a) == trace_cost(b)


def test_long_breakpoint_sequence_does_not_stall():
    # breakpoints landing a hair before a clock bound used to reschedule forever
    spec, od, entry_of = grid_with_demand(1, 1, (0.02, 0.01, 0.01, 0.01))
    arr = poisson_rate_trace(od, entry_of, 60.0, 5000.0, 1)
    tr = run(spec, [20.0, 40.0, 10.0] * 4, arr, 5000.0, SimConfig(event_cap=200_000))
    assert tr.horizon == pytest.approx(5000.0)


def test_compression_conserves_vehicles_in_transit():
    spec, od, entry_of = grid_with_demand(2, 3, (0.02, 0.01, 0.01, 0.01))
    horizon = 5000.0
    arr = poisson_rate_trace(od, entry_of, 50.0, horizon, 0)
    on = run(spec, uniform_theta(spec), arr, horizon)
    off = run(spec, uniform_theta(spec), arr, horizon, SimConfig(transit_compression=False))

    def in_transit(tr):
        entered = float(tr.int_alpha[[spec.queue_index(q) for q in spec.entry_queues]].sum())
        return entered - tr.sink_outflow - float(tr.x_final.sum())

    # at most a few road-lengths of traffic is travelling at any moment
    assert 0.0 <= in_transit(on) < 100.0
    assert in_transit(off) > 3 * in_transit(on)
