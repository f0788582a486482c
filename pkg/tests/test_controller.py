import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipatlc.controller import (PhaseParams, Region, WebsterError, classify_region, control_decision,
                               queue_signal, webster_plan)
from ipatlc.demand import constant_process
from ipatlc.grid import grid_network
from ipatlc.sim import SimConfig, run, uniform_theta

# region predicates written out independently of classify_region
PREDICATES = {
    Region.X0: lambda x, y, s: x == 0 and y == 0,
    Region.X1: lambda x, y, s: x > 0 and y == 0,
    Region.X2: lambda x, y, s: x == 0 and y > 0,
    Region.X3: lambda x, y, s: 0 < x < s and 0 < y < s,
    Region.X4: lambda x, y, s: 0 < x < s and y >= s,
    Region.X5: lambda x, y, s: x >= s and 0 < y < s,
    Region.X6: lambda x, y, s: x >= s and y >= s and x > 0 and y > 0,
}


def _unique_region(x, y, s):
    hits = [r for r, pred in PREDICATES.items() if pred(x, y, s)]
    assert len(hits) == 1, (x, y, s, hits)
    return hits[0]


@pytest.mark.parametrize("x, y, s, expected", [
    (0, 0, 10, Region.X0),
    (5, 12, 10, Region.X4),
    (10, 10, 10, Region.X6),
    (3, 0, 10, Region.X1),
    (0, 3, 10, Region.X2),
    (3, 4, 10, Region.X3),
    (12, 4, 10, Region.X5),
])
def test_classify_examples(x, y, s, expected):
    assert classify_region(x, y, s) == expected


def test_partition_exhaustive_boundary_grid():
    for s in (0.0, 1e-9, 2.5, 10.0):
        values = sorted({0.0, 1e-12, s / 2, s, np.nextafter(s, 0.0), np.nextafter(s, 1e9), 2 * s + 1, 50.0})
        for x, y in itertools.product(values, repeat=2):
            assert classify_region(x, y, s) == _unique_region(x, y, s)


@settings(max_examples=500, deadline=None)
@given(st.floats(0, 100, allow_nan=False), st.floats(0, 100, allow_nan=False), st.floats(0, 50, allow_nan=False))
def test_partition_property(x, y, s):
    assert classify_region(x, y, s) == _unique_region(x, y, s)


PARAMS = PhaseParams(20.0, 40.0, 10.0)


@pytest.mark.parametrize("region, clock, expected", [
    (Region.X2, 5.0, 0),
    (Region.X4, 15.0, 1),
    (Region.X3, 40.0, 0),
    (Region.X1, 1000.0, 1),
    (Region.X4, 20.0, 0),
    (Region.X6, 39.9, 1),
])
def test_decision_examples(region, clock, expected):
    assert control_decision(region, clock, PARAMS) == expected


def test_idle_hold_keeps_empty_phase_until_hold():
    assert control_decision(Region.X2, 5.0, PARAMS, idle_hold=20.0) == 1
    assert control_decision(Region.X2, 20.0, PARAMS, idle_hold=20.0) == 0


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(list(Region)), st.floats(0, 200), st.floats(0, 60), st.floats(0, 60))
def test_decision_respects_bounds(region, clock, lo, extra):
    p = PhaseParams(lo, lo + extra, 5.0)
    u = control_decision(region, clock, p)
    if region in (Region.X0, Region.X3, Region.X5, Region.X6) and clock >= p.max_green:
        assert u == 0
    if region == Region.X4 and 0 < clock < p.min_green:
        assert u == 1


def test_queue_signal():
    phases = {"p1": {"a", "b"}, "p2": {"b", "c"}}
    assert queue_signal(phases, "p1", "a") == 1
    assert queue_signal(phases, "p2", "a") == 0
    # shared queue stays green across the switch
    assert queue_signal(phases, "p1", "b") == queue_signal(phases, "p2", "b") == 1
    assert queue_signal(phases, "p2", "u", permanent_green={"u"}) == 1


def test_webster_symmetric_example():
    plan = webster_plan([[0.13], [0.13], [0.13], [0.13]], 1.3, 2.0)
    assert plan.cycle == pytest.approx(17.0 / 0.6)
    assert len(set(round(g, 12) for g in plan.greens)) == 1
    assert sum(plan.durations) == pytest.approx(plan.cycle)


def test_webster_rejects_saturation():
    with pytest.raises(WebsterError, match="demand exceeds capacity"):
        webster_plan([[0.65], [0.65]], 1.3, 2.0)


def test_webster_zero_demand_phase_gets_floor():
    plan = webster_plan([[0.3], [0.0], [0.2], [0.1]], 1.3, 2.0, min_green=5.0)
    assert plan.greens[1] == 5.0
    assert min(plan.greens) >= 5.0


def test_webster_schedule_is_periodic_in_simulation():
    spec = grid_network(1, 1)
    plan = webster_plan([[0.1], [0.05], [0.1], [0.05]], 1.3, 2.0)
    tr = run(spec, uniform_theta(spec), constant_process({"n0_0.W.sr": 0.1, "n0_0.S.sr": 0.1}), 600.0,
             SimConfig(record_log=True), plans={"n0_0": plan})
    switches = [(t, subj) for t, kind, subj, _ in tr.events if kind == "switch"]
    gaps = np.diff([t for t, _ in switches])
    k = len(plan.durations)
    assert len(gaps) > 3 * k
    assert np.allclose(gaps[k:], gaps[:-k], atol=1e-9)
    assert sorted(np.round(gaps[:k], 9)) == sorted(np.round(plan.durations, 9))
    assert gaps[:k].sum() == pytest.approx(plan.cycle)
    assert [s for _, s in switches[:k]] == [s for _, s in switches[k:2 * k]]
