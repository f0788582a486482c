from pathlib import Path

import numpy as np
import pytest

from ipatlc.demand import constant_process
from ipatlc.grid import entry_od_map, grid_network, with_od_demand
from ipatlc.scenario import load_scenario

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def scenario_path(name: str) -> Path:
    return SCENARIOS / f"{name}.json"


def grid_with_demand(rows, cols, groups, **kw):
    spec, od = with_od_demand(grid_network(rows, cols, **kw), groups)
    return spec, od, entry_od_map(spec, od)


def constant_entry_demand(spec, od, entry_of):
    rates = {}
    for pair, q in entry_of.items():
        rates[q] = rates.get(q, 0.0) + od[pair]
    return constant_process(rates)


def trace_cost(trace) -> float:
    return float(trace.weights @ trace.int_x) / trace.horizon


@pytest.fixture(scope="session")
def two_intersection():
    return load_scenario(scenario_path("two_intersection"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
