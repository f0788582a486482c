"""Adaptive traffic light control on a fluid queue network with IPA gradients."""

from .controller import FixedPlan, PhaseParams, Region, classify_region, control_decision, webster_plan
from .grid import grid_network, with_od_demand
from .network import NetworkError, NetworkSpec, build_network
from .optimizer import OptimizerConfig, online_loop, project, step
from .scenario import Scenario, ScenarioError, load_scenario
from .sim import SimConfig, SimTrace, Simulator, run, uniform_theta

__all__ = [
    "FixedPlan", "PhaseParams", "Region", "classify_region", "control_decision", "webster_plan",
    "grid_network", "with_od_demand", "NetworkError", "NetworkSpec", "build_network",
    "OptimizerConfig", "online_loop", "project", "step", "Scenario", "ScenarioError",
    "load_scenario", "SimConfig", "SimTrace", "Simulator", "run", "uniform_theta",
]
