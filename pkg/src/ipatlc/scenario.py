"""Scenario documents: JSON files bundling network, demand, controller and run settings.

Layout::

    {
      "name": "grid-2x3",
      "grid": {"rows": 2, "cols": 3, "road_length": 300},      # or "network": {...}
      "demand": {"type": "poisson", "groups": [0.02, 0.01, 0.01, 0.01],
                 "bin_width": 50, "perturbation": {...}},      # or "entry_rates"
      "controller": {"type": "ipa-adaptive", "theta": [20, 40, 10]},
      "optimizer": {"rho0": [5, 5, 2], "window": 1000},
      "sim": {"horizon": 40000, "seeds": [0, 1, 2, 3, 4]}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .controller import FixedPlan, webster_plan
from .demand import ArrivalProcess, Perturbation, constant_process, poisson_rate_trace
from .grid import GROUPS, entry_od_map, queue_flows, with_od_demand
from .network import SINK, NetworkError, NetworkSpec, build_network
from .optimizer import OptimizerConfig
from .sim import SimConfig

CONTROLLER_TYPES = ("ipa-adaptive", "webster")
DEMAND_TYPES = ("poisson", "constant")
DEFAULT_BIN_WIDTH = 50.0  # seconds per Poisson count bin


class ScenarioError(NetworkError):
    """Scenario document failed validation; ``diagnostics`` lists every problem."""


@dataclass
class Scenario:
    name: str
    spec: NetworkSpec
    demand_type: str = "poisson"
    group_rates: tuple | None = None
    od_demand: dict | None = None
    entry_rates: dict = field(default_factory=dict)
    bin_width: float = DEFAULT_BIN_WIDTH
    perturbation: Perturbation | None = None
    controller: str = "ipa-adaptive"
    theta0: np.ndarray | None = None
    lost_time: float = 2.0
    webster_min_green: float = 5.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    horizon: float = 1000.0
    seeds: tuple = (0,)

    def arrivals(self, seed: int, horizon: float | None = None,
                 perturbation: Perturbation | None | str = "default") -> ArrivalProcess:
        """Exogenous inflow for one seed; identical for every controller (common random numbers)."""
        horizon = self.horizon if horizon is None else horizon
        pert = self.perturbation if perturbation == "default" else perturbation
        if self.demand_type == "constant":
            return constant_process(self.entry_rates)
        if self.od_demand is not None:
            entry_of = entry_od_map(self.spec, self.od_demand)
            return poisson_rate_trace(self.od_demand, entry_of, self.bin_width, horizon, seed, pert)
        # explicit network: one Poisson stream per entry queue
        keys = {q: q for q in self.entry_rates}
        return poisson_rate_trace(self.entry_rates, keys, self.bin_width, horizon, seed, None)

    def queue_flows(self) -> dict:
        """Mean flow through every queue implied by the base demand."""
        if self.od_demand is not None:
            return queue_flows(self.spec, self.od_demand)[0]
        return propagate_flows(self.spec, self.entry_rates)

    def webster_plans(self) -> dict:
        """Fixed-cycle plan per intersection from base-demand flows."""
        flows = self.queue_flows()
        plans = {}
        for node in self.spec.intersections:
            if len(node.phases) < 2:
                continue
            phase_flows = [[flows[q] for q in self.spec.phase(p).queues] for p in node.phases]
            plans[node.id] = webster_plan(phase_flows, self._saturation(node), self.lost_time,
                                          self.webster_min_green)
        return plans

    def _saturation(self, node) -> float:
        return min(self.spec.queue(q).departure_rate for q in node.queues)

    def initial_theta(self) -> np.ndarray:
        return np.array(self.theta0, dtype=float)


def propagate_flows(spec: NetworkSpec, entry_rates: Mapping) -> dict:
    """Solve ``flow = entry + Gamma^T flow`` for per-queue mean flows."""
    n = len(spec.queues)
    gam = np.zeros((n, n))
    for i, q in enumerate(spec.queues):
        for d, share in spec.turn_ratios.get(q.id, {}).items():
            if d != SINK:
                gam[i, spec.queue_index(d)] = share
    rhs = np.array([float(entry_rates.get(q.id, 0.0)) for q in spec.queues])
    flows = np.linalg.solve(np.eye(n) - gam.T, rhs)
    return {q.id: float(v) for q, v in zip(spec.queues, flows)}


def _theta_vector(spec: NetworkSpec, raw, diags: list) -> np.ndarray | None:
    """Accept one triple for every phase, a flat vector, or ``{phase_id: triple}``."""
    n = len(spec.phases)
    if isinstance(raw, Mapping):
        out = np.tile([20.0, 40.0, 10.0], n)
        for pid, triple in raw.items():
            try:
                k = spec.phase_index(pid)
            except KeyError:
                diags.append(f"theta names unknown phase {pid!r}")
                continue
            out[3 * k:3 * k + 3] = triple
        vec = out
    else:
        vec = np.asarray(raw, dtype=float).reshape(-1)
        if vec.size == 3:
            vec = np.tile(vec, n)
        elif vec.size != 3 * n:
            diags.append(f"theta has {vec.size} entries; expected 3 or {3 * n}")
            return None
    trip = vec.reshape(-1, 3)
    if np.any(trip < 0) or np.any(trip[:, 1] < trip[:, 0]):
        diags.append("theta violates 0 <= min green <= max green and threshold >= 0")
    return vec


def load_scenario(source) -> Scenario:
    """Parse a scenario from a path, JSON string or already-decoded mapping."""
    if isinstance(source, Mapping):
        doc = dict(source)
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError([f"cannot read scenario {source}: {exc}"]) from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError([f"{source}: invalid JSON ({exc})"]) from None
    if not isinstance(doc, Mapping):
        raise ScenarioError(["scenario root must be an object"])

    spec = build_network(doc)
    diags: list[str] = []
    name = str(doc.get("name", "scenario"))

    dem = doc.get("demand", {})
    demand_type = dem.get("type", "poisson")
    if demand_type not in DEMAND_TYPES:
        diags.append(f"demand type must be one of {DEMAND_TYPES}, got {demand_type!r}")
    group_rates = od_demand = None
    entry_rates: dict = {}
    if "groups" in dem:
        if spec.grid is None:
            diags.append("demand 'groups' needs a grid network")
        else:
            group_rates = tuple(float(v) for v in dem["groups"])
            if len(group_rates) != len(GROUPS) or any(v < 0 for v in group_rates):
                diags.append(f"demand groups need {len(GROUPS)} nonnegative rates {GROUPS}")
            else:
                spec, od_demand = with_od_demand(spec, group_rates)
                for od, q in entry_od_map(spec, od_demand).items():
                    entry_rates[q] = entry_rates.get(q, 0.0) + od_demand[od]
    else:
        for q, r in dem.get("entry_rates", {}).items():
            if q not in {e for e in spec.entry_queues}:
                diags.append(f"entry rate given for non-entry queue {q!r}")
            elif float(r) < 0:
                diags.append(f"negative entry rate for {q!r}")
            else:
                entry_rates[q] = float(r)
    bin_width = float(dem.get("bin_width", DEFAULT_BIN_WIDTH))
    if not bin_width > 0:
        diags.append("demand bin_width must be positive")
    pert = None
    if dem.get("perturbation"):
        p = dem["perturbation"]
        try:
            pert = Perturbation(str(p.get("group", "rc")), float(p.get("factor", 2.0)),
                                float(p["start"]), float(p["end"]))
        except (KeyError, TypeError, ValueError):
            diags.append("perturbation needs numeric 'start' and 'end'")
        else:
            if pert.group not in GROUPS:
                diags.append(f"perturbation group must be one of {GROUPS}")
            if not pert.start < pert.end:
                diags.append("perturbation start must precede end")
            if pert.factor < 0:
                diags.append("perturbation factor must be nonnegative")

    ctl = doc.get("controller", {})
    controller = ctl.get("type", "ipa-adaptive")
    if controller not in CONTROLLER_TYPES:
        diags.append(f"controller type must be one of {CONTROLLER_TYPES}, got {controller!r}")
    theta0 = _theta_vector(spec, ctl.get("theta", [20.0, 40.0, 10.0]), diags)

    opt = doc.get("optimizer", {})
    try:
        ocfg = OptimizerConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in opt.items()})
    except (TypeError, ValueError) as exc:
        diags.append(f"optimizer: {exc}")
        ocfg = OptimizerConfig()

    simdoc = doc.get("sim", {})
    horizon = float(simdoc.get("horizon", 1000.0))
    if not horizon > 0:
        diags.append("sim horizon must be positive")
    seeds = simdoc.get("seeds", [simdoc.get("seed", 0)])
    if not seeds:
        diags.append("seed list must be non-empty")
    scfg = SimConfig(
        horizon=horizon,
        rate_estimator=simdoc.get("rate_estimator", "exact"),
        estimator_window=float(simdoc.get("estimator_window", 50.0)),
        idle_hold=ctl.get("idle_hold", "min_green"),
        event_cap=int(simdoc.get("event_cap", 10_000_000)),
    )
    if not (scfg.idle_hold in ("min_green", None)
            or (isinstance(scfg.idle_hold, (int, float)) and scfg.idle_hold > 0)):
        diags.append("controller idle_hold must be 'min_green', null or a positive number of seconds")
    if scfg.rate_estimator not in ("exact", "window"):
        diags.append("sim rate_estimator must be 'exact' or 'window'")
    if diags:
        raise ScenarioError(diags)
    return Scenario(
        name=name, spec=spec, demand_type=demand_type, group_rates=group_rates,
        od_demand=od_demand, entry_rates=entry_rates, bin_width=bin_width, perturbation=pert,
        controller=controller, theta0=theta0,
        lost_time=float(ctl.get("lost_time", 2.0)),
        webster_min_green=float(ctl.get("webster_min_green", 5.0)),
        optimizer=ocfg, sim=scfg, horizon=horizon, seeds=tuple(int(s) for s in seeds),
    )


def webster_equivalent(plan: FixedPlan) -> dict:
    return {"cycle": plan.cycle, "greens": list(plan.greens), "lost_time": plan.lost_time}
