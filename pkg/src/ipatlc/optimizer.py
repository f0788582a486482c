"""Online projected gradient descent on controller parameters.

One long sample path is split into update windows.  At each window boundary
the window's IPA gradient drives a projected step and the simulation
continues from its current state with the new parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sim import SimConfig, Simulator

# default step scales per component class (min green, max green, threshold)
DEFAULT_RHO0 = (5.0, 5.0, 2.0)


class OptimizationDiverged(RuntimeError):
    pass


def project(theta, floor=(0.0, 0.0, 0.0), ceiling=(np.inf, np.inf, np.inf)) -> np.ndarray:
    """Clamp each ``[min, max, threshold]`` triple into the feasible set.

    Components are clipped to ``[floor, ceiling]`` (floors never below 0), then
    max green is raised to min green when it falls below it.
    """
    th = np.array(theta, dtype=float).reshape(-1, 3)
    lo = np.maximum(np.asarray(floor, dtype=float), 0.0)
    th = np.clip(th, lo, np.asarray(ceiling, dtype=float))
    th[:, 1] = np.maximum(th[:, 1], th[:, 0])
    return th.reshape(-1)


def step_size(rho0, iteration: int) -> np.ndarray:
    """``rho0 / sqrt(l)`` for iteration ``l >= 1``."""
    return np.asarray(rho0, dtype=float) / np.sqrt(iteration)


def step(theta, gradient, rho, floor=(0.0, 0.0, 0.0), ceiling=(np.inf, np.inf, np.inf)) -> np.ndarray:
    """One projected descent step; ``rho`` may be a scalar or one value per component class."""
    th = np.array(theta, dtype=float).reshape(-1, 3)
    g = np.asarray(gradient, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient has non-finite entries")
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (3,))
    return project((th - rho * g).reshape(-1), floor, ceiling)


@dataclass
class OptimizerConfig:
    rho0: tuple = DEFAULT_RHO0
    window: float = 1000.0
    max_iterations: int | None = None
    floor: tuple = (1.0, 1.0, 0.0)
    ceiling: tuple = (np.inf, np.inf, np.inf)
    carry_derivatives: bool = False
    divergence_factor: float = 10.0
    divergence_patience: int = 5

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be positive")
        if any(r < 0 for r in np.atleast_1d(self.rho0)):
            raise ValueError("step sizes must be nonnegative")


@dataclass
class IterationRecord:
    iteration: int
    start: float
    end: float
    theta_before: np.ndarray
    theta_after: np.ndarray
    gradient: np.ndarray
    cost: float
    waiting_time: float
    time_distance_ratio: float
    int_x: float
    discharged: float

    def row(self) -> dict:
        out = {
            "iteration": self.iteration, "start": self.start, "end": self.end,
            "window_cost": self.cost, "mean_waiting_time": self.waiting_time,
            "time_distance_ratio": self.time_distance_ratio,
        }
        for k, v in enumerate(self.theta_before):
            out[f"theta_{k}"] = float(v)
        return out


@dataclass
class OptimizationResult:
    history: list = field(default_factory=list)
    theta: np.ndarray | None = None
    diverged: bool = False
    diagnostics: list = field(default_factory=list)
    events: int = 0
    log_hash: str = ""


def online_loop(spec, arrivals, theta0, config: OptimizerConfig, horizon: float,
                sim_config: SimConfig | None = None, plans: dict | None = None,
                raise_on_divergence: bool = False) -> OptimizationResult:
    """Run one sample path over ``horizon`` updating theta at every window boundary.

    With ``plans`` given the listed intersections run fixed cycles and the
    loop only records window metrics (their parameters have no effect).
    """
    if horizon < config.window:
        raise ValueError("horizon shorter than one window")
    cfg = sim_config or SimConfig()
    cfg.with_ipa = True
    cfg.horizon = horizon
    theta = project(theta0, config.floor, config.ceiling)
    sim = Simulator(spec, theta, arrivals, cfg, plans)
    result = OptimizationResult()
    n_windows = int(np.floor(horizon / config.window + 1e-9))
    if config.max_iterations is not None:
        n_windows = min(n_windows, config.max_iterations)
    first_cost = None
    streak = 0
    for it in range(1, n_windows + 1):
        sim.advance(it * config.window)
        summary = sim.window_summary()
        grad = summary["gradient"]
        tdr = (summary["free_flow_time"] + summary["int_x"]) / summary["vehicle_meters"] \
            if summary["vehicle_meters"] > 0 else 0.0
        new_theta = step(theta, grad, step_size(config.rho0, it), config.floor, config.ceiling)
        result.history.append(IterationRecord(
            iteration=it, start=summary["start"], end=summary["end"],
            theta_before=theta.copy(), theta_after=new_theta.copy(), gradient=np.asarray(grad).copy(),
            cost=float(summary["cost"]), waiting_time=float(summary["waiting_time"]),
            time_distance_ratio=float(tdr),
            int_x=summary["int_x"], discharged=summary["discharged"],
        ))
        if first_cost is None:
            first_cost = summary["cost"]
        if first_cost > 0 and summary["cost"] > config.divergence_factor * first_cost:
            streak += 1
        else:
            streak = 0
        if streak >= config.divergence_patience:
            msg = (f"window cost above {config.divergence_factor}x the initial cost for "
                   f"{streak} consecutive windows (iteration {it})")
            result.diverged = True
            result.diagnostics.append(msg)
            if raise_on_divergence:
                raise OptimizationDiverged(msg)
            break
        if not np.array_equal(new_theta, theta):
            theta = new_theta
            sim.set_theta(theta)
        if not config.carry_derivatives:
            sim.xp[:] = 0.0
            for a in sim.act_tau:
                a[:] = 0.0
    result.theta = theta
    result.diagnostics.extend(sim.diagnostics)
    result.events = sim.events
    result.log_hash = sim.hasher.hexdigest()
    return result
