"""Experiment harnesses behind the command-line tool.

Every harness is deterministic given (scenario, seed).  Independent seeds run
on a process pool whose size comes from ``IPATLC_WORKERS`` (default 1);
results are always collected in seed order.
"""

from __future__ import annotations

import csv
import gc
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from .demand import Perturbation, poisson_rate_trace
from .grid import entry_od_map, grid_network, with_od_demand
from .ipa import COMPONENTS
from .metrics import conservation_residual, report
from .optimizer import online_loop
from .scenario import DEFAULT_BIN_WIDTH, Scenario
from .sim import SimConfig, Simulator, run, uniform_theta

WORKERS_ENV = "IPATLC_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def map_seeds(fn, items):
    """``[fn(x) for x in items]``, on a process pool when more than one worker is configured."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# --- output helpers -----------------------------------------------------------

def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


def gradient_dump(spec, gradient) -> dict:
    """``{"intersection/phase/component": dL/dtheta}`` for one window."""
    out = {}
    for k, p in enumerate(spec.phases):
        for c, name in enumerate(COMPONENTS):
            out[f"{p.intersection}/{p.id}/{name}"] = float(gradient[3 * k + c])
    return out


# --- simulate -----------------------------------------------------------------

def simulate(scenario: Scenario, seed: int, horizon: float | None = None, out_dir=None) -> dict:
    """One run with fixed parameters (or Webster plans); writes log, trajectories and metrics."""
    horizon = horizon or scenario.horizon
    plans = scenario.webster_plans() if scenario.controller == "webster" else None
    cfg = replace(scenario.sim, horizon=horizon, record_log=True, record_trajectories=True,
                  check_invariants=True)
    trace = run(scenario.spec, scenario.initial_theta(), scenario.arrivals(seed, horizon), horizon, cfg, plans)
    rep = report(trace)
    resid = conservation_residual(trace)
    metrics = rep.to_dict()
    metrics.update(
        scenario=scenario.name, seed=seed, horizon=horizon, events=trace.event_count,
        log_hash=trace.log_hash,
        conservation_max_residual=float(np.max(np.abs(resid))) if resid.size else 0.0,
        conservation_ok=bool(np.all(np.abs(resid) <= 1e-9 * horizon)),
        invariant_violations=trace.invariant_violations,
        reset_violations=trace.reset_violations,
        diagnostics=trace.diagnostics,
    )
    if trace.gradient is not None:
        metrics["gradient"] = gradient_dump(scenario.spec, trace.gradient)
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / f"events_seed{seed}.csv",
                  [{"time": t, "kind": k, "subject": s, "value": v} for t, k, s, v in trace.events],
                  ["time", "kind", "subject", "value"])
        write_csv(out / f"trajectories_seed{seed}.csv",
                  [{"queue": q, "time": t, "content": x}
                   for q, pts in trace.trajectories.items() for t, x in pts],
                  ["queue", "time", "content"])
        write_json(out / f"metrics_seed{seed}.json", metrics)
    return metrics


# --- optimize -----------------------------------------------------------------

HISTORY_COLUMNS = ["iteration", "start", "end", "window_cost", "mean_waiting_time", "time_distance_ratio"]


def _history_rows(result) -> list[dict]:
    return [h.row() for h in result.history]


def _optimize_one(args) -> dict:
    scenario, seed, horizon, ocfg, perturbation = args
    arrivals = scenario.arrivals(seed, horizon, perturbation)
    res = online_loop(scenario.spec, arrivals, scenario.initial_theta(), ocfg, horizon,
                      replace(scenario.sim), raise_on_divergence=False)
    return {
        "seed": seed, "rows": _history_rows(res), "theta": res.theta.tolist(),
        "gradients": [gradient_dump(scenario.spec, h.gradient) for h in res.history],
        "diverged": res.diverged, "diagnostics": res.diagnostics, "events": res.events,
        "log_hash": res.log_hash,
    }


def reduction(waits) -> float:
    """Fractional waiting-time drop from the first window to the mean of the last five."""
    waits = np.asarray(waits, dtype=float)
    if waits.size == 0 or waits[0] <= 0:
        return 0.0
    return float(1.0 - waits[-5:].mean() / waits[0])


def optimize(scenario: Scenario, seeds, horizon: float | None = None, out_dir=None,
             rho0=None, perturbation: Perturbation | None | str = "default") -> dict:
    """Online optimization per seed; history CSV per seed plus a seed-averaged summary."""
    horizon = horizon or scenario.horizon
    ocfg = scenario.optimizer if rho0 is None else replace(scenario.optimizer, rho0=rho0)
    runs = map_seeds(_optimize_one, [(scenario, s, horizon, ocfg, perturbation) for s in seeds])
    columns = HISTORY_COLUMNS + [f"theta_{k}" for k in range(3 * len(scenario.spec.phases))]
    n_win = min(len(r["rows"]) for r in runs)
    avg = []
    for k in range(n_win):
        avg.append({
            "iteration": k + 1,
            "window_cost": float(np.mean([r["rows"][k]["window_cost"] for r in runs])),
            "mean_waiting_time": float(np.mean([r["rows"][k]["mean_waiting_time"] for r in runs])),
            "time_distance_ratio": float(np.mean([r["rows"][k]["time_distance_ratio"] for r in runs])),
        })
    waits = [a["mean_waiting_time"] for a in avg]
    summary = {
        "scenario": scenario.name, "seeds": list(seeds), "horizon": horizon,
        "windows": n_win, "initial_waiting_time": waits[0] if waits else 0.0,
        "final_waiting_time": float(np.mean(waits[-5:])) if waits else 0.0,
        "waiting_time_reduction": reduction(waits),
        "per_seed_reduction": {r["seed"]: reduction([x["mean_waiting_time"] for x in r["rows"]]) for r in runs},
        "diverged": [r["seed"] for r in runs if r["diverged"]],
        "final_theta": {r["seed"]: r["theta"] for r in runs},
    }
    if out_dir is not None:
        out = Path(out_dir)
        for r in runs:
            write_csv(out / f"history_seed{r['seed']}.csv", r["rows"], columns)
            write_json(out / f"gradients_seed{r['seed']}.json", r["gradients"])
        write_csv(out / "summary.csv", avg, ["iteration", "window_cost", "mean_waiting_time", "time_distance_ratio"])
        write_json(out / "summary.json", summary)
    summary["runs"] = runs
    summary["average"] = avg
    return summary


# --- Webster comparison -------------------------------------------------------

def windowed_run(spec, theta, arrivals, horizon: float, window: float, sim_config: SimConfig,
                 plans=None) -> list[dict]:
    """Per-window summaries of a run with frozen parameters (or fixed plans)."""
    cfg = replace(sim_config, horizon=horizon, with_ipa=False)
    sim = Simulator(spec, theta, arrivals, cfg, plans)
    rows = []
    k = 1
    while k * window <= horizon + 1e-9:
        sim.advance(k * window)
        s = sim.window_summary()
        rows.append({"iteration": k, "window_cost": s["cost"], "mean_waiting_time": s["waiting_time"]})
        k += 1
    return rows


def _webster_one(args) -> dict:
    scenario, seed, horizon, plans = args
    rows = windowed_run(scenario.spec, scenario.initial_theta(), scenario.arrivals(seed, horizon),
                        horizon, scenario.optimizer.window, scenario.sim, plans)
    return {"seed": seed, "rows": rows}


def compare_webster(scenario: Scenario, seeds, horizon: float | None = None, out_dir=None,
                    tail: int = 5) -> dict:
    """Adaptive optimization and Webster fixed cycles on the same arrival traces."""
    horizon = horizon or scenario.horizon
    plans = scenario.webster_plans()
    adaptive = optimize(scenario, seeds, horizon)
    fixed = map_seeds(_webster_one, [(scenario, s, horizon, plans) for s in seeds])
    paired, per_seed = [], {}
    for a, w in zip(adaptive["runs"], fixed):
        for ra, rw in zip(a["rows"], w["rows"]):
            paired.append({
                "seed": a["seed"], "iteration": ra["iteration"],
                "adaptive_waiting_time": ra["mean_waiting_time"],
                "webster_waiting_time": rw["mean_waiting_time"],
                "adaptive_cost": ra["window_cost"], "webster_cost": rw["window_cost"],
            })
        aw = float(np.mean([r["mean_waiting_time"] for r in a["rows"][-tail:]]))
        ww = float(np.mean([r["mean_waiting_time"] for r in w["rows"][-tail:]]))
        per_seed[a["seed"]] = {"adaptive": aw, "webster": ww, "adaptive_better": aw < ww}
    summary = {
        "scenario": scenario.name, "seeds": list(seeds), "horizon": horizon,
        "webster_plans": {n: {"cycle": p.cycle, "greens": list(p.greens), "lost_time": p.lost_time}
                          for n, p in plans.items()},
        "per_seed": per_seed,
        "adaptive_better_all": all(v["adaptive_better"] for v in per_seed.values()),
    }
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "paired.csv", paired, ["seed", "iteration", "adaptive_waiting_time",
                                               "webster_waiting_time", "adaptive_cost", "webster_cost"])
        write_json(out / "comparison.json", summary)
    summary["paired"] = paired
    return summary


# --- adaptivity ---------------------------------------------------------------

def _rolling(values, width: int = 3) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size < width:
        return v
    return np.convolve(v, np.ones(width) / width, mode="valid")


def adapt_summary(costs, window: float, t_on: float, t_off: float, recovery_windows: int = 10) -> dict:
    """Pre-onset level, post-onset peak and post-revert recovery of a windowed cost series.

    Window ``k`` (1-based) covers ``[(k-1) w, k w)``.  Levels use 3-window
    rolling means to damp per-window noise.
    """
    costs = np.asarray(costs, dtype=float)
    on = int(round(t_on / window))
    off = int(round(t_off / window))
    pre = float(np.mean(costs[max(0, on - 3):on])) if on > 0 else float("nan")
    during = costs[on:min(off, costs.size)]
    peak = float(_rolling(during).max()) if during.size else float("nan")
    after = costs[off:off + recovery_windows]
    recovered_level = float(_rolling(after).min()) if after.size else float("nan")
    no_recovery = off >= costs.size
    return {
        "pre_level": pre,
        "peak_level": peak,
        "rise": peak / pre - 1.0 if pre > 0 else float("nan"),
        "post_revert_level": recovered_level,
        "recovery_gap": recovered_level / pre - 1.0 if pre > 0 and not no_recovery else float("nan"),
        "no_recovery_segment": no_recovery,
    }


def adapt(scenario: Scenario, seeds, perturbation: Perturbation, horizon: float | None = None,
          out_dir=None) -> dict:
    """Optimization under a temporary demand change; history carries perturbation markers."""
    horizon = horizon or scenario.horizon
    if not perturbation.start < perturbation.end:
        raise ValueError("perturbation start must precede its end")
    if perturbation.end > horizon:
        raise ValueError("perturbation end lies beyond the horizon")
    res = optimize(scenario, seeds, horizon, perturbation=perturbation)
    window = scenario.optimizer.window
    rows = []
    for a in res["average"]:
        t0, t1 = (a["iteration"] - 1) * window, a["iteration"] * window
        rows.append({**a, "perturbed": int(t0 < perturbation.end and t1 > perturbation.start)})
    summary = adapt_summary([a["window_cost"] for a in res["average"]], window,
                            perturbation.start, perturbation.end)
    summary.update(scenario=scenario.name, seeds=list(seeds), horizon=horizon,
                   perturbation={"group": perturbation.group, "factor": perturbation.factor,
                                 "start": perturbation.start, "end": perturbation.end})
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "adapt_history.csv", rows,
                  ["iteration", "window_cost", "mean_waiting_time", "time_distance_ratio", "perturbed"])
        write_json(out / "adapt_summary.json", summary)
    summary["history"] = rows
    return summary


# --- benchmark ----------------------------------------------------------------

def _lockstep_ipa_time(spec, theta, arrivals, horizon, chunk: float = 100.0) -> tuple[float, int]:
    """CPU seconds spent on IPA: a run with IPA minus the same run without it.

    Both simulators advance in alternating short chunks so they see the same
    machine speed; whole-run differences drown in speed drift.
    """
    plain = Simulator(spec, theta, arrivals, SimConfig(horizon=horizon, with_ipa=False))
    with_ipa = Simulator(spec, theta, arrivals, SimConfig(horizon=horizon, with_ipa=True))
    extra = 0.0
    gc.collect()
    gc.disable()  # collector pauses land at random and swamp the IPA share
    try:
        for t_end in np.append(np.arange(chunk, horizon, chunk), horizon):
            start = time.process_time()
            plain.advance(t_end)
            mid = time.process_time()
            with_ipa.advance(t_end)
            extra += (time.process_time() - mid) - (mid - start)
    finally:
        gc.enable()
    return extra, plain.events


def benchmark(rows_list, cols_list, horizon: float = 1000.0, seeds=(0,),
              group_rates=(0.02, 0.01, 0.01, 0.01), repeats: int = 3, out_dir=None,
              origin_total: float | None = 0.05) -> dict:
    """IPA cost per grid size: lockstep CPU time with IPA minus without, median over ``repeats``.

    Rows of the table are (m, n, mean seconds, events processed). Each boundary
    origin emits ``origin_total`` vehicles/s so load per intersection is steady;
    pass None to use the raw group rates, whose total grows with the square of
    the boundary size.
    """
    table = []
    for m in rows_list:
        for n in cols_list:
            if m < 1 or n < 1:
                raise ValueError("grid sizes must be at least 1")
            spec, od = with_od_demand(grid_network(m, n), group_rates, origin_total)
            theta = uniform_theta(spec)
            diffs, events = [], []
            for seed in seeds:
                arr = poisson_rate_trace(od, entry_od_map(spec, od), DEFAULT_BIN_WIDTH, horizon, seed)
                runs = [_lockstep_ipa_time(spec, theta, arr, horizon) for _ in range(repeats)]
                diffs.append(max(float(np.median([r[0] for r in runs])), 0.0))
                n_events = runs[0][1]
                events.append(n_events)
            table.append({"m": m, "n": n, "ipa_seconds": float(np.mean(diffs)),
                          "events": float(np.mean(events))})
    fits = {}
    for m in rows_list:
        sub = [r for r in table if r["m"] == m]
        if len(sub) >= 3:
            xs = [r["n"] for r in sub]
            fit = stats.linregress(xs, [r["ipa_seconds"] for r in sub])
            efit = stats.linregress(xs, [r["events"] for r in sub])
            fits[m] = {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.rvalue ** 2,
                       "events_r_squared": efit.rvalue ** 2}
    summary = {"horizon": horizon, "seeds": list(seeds), "origin_total": origin_total, "fits": fits}
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "benchmark.csv", table, ["m", "n", "ipa_seconds", "events"])
        write_json(out / "benchmark_fit.json", summary)
    summary["table"] = table
    return summary
