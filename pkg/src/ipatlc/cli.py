"""Command-line entry point: ``ipatlc {simulate,optimize,compare-webster,adapt,benchmark}``.

Exit codes: 0 success, 1 invalid input (scenario or arguments), 2 runtime
diagnostic such as optimization divergence or the event cap.
"""

from __future__ import annotations

import argparse
import json
import sys

from .controller import WebsterError
from .demand import Perturbation
from .experiments import adapt, benchmark, compare_webster, optimize, simulate
from .network import NetworkError
from .optimizer import OptimizationDiverged
from .scenario import load_scenario
from .sim import SimulationAborted

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must be non-empty")
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipatlc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=True):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        if seeds:
            p.add_argument("--seed", type=_int_list, default=None, help="seed or comma-separated seeds")
        p.add_argument("--horizon", type=_positive, default=None, help="simulated seconds")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("simulate", help="one run with fixed parameters")
    common(p)

    p = sub.add_parser("optimize", help="online gradient descent on controller parameters")
    common(p)
    p.add_argument("--rho0", type=_float_list, default=None,
                   help="step scale, one value or min,max,threshold")
    p.add_argument("--window", type=_positive, default=None, help="update window in seconds")

    p = sub.add_parser("compare-webster", help="adaptive controller vs Webster fixed cycles")
    common(p)

    p = sub.add_parser("adapt", help="optimization under a temporary demand change")
    common(p)
    p.add_argument("--factor", type=float, default=2.0)
    p.add_argument("--t-on", type=float, default=8000.0)
    p.add_argument("--t-off", type=float, default=20000.0)
    p.add_argument("--group", default="rc", help="OD group to scale (rr, rc, cr, cc)")

    p = sub.add_parser("benchmark", help="IPA CPU time against grid size")
    p.add_argument("--rows", type=_int_list, default=[1])
    p.add_argument("--cols", type=_int_list, default=list(range(2, 11)))
    p.add_argument("--horizon", type=_positive, default=5000.0)
    p.add_argument("--seed", type=_int_list, default=[0])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--demand", type=_float_list, default=[0.02, 0.01, 0.01, 0.01],
                   help="OD group rates rr,rc,cr,cc (proportions when --origin-total is set)")
    p.add_argument("--origin-total", type=float, default=0.05,
                   help="vehicles/s per boundary origin; 0 keeps raw group rates")
    p.add_argument("--out", default="out")
    return parser


def _print(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        if args.command == "benchmark":
            res = benchmark(args.rows, args.cols, args.horizon, args.seed, tuple(args.demand),
                            args.repeats, args.out, args.origin_total or None)
            _print({"fits": res["fits"], "table": res["table"]})
            return EXIT_OK

        scenario = load_scenario(args.scenario)
        seeds = args.seed or list(scenario.seeds)
        if args.command == "simulate":
            results = [simulate(scenario, s, args.horizon, args.out) for s in seeds]
            _print([{k: r[k] for k in ("seed", "cost", "mean_waiting_time", "time_distance_ratio",
                                       "conservation_ok", "events", "log_hash")} for r in results])
            return EXIT_OK
        if args.command == "optimize":
            if args.window is not None:
                scenario.optimizer.window = args.window
            rho0 = None
            if args.rho0 is not None:
                rho0 = tuple(args.rho0) if len(args.rho0) == 3 else (args.rho0[0],) * 3
            res = optimize(scenario, seeds, args.horizon, args.out, rho0=rho0)
            _print({k: res[k] for k in ("initial_waiting_time", "final_waiting_time",
                                        "waiting_time_reduction", "per_seed_reduction", "diverged")})
            return EXIT_RUNTIME if res["diverged"] else EXIT_OK
        if args.command == "compare-webster":
            res = compare_webster(scenario, seeds, args.horizon, args.out)
            _print({"per_seed": res["per_seed"], "adaptive_better_all": res["adaptive_better_all"]})
            return EXIT_OK
        if args.command == "adapt":
            horizon = args.horizon or scenario.horizon
            pert = Perturbation(args.group, args.factor, args.t_on, args.t_off)
            res = adapt(scenario, seeds, pert, horizon, args.out)
            _print({k: v for k, v in res.items() if k != "history"})
            return EXIT_OK
    except (NetworkError, WebsterError, ValueError) as exc:
        lines = getattr(exc, "diagnostics", None) or [str(exc)]
        for line in lines:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationAborted, OptimizationDiverged) as exc:
        print(f"runtime diagnostic: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_INVALID


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
