"""Command-line entry points.

    unsatflow run <config> [--out-dir DIR] [--snapshots N]
    unsatflow sweep <config> --levels 12:0.02,25:0.01,50:0.005 [--workers W]
    unsatflow strategy <A|B|C> <config> [--out-dir DIR]

Sweep levels are comma-separated `nx:dt` pairs; omit nx (`:dt`) to keep
the base mesh and refine the time step only.
"""

from __future__ import annotations

import argparse
import sys

from . import verification as ver
from .config import ConfigError, parse_config_file
from .scenario import run_convergence_sweep, run_fertigation_strategy, run_scenario

__all__ = ["main"]


def _parse_levels(text):
    levels = []
    for item in text.split(","):
        item = item.strip()
        if ":" not in item:
            raise ConfigError(f"--levels entries must be nx:dt, got {item!r}")
        nx_s, dt_s = item.split(":", 1)
        nx = int(nx_s) if nx_s else None
        levels.append((nx, float(dt_s)))
    return levels


def _add_common(sub):
    sub.add_argument("config", help="scenario configuration file")
    sub.add_argument("--out-dir", default=None, help="artifact directory")
    sub.add_argument("--snapshots", type=int, default=None,
                     help="override number of VTK snapshots")
    sub.add_argument("--seedless", action="store_true",
                     help="reserved; the solver uses no randomness")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="unsatflow",
        description="2D unsaturated flow and solute transport simulator")
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="run one scenario")
    _add_common(run_p)

    sweep_p = subs.add_parser("sweep", help="run a convergence sweep")
    _add_common(sweep_p)
    sweep_p.add_argument("--levels", required=True,
                         help="comma-separated nx:dt refinement levels")
    sweep_p.add_argument("--workers", type=int, default=1,
                         help="parallel worker processes")

    strat_p = subs.add_parser("strategy", help="run a fertigation strategy")
    strat_p.add_argument("letter", choices=["A", "B", "C"])
    _add_common(strat_p)

    args = parser.parse_args(argv)
    try:
        cfg = parse_config_file(args.config)
        if args.snapshots is not None:
            cfg.snapshots = args.snapshots

        if args.command == "run":
            res = run_scenario(cfg, out_dir=args.out_dir)
            _summarize(res)
        elif args.command == "sweep":
            levels = _parse_levels(args.levels)
            reports, results = run_convergence_sweep(
                cfg, levels, out_dir=args.out_dir, workers=args.workers)
            sys.stdout.write(ver.metrics_csv_text(reports))
            for res in results:
                _summarize(res, quiet=True)
        else:
            res = run_fertigation_strategy(args.letter, cfg,
                                           out_dir=args.out_dir)
            _summarize(res)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # solver/step failures: report and signal
        print(f"run failed: {err}", file=sys.stderr)
        return 1
    return 0


def _summarize(res, quiet=False):
    cfg = res.config
    print(f"{cfg.name}: {cfg.n_steps} steps, "
          f"{res.flow_solves} flow solves, "
          f"wall {res.wall_time_loop:.2f}s, "
          f"S in [{res.s_min:.4f}, {res.s_max:.4f}]")
    if not quiet and res.l2_psi == res.l2_psi:  # not NaN
        print(f"  l2_psi = {res.l2_psi:.6g}, l2_S = {res.l2_s:.6g}")
    if res.max_peclet > 2.0:
        print(f"  warning: max grid Peclet {res.max_peclet:.2f} > 2")


if __name__ == "__main__":
    sys.exit(main())
