"""Command line front end.

Two subcommands: `run` executes one configured optimization and writes
its metrics CSV, `sweep` fans a step-size grid and seed list into
per-run CSVs plus a summary with the best-tuned combination flagged.
"""

from __future__ import annotations

import argparse
import sys

from .datasets import detect_format
from .errors import RiemannSvrgError
from .experiment import (
    AlgoKind,
    DataSource,
    ExperimentConfig,
    ProblemKind,
    run_experiment,
    sweep,
)
from .optimizers import ScheduleSpec, SnapshotOption, SvrgConfig

_ALGO_NAMES = {
    "rsgd": AlgoKind.RSGD,
    "rsvrg": AlgoKind.RSVRG,
    "rsvrg+": AlgoKind.RSVRG_PLUS,
    "rsd": AlgoKind.RSD,
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", required=True, choices=[k.value for k in ProblemKind])
    p.add_argument("--algo", required=True, choices=sorted(_ALGO_NAMES))
    p.add_argument("--geometry", default="exact", choices=["exact", "qr"])
    p.add_argument("--schedule", default="fixed", choices=["fixed", "decay", "hybrid"])
    p.add_argument("--alpha0", type=float, default=0.1, help="initial step size")
    p.add_argument("--lambda", dest="lam", type=float, default=0.01,
                   help="decay rate for the decay/hybrid schedules")
    p.add_argument("--sth", type=int, default=5,
                   help="epoch at which the hybrid schedule freezes")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=10, help="mini-batch size")
    p.add_argument("--inner-mult", type=float, default=5.0,
                   help="inner iterations per epoch as a multiple of N")
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default="synthetic",
                   help="'synthetic' or a path to a ratings file")
    p.add_argument("--out", default=None, help="metrics CSV path (run) or directory (sweep)")
    p.add_argument("--snapshot", default="last",
                   choices=[o.value for o in SnapshotOption],
                   help="how an epoch's iterates collapse into the next snapshot")
    p.add_argument("--grad-tol", type=float, default=1e-8,
                   help="stop when the full gradient norm falls below this")
    p.add_argument("--engine", default="auto", choices=["auto", "numpy", "numba"])
    p.add_argument("--data-seed", type=int, default=None,
                   help="pin the instance while --seed varies")
    # synthetic instance shape; defaults follow the benchmark sizes
    p.add_argument("--n", type=int, default=None, help="synthetic sample count")
    p.add_argument("--d", type=int, default=None, help="synthetic ambient dimension")
    p.add_argument("--os", dest="oversampling", type=float, default=5.0,
                   help="completion oversampling ratio")
    p.add_argument("--cn", dest="condition_number", type=float, default=5.0,
                   help="completion condition number")
    p.add_argument("--noise-std", type=float, default=0.0)
    # ratings-file handling
    p.add_argument("--holdout", type=float, default=0.2,
                   help="held-out fraction per user ('::' files)")
    p.add_argument("--center", action="store_true",
                   help="subtract the training-set mean rating")
    p.add_argument("--reg", type=float, default=0.0,
                   help="ridge term on completion coefficients")


def _config_from(args) -> ExperimentConfig:
    if args.data == "synthetic":
        source = DataSource(
            kind="synthetic",
            n=args.n,
            d=args.d,
            oversampling=args.oversampling,
            condition_number=args.condition_number,
            noise_std=args.noise_std,
            reg=args.reg,
        )
    else:
        source = DataSource(
            kind=detect_format(args.data),
            path=args.data,
            holdout=args.holdout,
            center=args.center,
            reg=args.reg,
        )
    schedule = ScheduleSpec(args.schedule, args.alpha0, lam=args.lam, s_th=args.sth)
    svrg = SvrgConfig(
        batch_size=args.batch,
        snapshot_option=args.snapshot,
        max_epochs=args.epochs,
        grad_tol=args.grad_tol,
        engine=args.engine,
    )
    return ExperimentConfig(
        problem=args.problem,
        algo=_ALGO_NAMES[args.algo],
        geometry=args.geometry,
        schedule=schedule,
        svrg=svrg,
        data=source,
        rank=args.rank,
        inner_mult=args.inner_mult,
        seed=args.seed,
        data_seed=args.data_seed,
        out=args.out,
    )


def _floats(text: str):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str):
    return [int(t) for t in text.split(",") if t.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="riemann-svrg",
        description="Stochastic optimization benchmarks on the Grassmann manifold",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one run and write its metrics CSV")
    _add_run_flags(run_p)

    sweep_p = sub.add_parser("sweep", help="grid-sweep step sizes and seeds")
    _add_run_flags(sweep_p)
    sweep_p.add_argument("--alpha0-grid", type=_floats, default=None,
                         help="comma-separated alpha0 values")
    sweep_p.add_argument("--lambda-grid", type=_floats, default=[1e-1, 1e-2, 1e-3],
                         help="comma-separated decay rates")
    sweep_p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    sweep_p.add_argument("--workers", type=int, default=1)

    args = parser.parse_args(argv)
    try:
        config = _config_from(args)
        if args.command == "run":
            result = run_experiment(config)
            if result.status.startswith("aborted"):
                print(f"{result.status}: {result.message}", file=sys.stderr)
                return 1
            print(f"{result.status} after {len(result.records)} epochs"
                  + (f" -> {config.out}" if config.out else ""))
            return 0
        alpha_grid = args.alpha0_grid if args.alpha0_grid else [args.alpha0]
        outcome = sweep(config, alpha_grid, args.lambda_grid, args.seeds,
                        workers=args.workers)
        aborted = sum(1 for e in outcome.entries if e.status.startswith("aborted"))
        print(f"{len(outcome.entries)} runs, best combo {outcome.best_combo}"
              + (f", {aborted} aborted" if aborted else "")
              + (f" -> {config.out}/summary.csv" if config.out else ""))
        return 1 if aborted == len(outcome.entries) else 0
    except RiemannSvrgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
