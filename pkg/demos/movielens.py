"""Rank-5 completion on MovieLens ratings.

Reads the standard ::-separated ratings file (user::item::rating::ts).
Items become columns; a seeded 20% per-user holdout forms the test set.
Useful steps live around 1e-5 to 1e-4 on the 1M-ratings file.

Usage: python movielens.py path/to/ratings.dat [--alpha0 3e-5] [--epochs 20]

Excluded from the test suite for the same reason as the Jester script:
external download, long runtime.
"""

import argparse

from riemann_svrg.experiment import DataSource, ExperimentConfig, run_experiment
from riemann_svrg.optimizers import ScheduleSpec, SvrgConfig

parser = argparse.ArgumentParser()
parser.add_argument("path")
parser.add_argument("--alpha0", type=float, default=3e-5)
parser.add_argument("--epochs", type=int, default=20)
parser.add_argument("--algo", default="rsvrg", choices=["rsgd", "rsvrg", "rsvrg+"])
parser.add_argument("--holdout", type=float, default=0.2)
args = parser.parse_args()

cfg = ExperimentConfig(
    problem="completion",
    algo=args.algo,
    geometry="qr",
    schedule=ScheduleSpec("fixed", args.alpha0),
    svrg=SvrgConfig(max_epochs=args.epochs, snapshot_option="last"),
    data=DataSource(kind="movielens", path=args.path, holdout=args.holdout),
    rank=5,
    seed=0,
    out=f"movielens_{args.algo}.csv",
)
res = run_experiment(cfg)
print(f"status={res.status}")
for rec in res.records:
    print(
        f"ep{rec.epoch:3d}  evals/N={rec.grad_evals_over_N:7.1f}"
        f"  train={rec.train_loss:.5e}  test={rec.test_loss:.5e}"
    )
