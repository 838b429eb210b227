"""Rank-5 completion on the Jester joke-ratings matrix.

Expects the raw Jester CSV (one row per user: rating count then 100
ratings, 99 marking missing). Two observed ratings per user are held out
for the test column set. Small steps are essential here; the ratings
matrix is dense-ish and badly conditioned, and the useful step range sits
around 1e-6 to 1e-5.

Usage: python jester.py path/to/jester.csv [--alpha0 3e-6] [--epochs 20]

Not part of the test suite: the dataset has to be downloaded separately
and a full run takes hours at the published sizes.
"""

import argparse

from riemann_svrg.experiment import DataSource, ExperimentConfig, run_experiment
from riemann_svrg.optimizers import ScheduleSpec, SvrgConfig

parser = argparse.ArgumentParser()
parser.add_argument("path")
parser.add_argument("--alpha0", type=float, default=3e-6)
parser.add_argument("--epochs", type=int, default=20)
parser.add_argument("--algo", default="rsvrg", choices=["rsgd", "rsvrg", "rsvrg+"])
args = parser.parse_args()

cfg = ExperimentConfig(
    problem="completion",
    algo=args.algo,
    geometry="qr",
    schedule=ScheduleSpec("fixed", args.alpha0),
    svrg=SvrgConfig(max_epochs=args.epochs, snapshot_option="last"),
    data=DataSource(kind="jester", path=args.path),
    rank=5,
    seed=0,
    out=f"jester_{args.algo}.csv",
)
res = run_experiment(cfg)
print(f"status={res.status}")
for rec in res.records:
    print(
        f"ep{rec.epoch:3d}  evals/N={rec.grad_evals_over_N:7.1f}"
        f"  train={rec.train_loss:.5e}  test={rec.test_loss:.5e}"
    )
