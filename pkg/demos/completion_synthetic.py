"""Low-rank matrix completion from 5x oversampled noisy entries.

Planted rank-5 matrix, 5000 columns of dimension 500, condition number 5,
observation noise 0.1. The noise matters for the story: with exact
observations the plain stochastic solver interpolates the data to machine
precision within its first epoch and there is no variance left to reduce.
With noise it plateaus at the noise floor, while the corrected run keeps
cutting the held-out loss below it.

QR retraction with projection transport keeps the inner loop cheap; the
exact exponential/logarithm pair works too but pays an eigensolve per
inner step once the iterate drifts away from the epoch anchor.

Prints train and held-out test loss per epoch for the variance-reduced
run, then the plain-SGD endpoint for contrast.
"""

from riemann_svrg.experiment import DataSource, ExperimentConfig, run_experiment
from riemann_svrg.optimizers import ScheduleSpec, SvrgConfig


def run(algo, epochs):
    cfg = ExperimentConfig(
        problem="completion",
        algo=algo,
        geometry="qr",
        schedule=ScheduleSpec("fixed", 1e-3),
        svrg=SvrgConfig(max_epochs=epochs, snapshot_option="last"),
        data=DataSource(noise_std=0.1),
        rank=5,
        seed=11,
        data_seed=0,
        out=f"completion_{algo}.csv",
    )
    return run_experiment(cfg)


res = run("rsvrg", 12)
print("rsvrg, fixed alpha0=1e-3")
print(f"{'epoch':>5} {'train':>12} {'test':>12} {'dist to planted':>16}")
for rec in res.records:
    print(
        f"{rec.epoch:5d} {rec.train_loss:12.4e} {rec.test_loss:12.4e}"
        f" {rec.dist_ref:16.4e}"
    )

sgd = run("rsgd", 12)
last = sgd.records[-1]
print(
    f"\nrsgd after {last.epoch} epochs: train={last.train_loss:.4e}"
    f" test={last.test_loss:.4e} (same step, same budget rules)"
)
