"""Experiment orchestration: instance construction, metrics CSV emission,
and grid sweeps with best-tuned selection.

A run is described by an ExperimentConfig. All randomness flows from its
seed through the named substreams: data and split shape the instance,
init and sampling drive the optimizer, so rebuilding a problem from the
same seed is bitwise reproducible. data_seed pins the instance while the
run seed varies, which is how multi-seed medians over one dataset are
produced.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datasets import (
    SyntheticCompletionSpec,
    gen_completion,
    gen_karcher,
    gen_pca,
    load_jester,
    load_movielens,
)
from .errors import ConfigurationError
from .grassmann import dist, karcher_mean, make_geometry
from .manifold import GrassmannPoint
from .optimizers import (
    RunResult,
    ScheduleSpec,
    SnapshotOption,
    SvrgConfig,
    run_rsd,
    run_rsgd,
    run_rsvrg,
    substreams,
)
from .problems import pca_oracle

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba is a hard dependency today
    _kernels = None


class ProblemKind(str, Enum):
    PCA = "pca"
    KARCHER = "karcher"
    COMPLETION = "completion"


class AlgoKind(str, Enum):
    RSGD = "rsgd"
    RSVRG = "rsvrg"
    RSVRG_PLUS = "rsvrg_plus"
    RSD = "rsd"


# Benchmark instance sizes used when a synthetic source leaves n/d unset.
_DEFAULT_SIZES = {
    ProblemKind.PCA: (10_000, 20),
    ProblemKind.KARCHER: (1_000, 300),
    ProblemKind.COMPLETION: (5_000, 500),
}


@dataclass(frozen=True)
class DataSource:
    """Instance origin.

    kind "synthetic" draws from the data substream with per-problem
    default sizes; "movielens" and "jester" parse the file at path with
    the train/test split drawn from the split substream.
    """

    kind: str = "synthetic"
    path: Optional[str] = None
    n: Optional[int] = None
    d: Optional[int] = None
    oversampling: float = 5.0
    condition_number: float = 5.0
    noise_std: float = 0.0
    holdout: float = 0.2
    center: bool = False
    reg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("synthetic", "movielens", "jester"):
            raise ConfigurationError(f"unknown data source kind {self.kind!r}")
        if self.kind != "synthetic":
            if not self.path:
                raise ConfigurationError(f"data source {self.kind!r} needs a path")
        elif self.path is not None:
            raise ConfigurationError("synthetic data source does not take a path")


def _default_svrg() -> SvrgConfig:
    return SvrgConfig(snapshot_option=SnapshotOption.LAST)


@dataclass
class ExperimentConfig:
    """One benchmark run.

    The snapshot default is the last inner iterate, which is what the
    benchmark protocol uses throughout; library callers picking other
    options configure svrg directly. inner_mult resolves the inner loop
    length as round(inner_mult * N) unless svrg.m_s pins it outright.
    """

    problem: ProblemKind
    algo: AlgoKind
    geometry: str = "exact"
    schedule: ScheduleSpec = field(default_factory=lambda: ScheduleSpec("fixed", 0.1))
    svrg: SvrgConfig = field(default_factory=_default_svrg)
    data: DataSource = field(default_factory=DataSource)
    rank: int = 5
    inner_mult: float = 5.0
    seed: int = 0
    data_seed: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        self.problem = ProblemKind(self.problem)
        self.algo = AlgoKind(self.algo)
        if self.rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.rank}")
        if self.inner_mult <= 0.0:
            raise ConfigurationError(f"inner_mult must be > 0, got {self.inner_mult}")
        if self.data.path is not None and not os.path.exists(self.data.path):
            raise ConfigurationError(f"data file not found: {self.data.path}")
        if self.problem is not ProblemKind.COMPLETION and self.data.kind != "synthetic":
            raise ConfigurationError(
                f"{self.problem.value} only runs on synthetic data"
            )

    @property
    def instance_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed


@dataclass
class ProblemBundle:
    """A built instance plus whatever ground truth it affords."""

    problem: object
    geometry: object
    f_star: Optional[float] = None
    reference: Optional[GrassmannPoint] = None


def _karcher_reference(prob) -> GrassmannPoint:
    if _kernels is not None:
        stack_t = np.ascontiguousarray(prob.qstack.transpose(0, 2, 1))
        out = np.empty((prob.r, prob.d))
        status = _kernels.karcher_mean_t(stack_t, out)
        if status == _kernels.OK:
            return GrassmannPoint(np.ascontiguousarray(out.T))
        # fall through to the reference solver for a better diagnostic
    points = [GrassmannPoint(q, validate=False) for q in prob.qstack]
    return karcher_mean(points, max_iter=8000)


def build_problem(config: ExperimentConfig) -> ProblemBundle:
    """Construct the instance named by config, with reference quantities.

    PCA gets its dominant-subspace optimum, the averaging problem gets
    the mean computed to tolerance, and synthetic completion carries its
    planted subspace. Ratings files provide no ground truth, so only the
    held-out loss applies there.
    """
    streams = substreams(config.instance_seed)
    data_rng = np.random.default_rng(streams.data)
    split_rng = np.random.default_rng(streams.split)
    src = config.data
    n, d = _DEFAULT_SIZES[config.problem]
    n = src.n if src.n is not None else n
    d = src.d if src.d is not None else d

    if config.problem is ProblemKind.PCA:
        prob = gen_pca(n, d, config.rank, data_rng)
        ref, f_star = pca_oracle(prob.x, config.rank)
        bundle = ProblemBundle(prob, None, f_star=f_star, reference=ref)
    elif config.problem is ProblemKind.KARCHER:
        prob = gen_karcher(n, d, config.rank, data_rng)
        ref = _karcher_reference(prob)
        bundle = ProblemBundle(prob, None, f_star=prob.cost(ref), reference=ref)
    elif src.kind == "synthetic":
        spec = SyntheticCompletionSpec(
            n=n,
            d=d,
            r=config.rank,
            os=src.oversampling,
            cn=src.condition_number,
            noise_std=src.noise_std,
        )
        prob = gen_completion(spec, data_rng, reg=src.reg)
        bundle = ProblemBundle(prob, None, reference=prob.reference)
    elif src.kind == "movielens":
        prob = load_movielens(
            src.path, config.rank, split_rng, holdout=src.holdout,
            center=src.center, reg=src.reg,
        )
        bundle = ProblemBundle(prob, None)
    else:
        prob = load_jester(
            src.path, config.rank, split_rng, center=src.center, reg=src.reg
        )
        bundle = ProblemBundle(prob, None)

    bundle.geometry = make_geometry(config.geometry, bundle.problem.d, config.rank)
    return bundle


def _metrics_fn(config: ExperimentConfig, bundle: ProblemBundle):
    prob, ref = bundle.problem, bundle.reference
    test = None
    if config.problem is ProblemKind.COMPLETION:
        if _kernels is not None:
            test = lambda p: _kernels.completion_test_loss(prob, p)
        else:
            test = prob.test_loss

    def metrics(p):
        out = {}
        if test is not None:
            out["test_loss"] = test(p)
        if ref is not None:
            out["dist_ref"] = dist(p, ref)
        return out

    return metrics


def _dispatch(config: ExperimentConfig, bundle: ProblemBundle) -> RunResult:
    cfg = replace(config.svrg, seed=config.seed)
    if config.algo is AlgoKind.RSD:
        # batch machinery is inert here; neutralize it so tiny instances
        # do not trip the batch-size check
        cfg.m_s, cfg.batch_size = 1, 1
    elif cfg.m_s is None:
        cfg.m_s = max(1, round(config.inner_mult * bundle.problem.n_samples))
    metrics = _metrics_fn(config, bundle)
    geom = bundle.geometry
    if config.algo is AlgoKind.RSD:
        return run_rsd(geom, bundle.problem, cfg, metrics)
    if config.algo is AlgoKind.RSGD:
        return run_rsgd(geom, bundle.problem, config.schedule, cfg, metrics)
    cfg.plus_variant = config.algo is AlgoKind.RSVRG_PLUS
    return run_rsvrg(geom, bundle.problem, config.schedule, cfg, metrics)


# -- CSV emission ------------------------------------------------------------

CSV_HEADER = "epoch,grad_evals_over_N,wall_ms,train_loss,test_loss,grad_norm,optimality_gap,dist_ref"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path, records) -> None:
    """One row per completed epoch, shortest round-trip float formatting,
    '.' decimal separator, LF line endings regardless of platform."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            row = (
                str(r.epoch),
                _fmt(float(r.grad_evals_over_N)),
                _fmt(float(r.wall_ms)),
                _fmt(float(r.train_loss)),
                _fmt(r.test_loss),
                _fmt(float(r.grad_norm)),
                _fmt(r.optimality_gap),
                _fmt(r.dist_ref),
            )
            fh.write(",".join(row) + "\n")


def run_experiment(config: ExperimentConfig, bundle: Optional[ProblemBundle] = None) -> RunResult:
    """Execute one configured run and write its metrics CSV when
    config.out is set. Passing a prebuilt bundle skips instance
    construction; it must match the config that built it."""
    if bundle is None:
        bundle = build_problem(config)
    result = _dispatch(config, bundle)
    if bundle.f_star is not None:
        for rec in result.records:
            rec.optimality_gap = rec.train_loss - bundle.f_star
    if config.out:
        write_metrics_csv(config.out, result.records)
    return result


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepEntry:
    """Summary row for one (combo, seed) run."""

    algo: str
    alpha0: Optional[float]
    lam: Optional[float]
    seed: int
    status: str
    epochs: int
    final_train_loss: float
    final_test_loss: Optional[float]
    final_grad_norm: float
    final_optimality_gap: Optional[float]
    final_dist_ref: Optional[float]
    best: int = 0
    csv_path: Optional[str] = None


class SweepResult:
    def __init__(self, entries, best_combo, results):
        self.entries: List[SweepEntry] = entries
        self.best_combo: Optional[Tuple[Optional[float], Optional[float]]] = best_combo
        self.results: Dict[Tuple, RunResult] = results

    def best_entries(self) -> List[SweepEntry]:
        return [e for e in self.entries if e.best]


SUMMARY_HEADER = (
    "algo,alpha0,lambda,seed,status,epochs,final_train_loss,final_test_loss,"
    "final_grad_norm,final_optimality_gap,final_dist_ref,best"
)


def _entry_from(config, combo, seed, result, csv_path) -> SweepEntry:
    last = result.records[-1] if result.records else None
    return SweepEntry(
        algo=config.algo.value,
        alpha0=combo[0],
        lam=combo[1],
        seed=seed,
        status=result.status,
        epochs=len(result.records),
        final_train_loss=last.train_loss if last else float("inf"),
        final_test_loss=last.test_loss if last else None,
        final_grad_norm=last.grad_norm if last else float("inf"),
        final_optimality_gap=last.optimality_gap if last else None,
        final_dist_ref=last.dist_ref if last else None,
        csv_path=csv_path,
    )


def _combo_configs(config: ExperimentConfig, alpha0_list, lam_list, seeds):
    """Expand the tuning grid, skipping axes the run cannot see: R-SD has
    no schedule at all and a fixed schedule never reads lambda."""
    if config.algo is AlgoKind.RSD:
        combos = [(None, None)]
    elif config.schedule.kind.value == "fixed":
        combos = [(float(a), None) for a in alpha0_list]
    else:
        combos = [(float(a), float(l)) for a in alpha0_list for l in lam_list]
    if not combos:
        raise ConfigurationError("empty tuning grid")
    if not seeds:
        raise ConfigurationError("need at least one seed")
    jobs = []
    for combo in combos:
        for seed in seeds:
            sched = config.schedule
            if combo[0] is not None:
                sched = replace(
                    sched, alpha0=combo[0], lam=combo[1] if combo[1] is not None else 0.0
                )
            jobs.append((combo, int(seed), replace(config, schedule=sched, seed=int(seed))))
    return jobs


def _run_name(config, combo, seed) -> str:
    if combo[0] is None:
        return f"{config.algo.value}_s{seed}.csv"
    if combo[1] is None:
        return f"{config.algo.value}_a{combo[0]:g}_s{seed}.csv"
    return f"{config.algo.value}_a{combo[0]:g}_l{combo[1]:g}_s{seed}.csv"


def _sweep_job(job):
    combo, seed, cfg = job
    return combo, seed, run_experiment(cfg)


def sweep(
    config: ExperimentConfig,
    alpha0_list: Sequence[float],
    lam_list: Sequence[float],
    seeds: Sequence[int],
    workers: int = 1,
) -> SweepResult:
    """Grid sweep over step-size parameters and seeds.

    Each (alpha0, lambda, seed) run writes its own metrics CSV under
    config.out (treated as a directory) and contributes a summary row.
    The combo with the lowest median final train loss across seeds is
    flagged in the best column; aborted runs rank as infinitely bad.
    Returns all per-run results keyed by (alpha0, lambda, seed).
    """
    jobs = _combo_configs(config, alpha0_list, lam_list, seeds)
    out_dir = config.out
    prepared = []
    for combo, seed, cfg in jobs:
        path = None
        if out_dir:
            path = os.path.join(out_dir, _run_name(config, combo, seed))
        prepared.append((combo, seed, replace(cfg, out=path)))

    results: Dict[Tuple, RunResult] = {}
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (combo, seed, _), (_, _, res) in zip(
                prepared, pool.map(_sweep_job, prepared)
            ):
                results[(combo[0], combo[1], seed)] = res
    else:
        cache: Dict[Tuple, ProblemBundle] = {}
        for combo, seed, cfg in prepared:
            key = (cfg.problem, cfg.data, cfg.rank, cfg.instance_seed)
            if key not in cache:
                cache[key] = build_problem(cfg)
            results[(combo[0], combo[1], seed)] = run_experiment(cfg, cache[key])

    entries = []
    combos = []
    for combo, seed, cfg in prepared:
        if combo not in combos:
            combos.append(combo)
        entries.append(
            _entry_from(cfg, combo, seed, results[(combo[0], combo[1], seed)], cfg.out)
        )

    medians = []
    for combo in combos:
        finals = [
            e.final_train_loss if np.isfinite(e.final_train_loss) else np.inf
            for e in entries
            if (e.alpha0, e.lam) == combo
        ]
        medians.append(np.median(finals))
    best_combo = combos[int(np.argmin(medians))]
    for e in entries:
        if (e.alpha0, e.lam) == best_combo:
            e.best = 1

    if out_dir:
        write_summary_csv(os.path.join(out_dir, "summary.csv"), entries)
    return SweepResult(entries, best_combo, results)


def write_summary_csv(path, entries) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for e in entries:
            row = (
                e.algo,
                _fmt(e.alpha0),
                _fmt(e.lam),
                str(e.seed),
                e.status,
                str(e.epochs),
                _fmt(float(e.final_train_loss)),
                _fmt(e.final_test_loss),
                _fmt(float(e.final_grad_norm)),
                _fmt(e.final_optimality_gap),
                _fmt(e.final_dist_ref),
                str(e.best),
            )
            fh.write(",".join(row) + "\n")
