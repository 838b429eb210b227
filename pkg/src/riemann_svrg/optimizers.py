"""Stochastic and batch optimizers driven by a manifold geometry.

R-SVRG keeps a snapshot point per epoch, computes the full gradient
there once, and corrects every mini-batch gradient by the transported
snapshot difference:

    xi = grad f_B(w) - T(grad f_B(w~) - grad f(w~))

where T carries tangents from the snapshot to the current iterate.
R-SGD uses grad f_B(w) directly with the same epoch bookkeeping.
R-SVRG+ runs its first epoch as plain R-SGD before anchoring, so the
full-gradient cost is not paid while the iterate is still far away.
R-SD is batch steepest descent with Armijo backtracking.

Cost accounting counts gradient evaluations: an R-SVRG epoch costs
N + 2 B m_s (one full gradient plus two batch gradients per inner
step), an R-SGD epoch B m_s, one R-SD iteration N. The full gradient
at each snapshot doubles as the next epoch's anchor and is charged
when consumed, so the closed forms hold exactly; the one computed
after the final epoch is a free diagnostic.

All randomness flows from the config seed through named substreams,
so runs are reproducible bit for bit and the snapshot draw never
perturbs the batch sequence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .errors import (
    ConfigurationError,
    ContractViolation,
    ConvergenceError,
    DomainError,
    NumericError,
)
from .grassmann import karcher_mean, random_point
from .manifold import Geometry, GrassmannPoint, TangentVector
from .problems import Objective


class Substreams(NamedTuple):
    """Independent random substreams derived from one seed."""

    data: np.random.SeedSequence
    init: np.random.SeedSequence
    sampling: np.random.SeedSequence
    split: np.random.SeedSequence
    snapshot: np.random.SeedSequence


def substreams(seed: int) -> Substreams:
    """Split a seed into the named substreams used across the package."""
    return Substreams(*np.random.SeedSequence(seed).spawn(5))


class ScheduleKind(str, Enum):
    FIXED = "fixed"
    DECAY = "decay"
    HYBRID = "hybrid"


class SnapshotOption(str, Enum):
    KARCHER = "karcher"
    RANDOM = "random"
    LAST = "last"


@dataclass(frozen=True)
class ScheduleSpec:
    """Step-size rule.

    fixed:  alpha(k) = alpha0
    decay:  alpha(k) = alpha0 / (1 + alpha0 * lam * floor(k / m_s))
    hybrid: decay while the epoch index is <= s_th, then frozen at the
            value reached, so the sequence is continuous at the switch.
    """

    kind: ScheduleKind
    alpha0: float
    lam: float = 0.0
    s_th: int = 5

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not np.isfinite(self.alpha0) or self.alpha0 <= 0.0:
            raise ConfigurationError(f"alpha0 must be finite and > 0, got {self.alpha0}")
        if not np.isfinite(self.lam) or self.lam < 0.0:
            raise ConfigurationError(f"lam must be finite and >= 0, got {self.lam}")
        if self.s_th < 1:
            raise ConfigurationError(f"s_th must be >= 1, got {self.s_th}")

    def alpha(self, k: int, m_s: int) -> float:
        """Step size at global inner iteration k (counted from 0)."""
        if self.kind is ScheduleKind.FIXED:
            return self.alpha0
        q = k // m_s
        if self.kind is ScheduleKind.HYBRID:
            q = min(q, self.s_th - 1)
        return self.alpha0 / (1.0 + self.alpha0 * self.lam * q)


@dataclass
class SvrgConfig:
    """Run parameters shared by the stochastic optimizers.

    m_s is the number of inner iterations per epoch (default 5N,
    resolved against the objective at run time). batch_size is the
    mini-batch size B. snapshot_option picks the next snapshot from an
    epoch's iterates: the Karcher mean, a uniformly drawn iterate, or
    the last one. engine selects the inner-loop implementation: "auto"
    uses compiled kernels when available, "numpy" forces the reference
    path, "numba" requires kernels.
    """

    m_s: Optional[int] = None
    batch_size: int = 10
    snapshot_option: SnapshotOption = SnapshotOption.KARCHER
    plus_variant: bool = False
    max_epochs: int = 100
    grad_tol: float = 1e-8
    seed: int = 0
    init_point: Optional[GrassmannPoint] = None
    engine: str = "auto"

    def __post_init__(self):
        self.snapshot_option = SnapshotOption(self.snapshot_option)
        if self.engine not in ("auto", "numpy", "numba"):
            raise ConfigurationError(f"unknown engine {self.engine!r}")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not np.isfinite(self.grad_tol) or self.grad_tol < 0.0:
            raise ConfigurationError(f"grad_tol must be finite and >= 0, got {self.grad_tol}")


@dataclass
class RunRecord:
    """Per-epoch metrics row."""

    epoch: int
    grad_evals_over_N: float
    wall_ms: float
    train_loss: float
    grad_norm: float
    test_loss: Optional[float] = None
    optimality_gap: Optional[float] = None
    dist_ref: Optional[float] = None


class RunResult(NamedTuple):
    point: GrassmannPoint
    records: List[RunRecord]
    status: str  # "converged" | "max_epochs" | "aborted:<reason>"
    message: str


MetricsFn = Callable[[GrassmannPoint], dict]

_ABORT_REASONS = {
    DomainError: "domain",
    ConvergenceError: "snapshot",
    NumericError: "numeric",
}
_ABORTS = tuple(_ABORT_REASONS)


# -- core operations ------------------------------------------------------


def svrg_modified_grad(
    geom: Geometry,
    obj: Objective,
    w: GrassmannPoint,
    w_tilde: GrassmannPoint,
    batch,
    anchor: Optional[TangentVector] = None,
) -> TangentVector:
    """Variance-reduced stochastic gradient at w.

    Evaluates the batch gradient at both the iterate and the snapshot,
    transports the snapshot-side correction (batch gradient minus full
    gradient, combined into one vector so a single transport suffices)
    to the iterate, and subtracts. anchor, when given, must be the full
    gradient at w_tilde; otherwise it is computed here.
    """
    if anchor is None:
        anchor = obj.grad(w_tilde)
    g_w = obj.batch_grad(w, batch)
    g_tilde = obj.batch_grad(w_tilde, batch)
    correction = g_tilde - anchor
    return g_w - geom.transport_to(w_tilde, w, correction)


def snapshot(geom: Geometry, iterates, option, rng=None) -> GrassmannPoint:
    """Collapse an epoch's iterates into the next snapshot point."""
    option = SnapshotOption(option)
    if not iterates:
        raise ContractViolation("iterates must be nonempty")
    if option is SnapshotOption.LAST:
        return iterates[-1]
    if option is SnapshotOption.RANDOM:
        if rng is None:
            raise ConfigurationError("random snapshot option needs an rng")
        return iterates[int(rng.integers(0, len(iterates)))]
    return karcher_mean(iterates)


def variance_probe(geom, obj, w, w_tilde, trials: int, seed: int = 0):
    """Second moments of the corrected and plain stochastic directions.

    Enumerates all samples when N <= 200, otherwise Monte-Carlo with
    `trials` singleton draws. Returns (mean ||xi||^2, mean ||g_i||^2).
    """
    n = obj.n_samples
    anchor = obj.grad(w_tilde)
    if n <= 200:
        draws = np.arange(n)
    else:
        draws = np.random.default_rng(seed).integers(0, n, size=trials)
    sv = 0.0
    plain = 0.0
    for i in draws:
        batch = np.array([i])
        xi = svrg_modified_grad(geom, obj, w, w_tilde, batch, anchor=anchor)
        sv += xi.norm() ** 2
        plain += obj.batch_grad(w, batch).norm() ** 2
    return sv / len(draws), plain / len(draws)


# -- engines ---------------------------------------------------------------
#
# An engine supplies cost / full_grad and the two epoch inner loops.
# The reference engine below is built purely from the public ops; the
# compiled engine in _kernels mirrors its interface. Both receive the
# pre-drawn (m_s, B) batch index array and, when the snapshot option is
# "random", the pre-drawn iterate index, so engines agree on every
# random decision.


class _NumpyEngine:
    def __init__(self, geom: Geometry, obj: Objective):
        self.geom = geom
        self.obj = obj

    def cost(self, p):
        return self.obj.cost(p)

    def full_grad(self, p):
        return self.obj.grad(p)

    def svrg_epoch(self, w_tilde, anchor, batches, alpha, option, rand_t):
        geom, obj = self.geom, self.obj
        w = w_tilde
        collect = option is SnapshotOption.KARCHER
        iterates = [] if collect else None
        chosen = None
        for t in range(batches.shape[0]):
            xi = svrg_modified_grad(geom, obj, w, w_tilde, batches[t], anchor=anchor)
            w = geom.retract(w, (-alpha) * xi)
            if collect:
                iterates.append(w)
            if rand_t is not None and t == rand_t:
                chosen = w
        return w, self._collapse(option, iterates, chosen, w)

    def sgd_epoch(self, w, batches, alpha, option, rand_t):
        geom, obj = self.geom, self.obj
        collect = option is SnapshotOption.KARCHER
        iterates = [] if collect else None
        chosen = None
        for t in range(batches.shape[0]):
            g = obj.batch_grad(w, batches[t])
            w = geom.retract(w, (-alpha) * g)
            if collect:
                iterates.append(w)
            if rand_t is not None and t == rand_t:
                chosen = w
        return w, self._collapse(option, iterates, chosen, w)

    @staticmethod
    def _collapse(option, iterates, chosen, w_last):
        if option is SnapshotOption.LAST:
            return w_last
        if option is SnapshotOption.RANDOM:
            return chosen
        return karcher_mean(iterates)


def _make_engine(geom, obj, engine: str):
    if engine == "numpy":
        return _NumpyEngine(geom, obj)
    compiled = None
    try:
        from . import _kernels

        compiled = _kernels.make_engine(geom, obj)
    except ImportError:
        compiled = None
    if compiled is None:
        if engine == "numba":
            raise ConfigurationError(
                f"no compiled kernels for {type(obj).__name__} with {geom.kind} geometry"
            )
        return _NumpyEngine(geom, obj)
    return compiled


# -- run loops -------------------------------------------------------------


def _prepare(geom, obj, cfg):
    n = obj.n_samples
    if geom.d != obj.d or geom.r != obj.r:
        raise ConfigurationError(
            f"geometry ({geom.d}, {geom.r}) does not match problem ({obj.d}, {obj.r})"
        )
    m_s = 5 * n if cfg.m_s is None else int(cfg.m_s)
    if m_s < 1:
        raise ConfigurationError(f"m_s must be >= 1, got {m_s}")
    b = int(cfg.batch_size)
    if not (1 <= b <= n):
        raise ConfigurationError(f"need 1 <= batch_size <= N={n}, got {b}")
    return n, m_s, b


def _init_point(geom, cfg, streams):
    if cfg.init_point is not None:
        if cfg.init_point.shape != (geom.d, geom.r):
            raise ConfigurationError("init_point shape does not match geometry")
        return cfg.init_point
    return random_point(geom.d, geom.r, np.random.default_rng(streams.init))


def _record(records, epoch, evals, n, t0, loss, gnorm, metrics, point):
    extra = (metrics(point) or {}) if metrics is not None else {}
    records.append(
        RunRecord(
            epoch=epoch,
            grad_evals_over_N=evals / n,
            wall_ms=(time.perf_counter() - t0) * 1e3,
            train_loss=loss,
            grad_norm=gnorm,
            test_loss=extra.get("test_loss"),
            optimality_gap=extra.get("optimality_gap"),
            dist_ref=extra.get("dist_ref"),
        )
    )


def run_rsvrg(
    geom: Geometry,
    obj: Objective,
    schedule: ScheduleSpec,
    cfg: SvrgConfig,
    metrics: Optional[MetricsFn] = None,
) -> RunResult:
    """Variance-reduced stochastic gradient descent, one snapshot per epoch.

    Each epoch consumes the full gradient at the incoming snapshot as
    its anchor, runs m_s corrected mini-batch steps, then collapses the
    epoch's iterates into the next snapshot. Stops when the full
    gradient norm at a snapshot falls below cfg.grad_tol. With
    cfg.plus_variant the first epoch runs plain stochastic steps with
    no anchor.
    """
    n, m_s, b = _prepare(geom, obj, cfg)
    streams = substreams(cfg.seed)
    rng_sampling = np.random.default_rng(streams.sampling)
    rng_snapshot = np.random.default_rng(streams.snapshot)
    option = cfg.snapshot_option
    engine = _make_engine(geom, obj, cfg.engine)

    w_tilde = _init_point(geom, cfg, streams)
    records: List[RunRecord] = []
    evals = 0
    anchor = None
    status, message = "max_epochs", ""
    t0 = time.perf_counter()

    for s in range(1, cfg.max_epochs + 1):
        alpha = schedule.alpha((s - 1) * m_s, m_s)
        batches = rng_sampling.integers(0, n, size=(m_s, b), dtype=np.int64)
        rand_t = (
            int(rng_snapshot.integers(0, m_s)) if option is SnapshotOption.RANDOM else None
        )
        cold = cfg.plus_variant and s == 1
        try:
            if cold:
                _, snap = engine.sgd_epoch(w_tilde, batches, alpha, option, rand_t)
                evals += b * m_s
            else:
                if anchor is None:
                    anchor = engine.full_grad(w_tilde)
                _, snap = engine.svrg_epoch(w_tilde, anchor, batches, alpha, option, rand_t)
                evals += n + 2 * b * m_s
            w_tilde = snap
            anchor = engine.full_grad(w_tilde)
            loss = engine.cost(w_tilde)
        except _ABORTS as exc:
            status = "aborted:" + _ABORT_REASONS[type(exc)]
            message = str(exc)
            break
        gnorm = anchor.norm()
        _record(records, s, evals, n, t0, loss, gnorm, metrics, w_tilde)
        if gnorm < cfg.grad_tol:
            status = "converged"
            break
    return RunResult(w_tilde, records, status, message)


def run_rsgd(
    geom: Geometry,
    obj: Objective,
    schedule: ScheduleSpec,
    cfg: SvrgConfig,
    metrics: Optional[MetricsFn] = None,
) -> RunResult:
    """Plain stochastic gradient descent with epoch bookkeeping.

    Same sampling, schedule indexing, and record layout as run_rsvrg,
    but updates use the raw batch gradient and nothing is anchored.
    The per-epoch full gradient is a diagnostic only and is not
    charged to the evaluation count.
    """
    n, m_s, b = _prepare(geom, obj, cfg)
    streams = substreams(cfg.seed)
    rng_sampling = np.random.default_rng(streams.sampling)
    engine = _make_engine(geom, obj, cfg.engine)

    w = _init_point(geom, cfg, streams)
    records: List[RunRecord] = []
    evals = 0
    status, message = "max_epochs", ""
    t0 = time.perf_counter()

    for s in range(1, cfg.max_epochs + 1):
        alpha = schedule.alpha((s - 1) * m_s, m_s)
        batches = rng_sampling.integers(0, n, size=(m_s, b), dtype=np.int64)
        try:
            w, _ = engine.sgd_epoch(w, batches, alpha, SnapshotOption.LAST, None)
            evals += b * m_s
            g = engine.full_grad(w)
            loss = engine.cost(w)
        except _ABORTS as exc:
            status = "aborted:" + _ABORT_REASONS[type(exc)]
            message = str(exc)
            break
        gnorm = g.norm()
        _record(records, s, evals, n, t0, loss, gnorm, metrics, w)
        if gnorm < cfg.grad_tol:
            status = "converged"
            break
    return RunResult(w, records, status, message)


ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
ARMIJO_MAX_HALVINGS = 50


def run_rsd(
    geom: Geometry,
    obj: Objective,
    cfg: SvrgConfig,
    metrics: Optional[MetricsFn] = None,
) -> RunResult:
    """Batch steepest descent with Armijo backtracking.

    Every iteration consumes one full gradient (N evaluations) and
    backtracks from step 1 until f(w') <= f(w) - c alpha ||g||^2, so the
    recorded cost is strictly decreasing. A start within grad_tol of
    stationarity terminates before producing any record.
    """
    n, _, _ = _prepare(geom, obj, cfg)
    streams = substreams(cfg.seed)
    engine = _make_engine(geom, obj, cfg.engine)

    w = _init_point(geom, cfg, streams)
    records: List[RunRecord] = []
    evals = 0
    status, message = "max_epochs", ""
    t0 = time.perf_counter()

    try:
        g = engine.full_grad(w)
        for it in range(1, cfg.max_epochs + 1):
            gnorm = g.norm()
            if gnorm < cfg.grad_tol:
                status = "converged"
                break
            f0 = engine.cost(w)
            evals += n
            alpha = 1.0
            accepted = None
            for _ in range(ARMIJO_MAX_HALVINGS + 1):
                cand = geom.retract(w, (-alpha) * g)
                f_cand = engine.cost(cand)
                if f_cand <= f0 - ARMIJO_C * alpha * gnorm * gnorm:
                    accepted = (cand, f_cand)
                    break
                alpha *= ARMIJO_SHRINK
            if accepted is None:
                status = "aborted:linesearch"
                message = f"no sufficient decrease after {ARMIJO_MAX_HALVINGS} halvings"
                break
            w, f_new = accepted
            g = engine.full_grad(w)
            _record(records, it, evals, n, t0, f_new, g.norm(), metrics, w)
    except _ABORTS as exc:
        status = "aborted:" + _ABORT_REASONS[type(exc)]
        message = str(exc)
    return RunResult(w, records, status, message)
