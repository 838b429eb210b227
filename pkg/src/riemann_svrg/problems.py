"""Finite-sum objectives on the Grassmann manifold.

Each problem exposes the same interface: a total cost (1/N) sum_i f_i,
per-sample costs and Riemannian gradients, and mini-batch gradients. The
full gradient is literally ``batch_grad(p, arange(N))`` so finite-sum
consistency holds exactly, not just in expectation.

Problems:

* :class:`PcaProblem`: f_i(U) = ||x_i - U U^T x_i||^2, the projection
  residual of one data vector.
* :class:`KarcherProblem`: f_i(U) = (1/2) dist(U, Q_i)^2, the mean of
  squared geodesic distances to given subspaces.
* :class:`CompletionProblem`: f_i(U) = min_a ||P_Omega_i(U a - x_i)||^2
  (+ lambda ||a||^2), low-rank matrix completion with closed-form
  per-column coefficients.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, ContractViolation, DomainError
from .manifold import GrassmannPoint, TangentVector

LOG_COND_RTOL = 1e-12  # same gate as grassmann.log
SMALL_ANGLE = 1e-8


class Objective:
    """Interface shared by the finite-sum problems."""

    n_samples: int = 0
    d: int = 0
    r: int = 0

    def cost(self, p: GrassmannPoint) -> float:
        raise NotImplementedError

    def grad(self, p: GrassmannPoint) -> TangentVector:
        return self.batch_grad(p, np.arange(self.n_samples))

    def sample_cost(self, p: GrassmannPoint, i: int) -> float:
        raise NotImplementedError

    def sample_grad(self, p: GrassmannPoint, i: int) -> TangentVector:
        return self.batch_grad(p, np.array([i]))

    def batch_grad(self, p: GrassmannPoint, idx) -> TangentVector:
        raise NotImplementedError

    def test_loss(self, p: GrassmannPoint):
        """Held-out loss; None when the problem has no test set."""
        return None

    def _check_point(self, p: GrassmannPoint):
        if p.shape != (self.d, self.r):
            raise ContractViolation(
                f"point shape {p.shape} does not match problem ({self.d}, {self.r})"
            )


class PcaProblem(Objective):
    """Subspace PCA: minimize the mean squared projection residual.

    Args:
        x: data matrix of shape (d, N), one sample per column.
        r: subspace dimension.
    """

    def __init__(self, x, r: int):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigurationError(f"data must be d x N, got shape {x.shape}")
        d, n = x.shape
        if not (1 <= r <= d):
            raise ConfigurationError(f"need 1 <= r <= d, got r={r}, d={d}")
        self.x = x
        self.d = d
        self.r = int(r)
        self.n_samples = n
        self.sq_norm = float(np.sum(x * x))
        # row-major copy for sample access
        self.xrows = np.ascontiguousarray(x.T)

    def cost(self, p):
        self._check_point(p)
        return (self.sq_norm - float(np.sum((p.u.T @ self.x) ** 2))) / self.n_samples

    def sample_cost(self, p, i):
        self._check_point(p)
        xi = self.xrows[i]
        return float(xi @ xi - np.sum((p.u.T @ xi) ** 2))

    def batch_grad(self, p, idx):
        self._check_point(p)
        idx = np.asarray(idx, dtype=np.int64)
        y = self.x[:, idx]
        c = p.u.T @ y
        g = (-2.0 / idx.shape[0]) * ((y - p.u @ c) @ c.T)
        return TangentVector(g, p, validate=False)


def pca_oracle(x, r: int):
    """Dominant-subspace solution of the PCA problem.

    Returns (point, loss) where the point spans the top-r eigenvectors of
    the sample covariance and loss is the problem cost there, computed
    with the same expression as :meth:`PcaProblem.cost` so the optimality
    gap at the oracle is exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    d, n = x.shape
    cov = (x @ x.T) / n
    w, v = np.linalg.eigh(cov)
    u = np.ascontiguousarray(v[:, ::-1][:, :r])
    point = GrassmannPoint(u, validate=False)
    loss = (float(np.sum(x * x)) - float(np.sum((u.T @ x) ** 2))) / n
    return point, loss


class KarcherProblem(Objective):
    """Karcher mean objective: f_i(U) = (1/2) dist(U, Q_i)^2.

    Args:
        points: sequence of GrassmannPoint, or a stacked (N, d, r) array of
            orthonormal representatives.
    """

    def __init__(self, points):
        if isinstance(points, np.ndarray):
            stack = np.ascontiguousarray(points, dtype=np.float64)
        else:
            pts = list(points)
            if not pts:
                raise ConfigurationError("need at least one point")
            stack = np.stack([pt.u for pt in pts])
        if stack.ndim != 3:
            raise ConfigurationError(f"expected (N, d, r) stack, got {stack.shape}")
        self.qstack = stack
        self.n_samples, self.d, self.r = stack.shape

    @property
    def points(self):
        return [GrassmannPoint(q, validate=False) for q in self.qstack]

    def _angles(self, u, stack):
        """Principal angles between span(u) and every subspace in stack."""
        t = np.matmul(u.T[np.newaxis], stack)              # (B, r, r)
        c = np.linalg.svd(t, compute_uv=False)             # descending
        b = stack - np.matmul(u[np.newaxis], t)
        s = np.linalg.svd(b, compute_uv=False)
        return np.arctan2(s[:, ::-1], np.clip(c, 0.0, 1.0)), t

    def cost(self, p):
        self._check_point(p)
        theta, _ = self._angles(p.u, self.qstack)
        return float(np.sum(theta * theta)) / (2.0 * self.n_samples)

    def sample_cost(self, p, i):
        self._check_point(p)
        theta, _ = self._angles(p.u, self.qstack[i : i + 1])
        return 0.5 * float(np.sum(theta * theta))

    def batch_grad(self, p, idx):
        """Mean of -log_p(Q_i) over the batch."""
        self._check_point(p)
        idx = np.asarray(idx, dtype=np.int64)
        stack = self.qstack[idx]
        u = p.u
        t = np.matmul(u.T[np.newaxis], stack)              # (B, r, r)
        pm, c, qmt = np.linalg.svd(t)
        cmax = c[:, 0]
        if np.any(cmax <= 0.0) or np.any(c[:, -1] <= cmax * LOG_COND_RTOL):
            bad = int(np.argmin(np.where(cmax > 0.0, c[:, -1] / np.maximum(cmax, 1e-300), -1.0)))
            raise DomainError(
                "log undefined: orthogonal principal direction between subspaces "
                f"(sample {int(idx[bad])})"
            )
        theta = np.arccos(np.clip(c, 0.0, 1.0))
        factor = np.where(theta < SMALL_ANGLE, 1.0, theta / np.sin(np.maximum(theta, 1e-300)))
        b = stack - np.matmul(u[np.newaxis], t)
        carriers = np.matmul(
            np.matmul(b, np.transpose(qmt, (0, 2, 1)) * factor[:, np.newaxis, :]), pm.transpose(0, 2, 1)
        )
        g = -np.sum(carriers, axis=0) / idx.shape[0]
        return TangentVector(g, p, validate=False)


class CompletionProblem(Objective):
    """Low-rank matrix completion from partially observed columns.

    Each column n of a d x N matrix is observed on an index set Omega_n.
    The per-column cost is the squared residual of the best coefficient
    vector, f_n(U) = min_a ||U[Omega_n] a - x[Omega_n]||^2 + reg ||a||^2,
    evaluated at its minimizer (with the regularized term included when
    reg > 0). The gradient follows from the envelope theorem:
    grad f_n = 2 (I - U U^T) rho_n a_n^T with rho_n the residual scattered
    back to R^d.

    Args:
        d: number of rows.
        r: rank of the sought subspace.
        columns: per-column pairs (sorted index array, value array).
        test_columns: optional held-out pairs, same layout, disjoint from
            the training indices column by column.
        reg: coefficient ridge term, default 0 (exact least squares).
    """

    def __init__(self, d: int, r: int, columns, test_columns=None, reg: float = 0.0):
        if not (1 <= r <= d):
            raise ConfigurationError(f"need 1 <= r <= d, got r={r}, d={d}")
        if reg < 0.0 or not np.isfinite(reg):
            raise ConfigurationError(f"reg must be finite and >= 0, got {reg}")
        self.d = int(d)
        self.r = int(r)
        self.reg = float(reg)
        self.indptr, self.rows, self.vals = self._flatten(columns, d, "columns")
        self.n_samples = len(self.indptr) - 1
        if self.n_samples == 0:
            raise ConfigurationError("need at least one column")
        if test_columns is not None:
            self.test_indptr, self.test_rows, self.test_vals = self._flatten(
                test_columns, d, "test_columns"
            )
            if len(self.test_indptr) != len(self.indptr):
                raise ConfigurationError(
                    "test_columns must have the same number of columns as columns"
                )
            self._check_disjoint()
        else:
            self.test_indptr = None
            self.test_rows = None
            self.test_vals = None

    @staticmethod
    def _flatten(columns, d, what):
        indptr = [0]
        rows = []
        vals = []
        for n, (idx, val) in enumerate(columns):
            idx = np.asarray(idx, dtype=np.int64)
            val = np.asarray(val, dtype=np.float64)
            if idx.shape != val.shape or idx.ndim != 1:
                raise ConfigurationError(
                    f"{what}[{n}]: index/value arrays must be 1-d and equal length"
                )
            if idx.size:
                if np.any(np.diff(idx) <= 0):
                    raise ConfigurationError(f"{what}[{n}]: indices must be sorted and unique")
                if idx[0] < 0 or idx[-1] >= d:
                    raise ConfigurationError(f"{what}[{n}]: index out of range [0, {d})")
            rows.append(idx)
            vals.append(val)
            indptr.append(indptr[-1] + idx.size)
        return (
            np.asarray(indptr, dtype=np.int64),
            np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
            np.concatenate(vals) if vals else np.zeros(0),
        )

    def _check_disjoint(self):
        for n in range(self.n_samples):
            a = self.rows[self.indptr[n] : self.indptr[n + 1]]
            b = self.test_rows[self.test_indptr[n] : self.test_indptr[n + 1]]
            if np.intersect1d(a, b).size:
                raise ConfigurationError(
                    f"column {n}: train and test index sets overlap"
                )

    # -- coefficient solve ------------------------------------------------

    def coefficients(self, p: GrassmannPoint, i: int):
        """Best-fit coefficient vector a_i for column i at subspace p."""
        self._check_point(p)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self._solve(p.u, self.rows[lo:hi], self.vals[lo:hi])

    def _solve(self, u, rows, vals):
        if rows.size == 0:
            return np.zeros(self.r)
        usub = u[rows]
        if self.reg > 0.0:
            g = usub.T @ usub + self.reg * np.eye(self.r)
            return np.linalg.solve(g, usub.T @ vals)
        return np.linalg.lstsq(usub, vals, rcond=None)[0]

    def sample_cost(self, p, i):
        self._check_point(p)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        rows, vals = self.rows[lo:hi], self.vals[lo:hi]
        a = self._solve(p.u, rows, vals)
        resid = p.u[rows] @ a - vals
        out = float(resid @ resid)
        if self.reg > 0.0:
            out += self.reg * float(a @ a)
        return out

    def cost(self, p):
        self._check_point(p)
        return sum(self.sample_cost(p, i) for i in range(self.n_samples)) / self.n_samples

    def batch_grad(self, p, idx):
        self._check_point(p)
        idx = np.asarray(idx, dtype=np.int64)
        u = p.u
        acc = np.zeros((self.d, self.r))
        for i in idx:
            lo, hi = self.indptr[i], self.indptr[i + 1]
            rows, vals = self.rows[lo:hi], self.vals[lo:hi]
            if rows.size == 0:
                continue
            a = self._solve(u, rows, vals)
            resid = u[rows] @ a - vals
            acc[rows] += 2.0 * resid[:, np.newaxis] * a[np.newaxis, :]
        acc /= idx.shape[0]
        acc -= u @ (u.T @ acc)
        return TangentVector(acc, p, validate=False)

    def test_loss(self, p):
        """Mean squared residual on the held-out entries, with coefficients
        fit on the training entries only."""
        self._check_point(p)
        if self.test_indptr is None:
            raise ConfigurationError("problem has no test set")
        u = p.u
        total = 0.0
        for i in range(self.n_samples):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            a = self._solve(u, self.rows[lo:hi], self.vals[lo:hi])
            tlo, thi = self.test_indptr[i], self.test_indptr[i + 1]
            trows = self.test_rows[tlo:thi]
            if trows.size == 0:
                continue
            resid = u[trows] @ a - self.test_vals[tlo:thi]
            total += float(resid @ resid)
        return total / self.n_samples
