"""Grassmann manifold operations.

Points are subspaces span(U) for orthonormal U (d x r). Two retraction
bundles are provided:

* :class:`ExactGeometry`: geodesic exponential map, parallel translation
  along geodesics, and the Riemannian logarithm.
* :class:`QrGeometry`: QR retraction, transport by horizontal projection
  at the destination (rescaled to preserve the norm), log-based inverse.

The closed forms all reduce to small r x r factorizations. With the thin
SVD Xi = W diag(sigma) V^T of a horizontal tangent,

    exp_U(Xi)  = U V cos(sigma) V^T + W sin(sigma) V^T,

and parallel translation of zeta along the geodesic with direction Xi is

    zeta - (U V sin(sigma) + W (I - cos(sigma))) W^T zeta.

The logarithm inverts exp: with T = U^T V_q and SVD T = P c Q^T,
theta = arccos(c),

    log_U(V_q) = (V_q - U T) Q diag(theta / sin(theta)) P^T.

The log is undefined when some principal angle reaches pi/2, detected as
cond(T) > 1/LOG_COND_RTOL.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ConfigurationError, ContractViolation, ConvergenceError, DomainError
from .manifold import Geometry, GrassmannPoint, TangentVector

# singular values of U^T V below LOG_COND_RTOL * max are treated as zero
LOG_COND_RTOL = 1e-12
# exp re-orthonormalizes its output when the drift exceeds this
EXP_REORTH_ATOL = 1e-12
# angles below this use the small-angle limit of theta / sin(theta)
SMALL_ANGLE = 1e-8


class GeometryKind(str, Enum):
    EXACT = "exact"
    QR = "qr"


def _thin_qr_posdiag(a):
    """Thin QR factor with the sign convention diag(R) >= 0."""
    q, rmat = np.linalg.qr(a)
    s = np.sign(np.diag(rmat))
    s[s == 0.0] = 1.0
    return q * s[np.newaxis, :]


def exp(p: GrassmannPoint, xi: TangentVector) -> GrassmannPoint:
    """Geodesic exponential map at p.

    Args:
        p: base point.
        xi: horizontal tangent vector at p.

    Returns:
        The point exp_p(xi). Orthonormality of the output representative is
        restored by a thin QR whenever the drift exceeds EXP_REORTH_ATOL.
    """
    _check_based_at(p, xi)
    if not xi.carrier.any():
        return p
    w, sigma, vt = np.linalg.svd(xi.carrier, full_matrices=False)
    u1 = (p.u @ vt.T) * np.cos(sigma)[np.newaxis, :] + w * np.sin(sigma)[np.newaxis, :]
    u1 = u1 @ vt
    defect = np.linalg.norm(u1.T @ u1 - np.eye(p.r))
    if defect > EXP_REORTH_ATOL:
        u1 = _thin_qr_posdiag(u1)
    return GrassmannPoint(u1, validate=False)


def _log_factors(u, v):
    """Shared core of log/transport_to.

    Returns (carrier, pmat, qmat, theta) where carrier is the log of
    span(v) at representative u and T = U^T V = P diag(cos theta) Q^T.
    """
    t = u.T @ v
    pmat, c, qmat_t = np.linalg.svd(t)
    qmat = qmat_t.T
    cmax = c[0]
    if cmax <= 0.0 or c[-1] <= cmax * LOG_COND_RTOL:
        raise DomainError(
            "log undefined: orthogonal principal direction between subspaces"
        )
    c = np.clip(c, 0.0, 1.0)
    theta = np.arccos(c)
    factor = np.where(theta < SMALL_ANGLE, 1.0, theta / np.sin(np.maximum(theta, 1e-300)))
    b = v - u @ t
    carrier = (b @ qmat) * factor[np.newaxis, :] @ pmat.T
    return carrier, pmat, qmat, theta


def log(p: GrassmannPoint, q: GrassmannPoint) -> TangentVector:
    """Riemannian logarithm: the tangent at p whose exponential is q.

    Raises:
        DomainError: if some principal angle between p and q is pi/2, i.e.
            U^T V_q is singular beyond LOG_COND_RTOL.
    """
    _check_dims(p, q)
    carrier, _, _, _ = _log_factors(p.u, q.u)
    return TangentVector(carrier, p, validate=False)


def parallel_translate(p: GrassmannPoint, eta: TangentVector, zeta: TangentVector) -> TangentVector:
    """Parallel translation of zeta along the geodesic t -> exp_p(t eta).

    Returns the translated vector based at exp(p, eta).
    """
    _check_based_at(p, eta)
    _check_based_at(p, zeta)
    dest = exp(p, eta)
    if not eta.carrier.any():
        return TangentVector(zeta.carrier, dest, validate=False)
    w, sigma, vt = np.linalg.svd(eta.carrier, full_matrices=False)
    wz = w.T @ zeta.carrier
    moved = (
        zeta.carrier
        - ((p.u @ vt.T) * np.sin(sigma)[np.newaxis, :]) @ wz
        - (w * (1.0 - np.cos(sigma))[np.newaxis, :]) @ wz
    )
    # clean up the tiny normal component picked up in floating point
    moved -= dest.u @ (dest.u.T @ moved)
    return TangentVector(moved, dest, validate=False)


def dist(p: GrassmannPoint, q: GrassmannPoint) -> float:
    """Geodesic distance: the 2-norm of the principal angles.

    Angles are recovered jointly from the cosines (singular values of
    U^T V) and the sines (singular values of V - U U^T V) via arctan2,
    which stays accurate for both tiny and near-maximal angles.
    """
    _check_dims(p, q)
    t = p.u.T @ q.u
    c = np.linalg.svd(t, compute_uv=False)          # descending
    b = q.u - p.u @ t
    s = np.linalg.svd(b, compute_uv=False)          # descending
    theta = np.arctan2(s[::-1], np.clip(c, 0.0, 1.0))
    return float(np.linalg.norm(theta))


def qr_retract(p: GrassmannPoint, xi: TangentVector) -> GrassmannPoint:
    """First-order retraction: orthonormalize U + Xi by thin QR.

    The sign convention diag(R) >= 0 makes the output representative
    unique, so equal inputs give bitwise-equal outputs.
    """
    _check_based_at(p, xi)
    if not xi.carrier.any():
        return p
    return GrassmannPoint(_thin_qr_posdiag(p.u + xi.carrier), validate=False)


def project_transport(p: GrassmannPoint, eta: TangentVector, xi: TangentVector) -> TangentVector:
    """Transport by horizontal projection at qr_retract(p, eta).

    The projection shrinks vectors, so the result is rescaled back to
    ||xi|| (an isometric vector transport). A vector whose projection
    vanishes is returned as zero.
    """
    _check_based_at(p, eta)
    _check_based_at(p, xi)
    dest = qr_retract(p, eta)
    return _project_rescale(dest, xi.carrier)


def _project_rescale(dest: GrassmannPoint, carrier):
    moved = carrier - dest.u @ (dest.u.T @ carrier)
    nold = np.linalg.norm(carrier)
    nnew = np.linalg.norm(moved)
    if nnew > 0.0 and nold > 0.0:
        moved = moved * (nold / nnew)
    return TangentVector(moved, dest, validate=False)


def random_point(d: int, r: int, rng) -> GrassmannPoint:
    """Uniform (Haar) random subspace, as the QR factor of a Gaussian."""
    a = rng.standard_normal((d, r))
    return GrassmannPoint(_thin_qr_posdiag(a), validate=False)


def random_tangent(p: GrassmannPoint, rng) -> TangentVector:
    """Random unit-norm horizontal tangent vector at p."""
    z = rng.standard_normal(p.shape)
    h = z - p.u @ (p.u.T @ z)
    n = np.linalg.norm(h)
    if n == 0.0:
        return TangentVector(h, p, validate=False)
    return TangentVector(h / n, p, validate=False)


def karcher_mean(points, tol: float = 1e-10, max_iter: int = 100) -> GrassmannPoint:
    """Karcher mean of a list of points by fixed-point iteration.

    Starting from points[0], repeatedly maps w <- exp_w(mean_i log_w(p_i))
    until the mean tangent has norm <= tol.

    Raises:
        ConvergenceError: if the tolerance is not met within max_iter
            steps. The exception carries the last iterate.
        DomainError: if some log in the average is undefined.
    """
    points = list(points)
    if not points:
        raise ContractViolation("karcher_mean needs at least one point")
    w = points[0]
    m = len(points)
    for _ in range(max_iter):
        acc = np.zeros(w.shape)
        for pt in points:
            acc += _log_factors(w.u, pt.u)[0]
        acc /= m
        if np.linalg.norm(acc) <= tol:
            return w
        w = exp(w, TangentVector(acc, w, validate=False))
    acc = np.zeros(w.shape)
    for pt in points:
        acc += _log_factors(w.u, pt.u)[0]
    acc /= m
    if np.linalg.norm(acc) <= tol:
        return w
    raise ConvergenceError(
        f"karcher mean did not reach tol={tol:g} within {max_iter} iterations "
        f"(residual {np.linalg.norm(acc):.3e})",
        last_iterate=w,
    )


class ExactGeometry(Geometry):
    """Geodesic exponential / parallel translation / logarithm bundle."""

    kind = "exact"

    def retract(self, p, xi):
        return exp(p, xi)

    def inverse_retract(self, p, q):
        return log(p, q)

    def transport(self, p, eta, xi):
        return parallel_translate(p, eta, xi)

    def transport_to(self, p, q, xi):
        """Parallel translation along log(p, q), expressed at q's
        representative.

        The log carrier has thin SVD W diag(theta) P^T, so its left
        singular vectors are recovered by a stable column scaling.
        exp(p, log(p, q)) reproduces q's subspace with representative
        U_q Q P^T; the carrier is rotated back by P Q^T so the result is
        based exactly at q.
        """
        _check_based_at(p, xi)
        _check_dims(p, q)
        if np.array_equal(p.u, q.u):
            return TangentVector(xi.carrier.copy(), q, validate=False)
        carrier, pmat, qmat, theta = _log_factors(p.u, q.u)
        wcols = carrier @ pmat                       # columns have norm theta_i
        safe = np.where(theta > 0.0, theta, 1.0)
        wtil = np.where((theta > 0.0)[np.newaxis, :], wcols / safe[np.newaxis, :], 0.0)
        a = wtil.T @ xi.carrier
        moved = (
            xi.carrier
            - ((p.u @ pmat) * np.sin(theta)[np.newaxis, :]) @ a
            - (wtil * (1.0 - np.cos(theta))[np.newaxis, :]) @ a
        )
        moved = moved @ pmat @ qmat.T
        moved -= q.u @ (q.u.T @ moved)
        return TangentVector(moved, q, validate=False)

    def dist(self, p, q):
        return dist(p, q)


class QrGeometry(Geometry):
    """QR retraction / horizontal projection transport / log inverse."""

    kind = "qr"

    def retract(self, p, xi):
        return qr_retract(p, xi)

    def inverse_retract(self, p, q):
        return log(p, q)

    def transport(self, p, eta, xi):
        return project_transport(p, eta, xi)

    def transport_to(self, p, q, xi):
        _check_based_at(p, xi)
        _check_dims(p, q)
        return _project_rescale(q, xi.carrier)

    def dist(self, p, q):
        return dist(p, q)


def make_geometry(kind, d: int, r: int) -> Geometry:
    """Factory for geometry bundles by kind ("exact" or "qr")."""
    kind = GeometryKind(kind)
    if kind is GeometryKind.EXACT:
        return ExactGeometry(d, r)
    if kind is GeometryKind.QR:
        return QrGeometry(d, r)
    raise ConfigurationError(f"unknown geometry kind: {kind!r}")


def _check_based_at(p: GrassmannPoint, xi: TangentVector):
    if xi.base is p:
        return
    if not np.array_equal(xi.base.u, p.u):
        raise ContractViolation(
            "tangent vector is based at a different point than the operation"
        )


def _check_dims(p: GrassmannPoint, q: GrassmannPoint):
    if p.shape != q.shape:
        raise ContractViolation(f"dimension mismatch: {p.shape} vs {q.shape}")
