"""Core manifold types: points, tangent vectors and the geometry interface.

A point on the Grassmann manifold Gr(r, d) is an r-dimensional subspace of
R^d, represented by a d x r matrix with orthonormal columns. The
representative is not unique: U and U @ O span the same subspace for any
orthogonal r x r matrix O. Equality of points therefore means equality of
subspaces, never equality of matrices; use :func:`subspace_distance` to
compare points in tests.

Tangent vectors are stored together with a reference to their base point.
Arithmetic between tangent vectors at different base points is meaningless
and raises :class:`~riemann_svrg.errors.ContractViolation`.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NumericError

ORTHONORMALITY_ATOL = 1e-10
TANGENCY_ATOL = 1e-10


class GrassmannPoint:
    """A point on Gr(r, d): an orthonormal d x r representative.

    Args:
        u: array of shape (d, r) with orthonormal columns.
        validate: when True (default), check orthonormality on construction.
    """

    __slots__ = ("u",)

    def __init__(self, u, validate=True):
        u = np.ascontiguousarray(u, dtype=np.float64)
        if u.ndim != 2 or u.shape[0] < u.shape[1] or u.shape[1] < 1:
            raise ContractViolation(
                f"point representative must be d x r with d >= r >= 1, got shape {u.shape}"
            )
        if validate:
            if not np.all(np.isfinite(u)):
                raise NumericError("point representative contains non-finite entries")
            defect = np.linalg.norm(u.T @ u - np.eye(u.shape[1]))
            if defect > ORTHONORMALITY_ATOL:
                raise ContractViolation(
                    f"columns are not orthonormal: ||U^T U - I||_F = {defect:.3e}"
                )
        object.__setattr__(self, "u", u)

    def __setattr__(self, name, value):
        raise AttributeError("GrassmannPoint is immutable")

    def __reduce__(self):
        # default slot-state restoration would hit the immutable __setattr__
        return (self.__class__, (self.u, False))

    @property
    def d(self) -> int:
        return self.u.shape[0]

    @property
    def r(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self):
        return self.u.shape

    def __repr__(self):
        return f"GrassmannPoint(d={self.d}, r={self.r})"


class TangentVector:
    """A tangent vector at a point of Gr(r, d).

    The carrier is a d x r matrix Xi in the horizontal space at the base
    representative U, i.e. U^T Xi = 0. Vectors remember their base point;
    combining vectors from different base points raises ContractViolation.
    """

    __slots__ = ("carrier", "base")

    def __init__(self, carrier, base: GrassmannPoint, validate=True):
        carrier = np.ascontiguousarray(carrier, dtype=np.float64)
        if carrier.shape != base.shape:
            raise ContractViolation(
                f"carrier shape {carrier.shape} does not match base shape {base.shape}"
            )
        if validate:
            if not np.all(np.isfinite(carrier)):
                raise NumericError("tangent carrier contains non-finite entries")
            defect = np.linalg.norm(base.u.T @ carrier)
            # scale-aware: a large vector is allowed proportionally more slack
            scale = max(1.0, np.linalg.norm(carrier))
            if defect > TANGENCY_ATOL * scale:
                raise ContractViolation(
                    f"carrier is not tangent at base: ||U^T Xi|| = {defect:.3e}"
                )
        object.__setattr__(self, "carrier", carrier)
        object.__setattr__(self, "base", base)

    def __setattr__(self, name, value):
        raise AttributeError("TangentVector is immutable")

    def __reduce__(self):
        return (self.__class__, (self.carrier, self.base, False))

    def _check_same_base(self, other: "TangentVector"):
        if self.base is other.base:
            return
        if not np.array_equal(self.base.u, other.base.u):
            raise ContractViolation(
                "cannot combine tangent vectors with different base points"
            )

    def __add__(self, other):
        if not isinstance(other, TangentVector):
            return NotImplemented
        self._check_same_base(other)
        return TangentVector(self.carrier + other.carrier, self.base, validate=False)

    def __sub__(self, other):
        if not isinstance(other, TangentVector):
            return NotImplemented
        self._check_same_base(other)
        return TangentVector(self.carrier - other.carrier, self.base, validate=False)

    def __neg__(self):
        return TangentVector(-self.carrier, self.base, validate=False)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return TangentVector(self.carrier * float(scalar), self.base, validate=False)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.carrier))

    def __repr__(self):
        return f"TangentVector(norm={self.norm():.6g}, base={self.base!r})"


def subspace_distance(p: GrassmannPoint, q: GrassmannPoint) -> float:
    """Projection-matrix distance ||P_p - P_q||_F between two subspaces.

    Computed as sqrt(2) * ||(I - U U^T) V||_F, which is accurate for nearby
    subspaces where the textbook form sqrt(2r - 2 ||U^T V||_F^2) cancels
    catastrophically.
    """
    u, v = p.u, q.u
    b = v - u @ (u.T @ v)
    return float(np.sqrt(2.0) * np.linalg.norm(b))


def same_point(p: GrassmannPoint, q: GrassmannPoint, atol=1e-8) -> bool:
    """Whether two points represent the same subspace up to atol."""
    return subspace_distance(p, q) <= atol


class Geometry:
    """Interface shared by the metric/retraction bundles on Gr(r, d).

    Implementations are stateless: every method is a pure function of its
    arguments. Two bundles exist, the exact one (geodesic exponential,
    parallel translation, log) and the QR one (QR retraction, horizontal
    projection transport, log-based inverse).
    """

    kind = "abstract"

    def __init__(self, d: int, r: int):
        if not (1 <= r <= d):
            raise ContractViolation(f"need 1 <= r <= d, got r={r}, d={d}")
        self.d = int(d)
        self.r = int(r)

    # -- metric --------------------------------------------------------

    def inner(self, p: GrassmannPoint, xi: TangentVector, zeta: TangentVector) -> float:
        """Canonical metric <xi, zeta> = trace(Xi^T Zeta) at p."""
        self._check_at(p, xi)
        self._check_at(p, zeta)
        return float(np.sum(xi.carrier * zeta.carrier))

    def norm(self, p: GrassmannPoint, xi: TangentVector) -> float:
        self._check_at(p, xi)
        return float(np.linalg.norm(xi.carrier))

    def zero_tangent(self, p: GrassmannPoint) -> TangentVector:
        return TangentVector(np.zeros(p.shape), p, validate=False)

    def project(self, p: GrassmannPoint, mat) -> TangentVector:
        """Orthogonal projection of an arbitrary d x r matrix onto the
        horizontal space at p: M - U (U^T M)."""
        mat = np.asarray(mat, dtype=np.float64)
        h = mat - p.u @ (p.u.T @ mat)
        return TangentVector(h, p, validate=False)

    # -- retraction bundle (implemented by subclasses) -----------------

    def retract(self, p: GrassmannPoint, xi: TangentVector) -> GrassmannPoint:
        raise NotImplementedError

    def inverse_retract(self, p: GrassmannPoint, q: GrassmannPoint) -> TangentVector:
        raise NotImplementedError

    def transport(self, p: GrassmannPoint, eta: TangentVector, xi: TangentVector) -> TangentVector:
        """Transport xi from p to retract(p, eta)."""
        raise NotImplementedError

    def transport_to(self, p: GrassmannPoint, q: GrassmannPoint, xi: TangentVector) -> TangentVector:
        """Transport xi from p directly to a known destination point q.

        Equivalent to ``transport(p, inverse_retract(p, q), xi)`` but lands
        exactly on q's representative, which is what an optimizer stepping
        between known iterates needs.
        """
        raise NotImplementedError

    def dist(self, p: GrassmannPoint, q: GrassmannPoint) -> float:
        """Geodesic distance (2-norm of the principal angles)."""
        raise NotImplementedError

    # -- randomness -----------------------------------------------------

    def random_point(self, rng) -> GrassmannPoint:
        from . import grassmann

        return grassmann.random_point(self.d, self.r, rng)

    def random_tangent(self, p: GrassmannPoint, rng) -> TangentVector:
        from . import grassmann

        return grassmann.random_tangent(p, rng)

    # -- helpers ---------------------------------------------------------

    def _check_at(self, p: GrassmannPoint, xi: TangentVector):
        if xi.base is p:
            return
        if not np.array_equal(xi.base.u, p.u):
            raise ContractViolation(
                "tangent vector is based at a different point than the operation"
            )

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d}, r={self.r})"
