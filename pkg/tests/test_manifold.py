"""Contract tests for points, tangent vectors and the metric."""

import numpy as np
import pytest

from riemann_svrg import (
    ContractViolation,
    ExactGeometry,
    GrassmannPoint,
    NumericError,
    TangentVector,
    random_point,
    random_tangent,
    subspace_distance,
    same_point,
)


def test_point_rejects_non_orthonormal():
    with pytest.raises(ContractViolation):
        GrassmannPoint(np.ones((4, 2)))


def test_point_rejects_bad_shape():
    with pytest.raises(ContractViolation):
        GrassmannPoint(np.eye(3)[:, :0])
    with pytest.raises(ContractViolation):
        GrassmannPoint(np.eye(2, 3))  # d < r


def test_point_rejects_nonfinite():
    u = np.eye(4)[:, :2].copy()
    u[0, 0] = np.nan
    with pytest.raises(NumericError):
        GrassmannPoint(u)


def test_point_is_immutable():
    p = GrassmannPoint(np.eye(4)[:, :2])
    with pytest.raises(AttributeError):
        p.u = np.zeros((4, 2))


def test_tangent_rejects_non_tangent_carrier():
    p = GrassmannPoint(np.eye(4)[:, :2])
    with pytest.raises(ContractViolation):
        TangentVector(p.u.copy(), p)  # lies in span(U), not horizontal


def test_tangent_shape_mismatch():
    p = GrassmannPoint(np.eye(4)[:, :2])
    with pytest.raises(ContractViolation):
        TangentVector(np.zeros((4, 3)), p)


def test_cross_base_arithmetic_raises():
    rng = np.random.default_rng(7)
    p = random_point(6, 2, rng)
    q = random_point(6, 2, rng)
    xi = random_tangent(p, rng)
    zeta = random_tangent(q, rng)
    with pytest.raises(ContractViolation):
        xi + zeta
    with pytest.raises(ContractViolation):
        xi - zeta


def test_tangent_linear_combinations():
    rng = np.random.default_rng(8)
    p = random_point(6, 2, rng)
    xi = random_tangent(p, rng)
    zeta = random_tangent(p, rng)
    combo = 2.0 * xi - 0.5 * zeta
    np.testing.assert_allclose(
        combo.carrier, 2.0 * xi.carrier - 0.5 * zeta.carrier, atol=1e-15
    )
    assert (-xi).carrier[0, 0] == -xi.carrier[0, 0]


def test_inner_matches_elementwise_trace():
    # oracle: trace(Xi^T Zeta) accumulated entry by entry
    rng = np.random.default_rng(21)
    geom = ExactGeometry(4, 2)
    p = random_point(4, 2, rng)
    xi = random_tangent(p, rng)
    zeta = random_tangent(p, rng)
    expected = 0.0
    for i in range(4):
        for j in range(2):
            expected += xi.carrier[i, j] * zeta.carrier[i, j]
    assert abs(geom.inner(p, xi, zeta) - expected) <= 1e-14
    # symmetry
    assert geom.inner(p, xi, zeta) == pytest.approx(geom.inner(p, zeta, xi), abs=1e-15)


def test_inner_rejects_foreign_base():
    rng = np.random.default_rng(22)
    geom = ExactGeometry(5, 2)
    p = random_point(5, 2, rng)
    q = random_point(5, 2, rng)
    zeta = random_tangent(q, rng)
    with pytest.raises(ContractViolation):
        geom.inner(p, zeta, zeta)


def test_norm_homogeneity():
    rng = np.random.default_rng(23)
    geom = ExactGeometry(7, 3)
    p = random_point(7, 3, rng)
    xi = random_tangent(p, rng)
    assert geom.norm(p, 3.5 * xi) == pytest.approx(3.5 * geom.norm(p, xi), rel=1e-14)
    assert geom.norm(p, geom.zero_tangent(p)) == 0.0


def test_project_gives_tangent():
    rng = np.random.default_rng(24)
    geom = ExactGeometry(6, 2)
    p = random_point(6, 2, rng)
    h = geom.project(p, rng.standard_normal((6, 2)))
    assert np.linalg.norm(p.u.T @ h.carrier) <= 1e-12
    # projecting twice changes nothing
    h2 = geom.project(p, h.carrier)
    np.testing.assert_allclose(h2.carrier, h.carrier, atol=1e-14)


def test_subspace_distance_zero_and_symmetry():
    rng = np.random.default_rng(25)
    p = random_point(8, 3, rng)
    q = random_point(8, 3, rng)
    assert subspace_distance(p, p) <= 1e-13
    assert subspace_distance(p, q) == pytest.approx(subspace_distance(q, p), rel=1e-10)
    assert same_point(p, p)
    assert not same_point(p, q)


def test_subspace_distance_gauge_invariant():
    # the same subspace under a different representative is at distance ~0
    rng = np.random.default_rng(26)
    p = random_point(8, 3, rng)
    o = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    p_rot = GrassmannPoint(p.u @ o)
    assert subspace_distance(p, p_rot) <= 1e-13


def test_point_and_tangent_pickle_roundtrip():
    # worker pools ship points and tangents between processes
    import copy
    import pickle

    rng = np.random.default_rng(27)
    p = random_point(8, 3, rng)
    xi = random_tangent(p, rng)
    p2 = pickle.loads(pickle.dumps(p))
    xi2 = pickle.loads(pickle.dumps(xi))
    assert np.array_equal(p2.u, p.u)
    assert np.array_equal(xi2.carrier, xi.carrier)
    assert np.array_equal(xi2.base.u, p.u)
    p3 = copy.deepcopy(p)
    assert np.array_equal(p3.u, p.u)
    with pytest.raises(AttributeError):
        p2.u = p.u
