"""Tests for synthetic instance generators and ratings-file loaders."""

import math

import numpy as np
import pytest

from riemann_svrg.datasets import (
    SyntheticCompletionSpec,
    gen_completion,
    gen_karcher,
    gen_pca,
    load_jester,
    load_movielens,
)
from riemann_svrg.errors import ConfigurationError, ParseError
from riemann_svrg.grassmann import dist


# -- gen_pca -----------------------------------------------------------------


def test_gen_pca_shape_and_determinism():
    a = gen_pca(40, 7, 3, np.random.default_rng(11))
    b = gen_pca(40, 7, 3, np.random.default_rng(11))
    assert a.x.shape == (7, 40)
    assert a.r == 3
    assert np.array_equal(a.x, b.x)


def test_gen_pca_covariance_approaches_identity():
    # Columns are i.i.d. standard normal, so X X^T / N -> I. At N = 1e5
    # the sampling error is far below the 10% band checked here.
    n, d = 100_000, 6
    prob = gen_pca(n, d, 2, np.random.default_rng(0))
    cov = prob.x @ prob.x.T / n
    assert np.linalg.norm(cov - np.eye(d), 2) < 0.1


# -- gen_karcher -------------------------------------------------------------


def test_gen_karcher_points_orthonormal():
    prob = gen_karcher(20, 12, 3, np.random.default_rng(5))
    assert prob.qstack.shape == (20, 12, 3)
    for q in prob.qstack:
        assert np.linalg.norm(q.T @ q - np.eye(3)) <= 1e-12


def test_gen_karcher_determinism():
    a = gen_karcher(6, 9, 2, np.random.default_rng(3))
    b = gen_karcher(6, 9, 2, np.random.default_rng(3))
    assert np.array_equal(a.qstack, b.qstack)


# -- completion spec ---------------------------------------------------------


def test_singular_values_closed_form():
    # Geometric decay spanning a factor cn, scaled so the planted matrix
    # has unit-variance entries: s_i = sqrt(n*d) * cn^(-i/(r-1)).
    s = SyntheticCompletionSpec(n=200, d=20, r=5, os=1.0, cn=5.0).singular_values
    scale = math.sqrt(200 * 20)
    assert s[0] == scale
    assert s[0] / s[-1] == pytest.approx(5.0, rel=1e-15)
    ratios = s[:-1] / s[1:]
    assert np.allclose(ratios, 5.0 ** 0.25, rtol=1e-15)
    expected = scale * np.asarray([5.0 ** (-i / 4.0) for i in range(5)])
    assert np.array_equal(s, expected)


def test_singular_values_rank_one():
    s = SyntheticCompletionSpec(n=10, d=8, r=1, os=1.0, cn=7.0).singular_values
    assert np.array_equal(s, np.full(1, math.sqrt(80)))


def test_observed_count_formula():
    # os * (n + d - r) * r, checked against hand-computed values.
    assert SyntheticCompletionSpec(n=50, d=20, r=3, os=2.0).observed_count == 402
    assert (
        SyntheticCompletionSpec(n=5000, d=500, r=5, os=5.0).observed_count == 137_375
    )


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        SyntheticCompletionSpec(n=10, d=10, r=3, os=2.0)  # 102 > 100 entries
    with pytest.raises(ConfigurationError):
        SyntheticCompletionSpec(n=10, d=10, r=3, os=1.0)  # no room for test set
    with pytest.raises(ConfigurationError):
        SyntheticCompletionSpec(n=10, d=10, r=3, cn=0.5)
    with pytest.raises(ConfigurationError):
        SyntheticCompletionSpec(n=10, d=10, r=11)
    with pytest.raises(ConfigurationError):
        SyntheticCompletionSpec(n=10, d=10, r=3, noise_std=-0.1)
    with pytest.raises(ConfigurationError):
        SyntheticCompletionSpec(n=10, d=10, r=3, os=-2.0)


# -- gen_completion ----------------------------------------------------------

SMALL_SPEC = SyntheticCompletionSpec(n=50, d=20, r=3, os=2.0, cn=5.0)


def _column_sets(problem):
    train, test = [], []
    for j in range(problem.n_samples):
        train.append(set(problem.rows[problem.indptr[j] : problem.indptr[j + 1]]))
        test.append(
            set(problem.rows[0:0])
            | set(problem.test_rows[problem.test_indptr[j] : problem.test_indptr[j + 1]])
        )
    return train, test


def test_gen_completion_counts_and_disjointness():
    prob = gen_completion(SMALL_SPEC, np.random.default_rng(2))
    assert prob.n_samples == 50
    assert prob.d == 20
    assert prob.indptr[-1] == 402
    assert prob.test_indptr[-1] == 402
    train, test = _column_sets(prob)
    for tr, te in zip(train, test):
        assert not (tr & te)


def test_gen_completion_exact_at_planted_subspace():
    # Noiseless observations are consistent with the planted factorization,
    # so the fitted residual at the reference subspace vanishes.
    prob = gen_completion(SMALL_SPEC, np.random.default_rng(7))
    assert prob.cost(prob.reference) < 1e-20
    assert prob.test_loss(prob.reference) < 1e-20
    g = prob.grad(prob.reference)
    assert np.linalg.norm(g.carrier) < 1e-10


def test_gen_completion_noise():
    noisy_spec = SyntheticCompletionSpec(n=50, d=20, r=3, os=2.0, cn=5.0, noise_std=0.5)
    clean = gen_completion(SMALL_SPEC, np.random.default_rng(4))
    noisy = gen_completion(noisy_spec, np.random.default_rng(4))
    # Same entry draw, perturbed values: the planted subspace no longer fits.
    assert np.array_equal(clean.rows, noisy.rows)
    assert not np.allclose(clean.vals, noisy.vals)
    assert noisy.cost(noisy.reference) > 1e-4


def test_gen_completion_determinism():
    a = gen_completion(SMALL_SPEC, np.random.default_rng(9))
    b = gen_completion(SMALL_SPEC, np.random.default_rng(9))
    assert np.array_equal(a.rows, b.rows)
    assert np.array_equal(a.vals, b.vals)
    assert np.array_equal(a.test_vals, b.test_vals)
    assert np.array_equal(a.reference.u, b.reference.u)


def test_gen_completion_reference_consistency():
    prob = gen_completion(SMALL_SPEC, np.random.default_rng(12))
    u = prob.reference.u
    assert u.shape == (20, 3)
    assert np.linalg.norm(u.T @ u - np.eye(3)) < 1e-13
    assert dist(prob.reference, prob.reference) < 1e-12


def test_gen_completion_reg_passthrough():
    prob = gen_completion(SMALL_SPEC, np.random.default_rng(2), reg=0.01)
    assert prob.reg == 0.01


# -- movielens loader --------------------------------------------------------


def _ml_line(user, movie, rating, ts=978300760):
    return f"{user}::{movie}::{rating}::{ts}"


@pytest.fixture
def ml_file(tmp_path):
    def write(lines):
        p = tmp_path / "ratings.dat"
        p.write_text("\n".join(lines) + "\n")
        return p

    return write


def test_movielens_basic(ml_file):
    lines = []
    for u in range(1, 5):
        for m in range(1, 6):
            lines.append(_ml_line(u, m, float(u + m)))
    prob = load_movielens(ml_file(lines), r=2, rng=np.random.default_rng(0))
    assert prob.d == 5
    assert prob.n_samples == 4
    # floor(0.2 * 5) = 1 rating held out per user
    for j in range(4):
        assert prob.test_indptr[j + 1] - prob.test_indptr[j] == 1
        assert prob.indptr[j + 1] - prob.indptr[j] == 4
    assert prob.indptr[-1] + prob.test_indptr[-1] == 20


def test_movielens_values_and_indexing(ml_file):
    # Single user keeps everything in the training set at holdout 0.
    lines = [_ml_line(1, 3, 4.5), _ml_line(1, 7, 2.0)]
    prob = load_movielens(ml_file(lines), r=1, rng=np.random.default_rng(0), holdout=0.0)
    assert prob.d == 7
    assert prob.n_samples == 1
    assert np.array_equal(prob.rows, [2, 6])
    assert np.array_equal(prob.vals, [4.5, 2.0])
    assert prob.test_indptr[-1] == 0


def test_movielens_duplicate_last_wins(ml_file):
    lines = [_ml_line(1, 1, 1.0), _ml_line(1, 2, 3.0), _ml_line(1, 1, 5.0)]
    with pytest.warns(UserWarning, match="duplicate"):
        prob = load_movielens(
            ml_file(lines), r=1, rng=np.random.default_rng(0), holdout=0.0
        )
    assert prob.indptr[-1] == 2
    assert prob.vals[prob.rows == 0][0] == 5.0


def test_movielens_parse_errors(ml_file):
    bad_field_count = [_ml_line(1, 1, 2.0), "1::2::3.0"]
    with pytest.raises(ParseError, match=":2:"):
        load_movielens(ml_file(bad_field_count), r=1, rng=np.random.default_rng(0))
    bad_number = [_ml_line(1, 1, 2.0), _ml_line(1, 2, 3.0), "1::x::3.0::0"]
    with pytest.raises(ParseError, match=":3:"):
        load_movielens(ml_file(bad_number), r=1, rng=np.random.default_rng(0))
    zero_based = [_ml_line(0, 1, 2.0)]
    with pytest.raises(ParseError, match="1-based"):
        load_movielens(ml_file(zero_based), r=1, rng=np.random.default_rng(0))
    with pytest.raises(ParseError, match="no ratings"):
        load_movielens(ml_file([""]), r=1, rng=np.random.default_rng(0))


def test_movielens_split_determinism(ml_file):
    lines = [_ml_line(1, m, float(m)) for m in range(1, 11)]
    path = ml_file(lines)
    a = load_movielens(path, r=1, rng=np.random.default_rng(42))
    b = load_movielens(path, r=1, rng=np.random.default_rng(42))
    assert np.array_equal(a.test_rows, b.test_rows)
    assert a.test_indptr[-1] == 2  # floor(0.2 * 10)


def test_movielens_center(ml_file):
    lines = [_ml_line(1, m, float(m)) for m in range(1, 6)]
    prob = load_movielens(
        ml_file(lines), r=1, rng=np.random.default_rng(0), holdout=0.0, center=True
    )
    assert abs(np.mean(prob.vals)) < 1e-12


def test_movielens_bad_holdout(ml_file):
    lines = [_ml_line(1, 1, 1.0)]
    with pytest.raises(ConfigurationError):
        load_movielens(ml_file(lines), r=1, rng=np.random.default_rng(0), holdout=1.0)


# -- jester loader -----------------------------------------------------------


def _jester_row(pairs):
    fields = ["99"] * 100
    for joke, val in pairs.items():
        fields[joke] = repr(val)
    return ",".join([str(len(pairs))] + fields)


@pytest.fixture
def jester_file(tmp_path):
    def write(rows):
        p = tmp_path / "jester.csv"
        p.write_text("\n".join(rows) + "\n")
        return p

    return write


def test_jester_basic(jester_file):
    rows = [
        _jester_row({0: 1.5, 10: -3.25, 40: 9.9, 77: 0.0, 99: -10.0}),
        _jester_row({3: 2.0, 4: -2.0}),
        _jester_row({50: 7.75}),
    ]
    prob = load_jester(jester_file(rows), r=2, rng=np.random.default_rng(1))
    assert prob.d == 100
    assert prob.n_samples == 3
    # Two held-out ratings per user, capped by what the user rated.
    sizes_test = np.diff(prob.test_indptr)
    sizes_train = np.diff(prob.indptr)
    assert list(sizes_test) == [2, 2, 1]
    assert list(sizes_train) == [3, 0, 0]
    # Counting oracle: every non-sentinel rating lands in exactly one split.
    assert prob.indptr[-1] + prob.test_indptr[-1] == 8


def test_jester_sentinel_excluded(jester_file):
    rows = [_jester_row({5: 1.0, 6: -1.0, 7: 2.5})]
    prob = load_jester(jester_file(rows), r=1, rng=np.random.default_rng(0))
    all_vals = np.concatenate([prob.vals, prob.test_vals])
    assert all_vals.size == 3
    assert not np.any(all_vals == 99.0)


def test_jester_range_check(jester_file):
    rows = [_jester_row({0: 1.0}), _jester_row({1: 12.0})]
    with pytest.raises(ParseError, match=":2:.*12"):
        load_jester(jester_file(rows), r=1, rng=np.random.default_rng(0))


def test_jester_field_count(jester_file):
    rows = [_jester_row({0: 1.0}) + ",0.5"]
    with pytest.raises(ParseError, match="expected 101"):
        load_jester(jester_file(rows), r=1, rng=np.random.default_rng(0))


def test_jester_bad_number(jester_file):
    # The leading count field is not interpreted; a corrupt rating field is.
    rows = [_jester_row({0: 1.0}).replace("1.0", "x")]
    with pytest.raises(ParseError, match=":1:"):
        load_jester(jester_file(rows), r=1, rng=np.random.default_rng(0))


def test_jester_split_determinism(jester_file):
    rows = [_jester_row({j: (j % 19) - 9.0 for j in range(0, 60, 3)})]
    path = jester_file(rows)
    a = load_jester(path, r=2, rng=np.random.default_rng(8))
    b = load_jester(path, r=2, rng=np.random.default_rng(8))
    assert np.array_equal(a.test_rows, b.test_rows)
    assert np.array_equal(a.rows, b.rows)
    assert a.test_indptr[-1] == 2


def test_jester_empty_file(jester_file):
    with pytest.raises(ParseError, match="no rating rows"):
        load_jester(jester_file([""]), r=1, rng=np.random.default_rng(0))
