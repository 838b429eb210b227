"""Problem instance construction: synthetic generators and ratings loaders.

Synthetic generators draw from a caller-supplied numpy Generator so that
the experiment layer can route all randomness through its named
substreams. Loaders parse real ratings files into column-observation
form; their train/test splits are seeded the same way.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError
from .grassmann import random_point
from .manifold import GrassmannPoint
from .problems import CompletionProblem, KarcherProblem, PcaProblem

JESTER_FIELDS = 101  # leading count plus one rating slot per joke
JESTER_SENTINEL = 99.0


def gen_pca(n: int, d: int, r: int, rng) -> PcaProblem:
    """Subspace-fitting instance with i.i.d. standard normal columns."""
    x = rng.standard_normal((d, n))
    return PcaProblem(x, r)


def gen_karcher(n: int, d: int, r: int, rng) -> KarcherProblem:
    """Averaging instance over n uniformly random subspaces."""
    stack = np.empty((n, d, r))
    for i in range(n):
        stack[i] = random_point(d, r, rng).u
    return KarcherProblem(stack)


@dataclass(frozen=True)
class SyntheticCompletionSpec:
    """Low-rank completion instance description.

    The planted matrix is L diag(sigma) R^T with L, R orthonormal factors
    of Gaussian draws and sigma decaying geometrically, cn being the ratio
    of the extreme singular values. The spectrum is scaled by sqrt(n*d) so
    entries come out with unit-order variance, the same scale a raw
    Gaussian factor model would give; step sizes quoted for this family
    assume that scale. os controls how many entries are revealed:
    os*(n+d-r)*r, i.e. os times the degrees of freedom of a rank-r matrix
    of that shape.
    """

    n: int
    d: int
    r: int
    os: float = 5.0
    cn: float = 5.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or not (1 <= self.r <= min(self.d, self.n)):
            raise ConfigurationError(
                f"bad completion dimensions n={self.n}, d={self.d}, r={self.r}"
            )
        if self.cn < 1.0:
            raise ConfigurationError(f"condition number must be >= 1, got {self.cn}")
        if self.os <= 0.0:
            raise ConfigurationError(f"oversampling must be positive, got {self.os}")
        if self.noise_std < 0.0:
            raise ConfigurationError(f"negative noise_std {self.noise_std}")
        if self.observed_count > self.n * self.d:
            raise ConfigurationError(
                f"oversampling {self.os} asks for {self.observed_count} observed "
                f"entries but the matrix has only {self.n * self.d}"
            )
        if 2 * self.observed_count > self.n * self.d:
            raise ConfigurationError(
                "not enough entries left for a disjoint test sample of equal size"
            )

    @property
    def observed_count(self) -> int:
        return int(round(self.os * (self.n + self.d - self.r) * self.r))

    @property
    def singular_values(self) -> np.ndarray:
        scale = math.sqrt(self.n * self.d)
        if self.r == 1:
            return np.full(1, scale)
        return scale * self.cn ** (-np.arange(self.r) / (self.r - 1))


def gen_completion(spec: SyntheticCompletionSpec, rng, reg: float = 0.0) -> CompletionProblem:
    """Planted low-rank completion instance.

    Reveals spec.observed_count entries uniformly without replacement as
    the training set and a disjoint sample of the same size as the test
    set. Gaussian noise, when requested, is added to every revealed entry.
    The returned problem carries the planted column space as a
    ``reference`` attribute for distance-to-truth metrics.
    """
    lfac = np.linalg.qr(rng.standard_normal((spec.d, spec.r)))[0]
    rfac = np.linalg.qr(rng.standard_normal((spec.n, spec.r)))[0]
    full = (lfac * spec.singular_values) @ rfac.T

    m = spec.observed_count
    flat = rng.choice(spec.n * spec.d, size=2 * m, replace=False)
    train_flat, test_flat = flat[:m], flat[m:]

    def columns_from(flat_idx, noisy):
        cols = [[] for _ in range(spec.n)]
        for f in flat_idx:
            cols[f // spec.d].append(f % spec.d)
        out = []
        for j in range(spec.n):
            idx = np.sort(np.asarray(cols[j], dtype=np.int64))
            vals = full[idx, j].copy()
            if noisy is not None and idx.size:
                vals += noisy * rng.standard_normal(idx.size)
            out.append((idx, vals))
        return out

    noise = spec.noise_std if spec.noise_std > 0.0 else None
    columns = columns_from(train_flat, noise)
    test_columns = columns_from(test_flat, noise)
    problem = CompletionProblem(spec.d, spec.r, columns, test_columns=test_columns, reg=reg)
    problem.reference = GrassmannPoint(lfac)
    return problem


# -- ratings loaders ---------------------------------------------------------


def detect_format(path) -> str:
    """Sniff a ratings file: "::"-separated lines vs. the 101-field
    joke-ratings CSV, judged from the first non-empty line."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if "::" in line:
                return "movielens"
            if len(line.split(",")) == JESTER_FIELDS:
                return "jester"
            raise ParseError(f"{path}: unrecognized ratings format")
    raise ParseError(f"{path}: empty file")


def load_movielens(path, r: int, rng, holdout: float = 0.2, center: bool = False,
                   reg: float = 0.0):
    """Ratings file in the "UserID::MovieID::Rating::Timestamp" line format.

    Users become columns and movies rows; 1-based ids map to 0-based
    indices, with the dimensions taken from the largest ids present.
    A seeded fraction of each user's ratings (floor(holdout * count)) is
    held out as the test set. Duplicate (user, movie) pairs keep the last
    value and emit a warning. ``center`` subtracts the training-set mean
    from every rating.

    Raises:
        ParseError: on any malformed line, with its 1-based line number.
    """
    if not (0.0 <= holdout < 1.0):
        raise ConfigurationError(f"holdout fraction must be in [0, 1), got {holdout}")
    ratings = {}
    n_lines = 0
    duplicates = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            n_lines += 1
            parts = line.split("::")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 '::' fields")
            try:
                user = int(parts[0])
                movie = int(parts[1])
                value = float(parts[2])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if user < 1 or movie < 1:
                raise ParseError(f"{path}:{lineno}: ids are 1-based")
            key = (user - 1, movie - 1)
            if key in ratings:
                duplicates += 1
            ratings[key] = value
    if not ratings:
        raise ParseError(f"{path}: no ratings found")
    if duplicates:
        warnings.warn(f"{duplicates} duplicate ratings; kept the last occurrence")

    n = 1 + max(u for u, _ in ratings)
    d = 1 + max(m for _, m in ratings)
    per_user = [[] for _ in range(n)]
    for (u, m), v in ratings.items():
        per_user[u].append((m, v))

    columns, test_columns = [], []
    for u in range(n):
        entries = sorted(per_user[u])
        cnt = len(entries)
        k_test = int(holdout * cnt)
        order = rng.permutation(cnt)
        test_pos = np.sort(order[:k_test])
        mask = np.zeros(cnt, dtype=bool)
        mask[test_pos] = True
        rows = np.array([e[0] for e in entries], dtype=np.int64)
        vals = np.array([e[1] for e in entries])
        columns.append((rows[~mask], vals[~mask]))
        test_columns.append((rows[mask], vals[mask]))

    if center:
        mean = _observed_mean(columns)
        columns = [(rows, vals - mean) for rows, vals in columns]
        test_columns = [(rows, vals - mean) for rows, vals in test_columns]
    return CompletionProblem(d, r, columns, test_columns=test_columns, reg=reg)


def load_jester(path, r: int, rng, center: bool = False, reg: float = 0.0):
    """Joke-ratings table: per user a count field then 100 rating slots,
    99 marking a missing rating and real ratings lying in [-10, 10].

    Jokes become rows (d = 100) and users columns. Two observed ratings
    per user (fewer when a user has fewer) are drawn, seeded, into the
    test set; the remainder form the training set, so a user with exactly
    two ratings contributes an empty training column.
    """
    columns, test_columns = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != JESTER_FIELDS:
                raise ParseError(
                    f"{path}:{lineno}: expected {JESTER_FIELDS} fields, got {len(parts)}"
                )
            try:
                values = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            rows, vals = [], []
            for j, v in enumerate(values):
                if v == JESTER_SENTINEL:
                    continue
                if not (-10.0 <= v <= 10.0):
                    raise ParseError(
                        f"{path}:{lineno}: rating {v} outside [-10, 10]"
                    )
                rows.append(j)
                vals.append(v)
            rows = np.asarray(rows, dtype=np.int64)
            vals = np.asarray(vals)
            k_test = min(2, rows.size)
            order = rng.permutation(rows.size)
            test_pos = np.sort(order[:k_test])
            mask = np.zeros(rows.size, dtype=bool)
            mask[test_pos] = True
            columns.append((rows[~mask], vals[~mask]))
            test_columns.append((rows[mask], vals[mask]))
    if not columns:
        raise ParseError(f"{path}: no rating rows found")
    if center:
        mean = _observed_mean(columns)
        columns = [(rows, vals - mean) for rows, vals in columns]
        test_columns = [(rows, vals - mean) for rows, vals in test_columns]
    return CompletionProblem(100, r, columns, test_columns=test_columns, reg=reg)


def _observed_mean(columns) -> float:
    total = 0.0
    count = 0
    for _rows, vals in columns:
        total += float(np.sum(vals))
        count += vals.size
    if count == 0:
        return 0.0
    return total / count
