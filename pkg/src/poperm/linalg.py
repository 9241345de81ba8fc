"""Dense-matrix helpers: the Sinkhorn operator, its VJP, and the Hungarian algorithm.

Matrices are plain ``float64`` numpy arrays. Sinkhorn functions accept any
number of leading batch axes (``(..., N, N)``); the Hungarian solver works on a
single square matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_SINKHORN_ITERS = 4


class ShapeError(ValueError):
    pass


def as_matrix(a, name: str = "matrix", ndim: int | None = None) -> np.ndarray:
    """Convert to a finite float64 array, raising on NaN/Inf."""
    arr = np.asarray(a, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def _square(a, name: str) -> np.ndarray:
    arr = as_matrix(a, name)
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise ShapeError(f"{name}: expected square matrix, got shape {arr.shape}")
    return arr


@dataclass
class SinkhornCache:
    """Intermediates of one :func:`sinkhorn` call.

    ``row_stages[l]`` is the matrix after the l-th row normalisation and
    ``row_sums[l]`` the sums it was divided by; likewise for columns.
    """

    exp: np.ndarray
    row_stages: list
    row_sums: list
    col_stages: list
    col_sums: list

    @property
    def shape(self):
        return self.exp.shape

    @property
    def iterations(self) -> int:
        return len(self.row_stages)


def sinkhorn(m, iters: int = DEFAULT_SINKHORN_ITERS):
    """Exponentiate, then alternately normalise rows and columns ``iters`` times.

    Returns ``(S, cache)``. The exponent is taken after subtracting each row's
    maximum, which leaves the result unchanged since the first row
    normalisation cancels any per-row factor.
    """
    m = _square(m, "sinkhorn input")
    if iters < 1:
        raise ValueError("sinkhorn needs at least one iteration")
    x = np.exp(m - m.max(axis=-1, keepdims=True))
    cache = SinkhornCache(exp=x, row_stages=[], row_sums=[], col_stages=[], col_sums=[])
    for _ in range(iters):
        rs = x.sum(axis=-1, keepdims=True)
        x = x / rs
        cache.row_stages.append(x)
        cache.row_sums.append(rs)
        cs = x.sum(axis=-2, keepdims=True)
        x = x / cs
        cache.col_stages.append(x)
        cache.col_sums.append(cs)
    return x, cache


def sinkhorn_vjp(cache: SinkhornCache, upstream) -> np.ndarray:
    """Gradient of ``<upstream, S(M)>`` with respect to ``M``."""
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.shape:
        raise ShapeError(f"upstream shape {g.shape} does not match cache {cache.shape}")
    for l in reversed(range(cache.iterations)):
        # y = x / colsum(x)  =>  dx = (dy - colsum(dy * y)) / colsum(x)
        y = cache.col_stages[l]
        g = (g - (g * y).sum(axis=-2, keepdims=True)) / cache.col_sums[l]
        y = cache.row_stages[l]
        g = (g - (g * y).sum(axis=-1, keepdims=True)) / cache.row_sums[l]
    return g * cache.exp


@dataclass(frozen=True)
class HardPermutation:
    """``assignment[k]`` is the index of the element placed at output position ``k``."""

    assignment: tuple

    def __post_init__(self):
        a = tuple(int(i) for i in self.assignment)
        if sorted(a) != list(range(len(a))):
            raise ValueError(f"not a bijection: {a}")
        object.__setattr__(self, "assignment", a)

    def __len__(self):
        return len(self.assignment)

    def as_array(self) -> np.ndarray:
        return np.array(self.assignment, dtype=np.int64)

    def matrix(self) -> np.ndarray:
        """Element-by-position 0/1 matrix with ``P[assignment[k], k] = 1``."""
        n = len(self.assignment)
        p = np.zeros((n, n))
        p[self.as_array(), np.arange(n)] = 1.0
        return p

    def inverse(self) -> "HardPermutation":
        return HardPermutation(tuple(np.argsort(self.as_array())))

    @classmethod
    def identity(cls, n: int) -> "HardPermutation":
        return cls(tuple(range(n)))


def assignment_cost(cost, assignment) -> float:
    """Total of ``cost[r, assignment[r]]``."""
    cost = np.asarray(cost, dtype=np.float64)
    if isinstance(assignment, HardPermutation):
        assignment = assignment.assignment
    idx = np.asarray(assignment, dtype=np.int64)
    return float(cost[np.arange(len(idx)), idx].sum())


def hungarian(cost) -> HardPermutation:
    """Minimum-cost linear assignment, O(N^3) shortest augmenting paths.

    Returns a permutation whose entry ``r`` is the column matched to row ``r``.
    To round a soft element-by-position matrix ``P`` into position->element
    form, call ``hungarian(-P.T)``.

    Rows are inserted in increasing index order and, among equal reduced
    costs, the lowest column index is taken, so results are deterministic.
    """
    a = _square(cost, "hungarian cost")
    if a.ndim != 2:
        raise ShapeError("hungarian expects a single 2-D matrix")
    n = a.shape[0]
    if n == 0:
        return HardPermutation(())
    # 1-indexed potentials; column 0 is a virtual source.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[col] = row (1-based), 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    row_to_col[match[1:] - 1] = np.arange(n)
    return HardPermutation(tuple(row_to_col))


def round_to_permutation(p) -> HardPermutation:
    """Hard position->element assignment nearest to an element-by-position matrix."""
    p = _square(p, "soft permutation")
    return hungarian(-p.T)
