"""Exhaustive and quadratic-form cross-checks for the total cost.

Both routes here are deliberately naive: they exist to verify the matrix
formulas in :mod:`poperm.permopt`, not to be fast.
"""
from __future__ import annotations

import itertools

import numpy as np

from .linalg import HardPermutation, ShapeError
from .permopt import ComparisonStructure

MAX_Q_SIZE = 12
MAX_BRUTE_SIZE = 8


class SizeGuardError(ValueError):
    pass


def _channels(C, structure: ComparisonStructure) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim == 2:
        C = C[None]
    if C.shape != structure.O.shape:
        raise ShapeError(f"cost {C.shape} does not match structure {structure.O.shape}")
    return C


def build_q(C, structure: ComparisonStructure) -> np.ndarray:
    """Dense ``Q`` with ``Q[i*N + k, j*N + k2] = sum_c C_c[i, j] * O_c[k, k2]``.

    With ``p = P.ravel()`` (row-major), ``p @ Q @ p`` equals the total cost.
    """
    C = _channels(C, structure)
    n = structure.n
    if n > MAX_Q_SIZE:
        raise SizeGuardError(f"Q for N={n} exceeds the N<={MAX_Q_SIZE} guard")
    Q = np.zeros((n * n, n * n))
    for c in range(structure.channels):
        for i in range(n):
            for k in range(n):
                for j in range(n):
                    for k2 in range(n):
                        Q[i * n + k, j * n + k2] += C[c, i, j] * structure.O[c, k, k2]
    return Q


def quadratic_cost(Q, P) -> float:
    p = np.asarray(P, dtype=np.float64).ravel()
    return float(p @ Q @ p)


def pairwise_cost(C, perm, structure: ComparisonStructure) -> float:
    """Total cost of a hard position->element assignment, summed pair by pair."""
    C = _channels(C, structure)
    pos = np.argsort(np.asarray(perm))  # element -> position
    n = len(pos)
    total = 0.0
    for c in range(structure.channels):
        for i in range(n):
            for j in range(n):
                total += C[c, i, j] * structure.O[c, pos[i], pos[j]]
    return total


def _search(C, structure: ComparisonStructure, sign: float):
    C = _channels(C, structure)
    n = structure.n
    if n > MAX_BRUTE_SIZE:
        raise SizeGuardError(f"exhaustive search over {n}! permutations exceeds N<={MAX_BRUTE_SIZE}")
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(n)):  # lexicographic order
        cost = sign * pairwise_cost(C, perm, structure)
        if cost < best_cost:
            best, best_cost = perm, cost
    return HardPermutation(best), sign * best_cost


def brute_min(C, structure: ComparisonStructure):
    """Lexicographically first hard permutation of minimum total cost."""
    return _search(C, structure, 1.0)


def brute_max(C, structure: ComparisonStructure):
    return _search(C, structure, -1.0)


def brute_assignment(cost):
    """Minimum linear-assignment cost by enumeration (rows -> columns)."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if n > MAX_BRUTE_SIZE:
        raise SizeGuardError(f"enumerating {n}! assignments exceeds N<={MAX_BRUTE_SIZE}")
    rows = np.arange(n)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)
    totals = cost[rows, perms].sum(axis=1)
    best = int(np.argmin(totals))
    return HardPermutation(tuple(perms[best])), float(totals[best])
