"""Permutation optimisation by unrolled gradient descent.

Conventions: ``P`` is element-by-position, ``P[i, k]`` being the weight of
element ``i`` at output position ``k``, so the permuted set is ``P.T @ X``.
All array functions accept leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import DEFAULT_SINKHORN_ITERS, ShapeError, as_matrix, sinkhorn, sinkhorn_vjp
from .ordering import OrderingCostParams, cost_matrix, cost_matrix_vjp

INIT_UNIFORM = "uniform"
INIT_LINEAR = "linear-assignment"


@dataclass(frozen=True)
class PoConfig:
    n: int
    T: int = 6
    eta: float = 1.0
    L: int = DEFAULT_SINKHORN_ITERS
    init: str = INIT_UNIFORM
    grid: Optional[tuple] = None  # (rows, cols); None means a sequence

    def __post_init__(self):
        if self.T < 1 or self.L < 1:
            raise ValueError("T and L must be at least 1")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.init not in (INIT_UNIFORM, INIT_LINEAR):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.grid is not None:
            rows, cols = self.grid
            if rows * cols != self.n:
                raise ValueError(f"grid {rows}x{cols} does not hold {self.n} elements")

    @property
    def channels(self) -> int:
        return 1 if self.grid is None else 2

    def structure(self) -> "ComparisonStructure":
        if self.grid is None:
            return ComparisonStructure.sequence(self.n)
        return ComparisonStructure.grid(*self.grid)


@dataclass
class InitParams:
    W: np.ndarray  # (positions, featdim)

    def __post_init__(self):
        self.W = as_matrix(self.W, "init W", ndim=2)


@dataclass(frozen=True)
class ComparisonStructure:
    """Per-channel relative-position sign matrices ``O``, shape ``(K, N, N)``.

    ``O[c, k, k2]`` is +1 when position ``k2`` comes after ``k`` along channel
    ``c``, -1 when before, and 0 when the channel does not relate them.
    """

    O: np.ndarray

    @classmethod
    def sequence(cls, n: int) -> "ComparisonStructure":
        k = np.arange(n)
        return cls(np.sign(k[None, :] - k[:, None]).astype(np.float64)[None])

    @classmethod
    def grid(cls, rows: int, cols: int) -> "ComparisonStructure":
        r, c = np.divmod(np.arange(rows * cols), cols)  # row-major positions
        same_row = r[:, None] == r[None, :]
        same_col = c[:, None] == c[None, :]
        along_row = np.where(same_row, np.sign(c[None, :] - c[:, None]), 0)
        along_col = np.where(same_col, np.sign(r[None, :] - r[:, None]), 0)
        return cls(np.stack([along_row, along_col]).astype(np.float64))

    @property
    def channels(self) -> int:
        return self.O.shape[0]

    @property
    def n(self) -> int:
        return self.O.shape[-1]


def _check_cost(C, P, structure: ComparisonStructure):
    C = np.asarray(C, dtype=np.float64)
    if C.ndim == P.ndim:  # single channel given without a channel axis
        C = C[..., None, :, :]
    if C.shape[-3] != structure.channels or C.shape[-1] != structure.n or P.shape[-1] != structure.n:
        raise ShapeError(
            f"cost {C.shape}, P {P.shape} and structure ({structure.channels} x {structure.n}) disagree"
        )
    return C


def init_assignment(config: PoConfig, X, init_params: Optional[InitParams] = None) -> np.ndarray:
    """Unnormalised starting assignment: zeros (uniform) or ``w_k . x_i``."""
    X = as_matrix(X, "X")
    n = X.shape[-2]
    if config.init == INIT_UNIFORM:
        return np.zeros(X.shape[:-1] + (n,))
    if init_params is None:
        raise ValueError("linear-assignment init needs init_params")
    if init_params.W.shape != (n, X.shape[-1]):
        raise ShapeError(f"init W {init_params.W.shape} does not match {n} positions x {X.shape[-1]} features")
    return X @ init_params.W.T


def total_cost(C, P, structure: ComparisonStructure) -> np.ndarray:
    """``sum_c <C_c, P O_c P^T>``; a scalar per batch entry."""
    P = np.asarray(P, dtype=np.float64)
    C = _check_cost(C, P, structure)
    rel = P[..., None, :, :] @ structure.O @ np.swapaxes(P, -1, -2)[..., None, :, :]
    return (C * rel).sum(axis=(-3, -2, -1))


def relative_positions(P, O) -> np.ndarray:
    """``B = P O^T``: for the sequence channel, mass after minus mass before each position."""
    return np.asarray(P)[..., None, :, :] @ np.swapaxes(O, -1, -2)


def cost_gradient(C, P, structure: ComparisonStructure) -> np.ndarray:
    """Gradient of :func:`total_cost` with respect to ``P`` for anti-symmetric ``C``."""
    P = np.asarray(P, dtype=np.float64)
    C = _check_cost(C, P, structure)
    return 2.0 * (C @ relative_positions(P, structure.O)).sum(axis=-3)


@dataclass
class PoTrace:
    config: PoConfig
    structure: ComparisonStructure
    X: np.ndarray
    values: np.ndarray
    cost: np.ndarray
    cost_cache: object
    logits: list = field(default_factory=list)  # P~(0) .. P~(T)
    perms: list = field(default_factory=list)  # P(0) .. P(T)
    sinkhorn_caches: list = field(default_factory=list)
    grads: list = field(default_factory=list)  # G(0) .. G(T-1)
    init_params: Optional[InitParams] = None
    shared_values: bool = True

    @property
    def final(self) -> np.ndarray:
        return self.perms[-1]


def po_forward(
    X,
    cost_params: OrderingCostParams,
    config: PoConfig,
    init_params: Optional[InitParams] = None,
    values=None,
    update: str = "direct",
):
    """Run the unrolled optimisation and permute the set.

    ``X`` supplies the features that are compared; ``values`` (default ``X``)
    are the rows being permuted. With ``update="direct"`` the gradient with
    respect to the normalised assignment is applied straight to the logits.
    ``update="jacobian"`` chains it through the Sinkhorn Jacobian instead;
    that variant exists for comparison and has no backward pass.

    Returns ``(Y, P_final, trace)``.
    """
    X = as_matrix(X, "X")
    shared = values is None
    values = X if shared else as_matrix(values, "values")
    if values.shape[:-1] != X.shape[:-1]:
        raise ShapeError("values and X must hold the same elements")
    if X.shape[-2] != config.n:
        raise ShapeError(f"config is for {config.n} elements, X has {X.shape[-2]}")
    if update not in ("direct", "jacobian"):
        raise ValueError(f"unknown update {update!r}")
    structure = config.structure()
    C, cache = cost_matrix(cost_params, X)
    if C.shape[-3] != structure.channels:
        raise ShapeError(f"cost has {C.shape[-3]} channels, structure needs {structure.channels}")
    trace = PoTrace(
        config, structure, X, values, C, cache, init_params=init_params, shared_values=shared
    )

    logits = init_assignment(config, X, init_params)
    for _ in range(config.T):
        P, sc = sinkhorn(logits, config.L)
        G = cost_gradient(C, P, structure)
        trace.logits.append(logits)
        trace.perms.append(P)
        trace.sinkhorn_caches.append(sc)
        trace.grads.append(G)
        step = G if update == "direct" else sinkhorn_vjp(sc, G)
        logits = logits - config.eta * step
    P, sc = sinkhorn(logits, config.L)
    trace.logits.append(logits)
    trace.perms.append(P)
    trace.sinkhorn_caches.append(sc)
    Y = np.swapaxes(P, -1, -2) @ values
    return Y, P, trace


@dataclass
class PoGrads:
    cost: OrderingCostParams
    X: np.ndarray
    values: np.ndarray
    eta: float
    init: Optional[np.ndarray] = None


def po_backward(trace: PoTrace, dY, dP=None) -> PoGrads:
    """Reverse-mode pass through :func:`po_forward` (direct update only).

    ``dY`` is the loss gradient on the permuted set, ``dP`` an optional
    gradient on the final assignment. Parameter gradients are summed over any
    batch axes.
    """
    P = trace.final
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != trace.values.shape:
        raise ShapeError(f"dY shape {dY.shape} does not match output {trace.values.shape}")
    if len(trace.grads) != trace.config.T:
        raise ValueError("trace does not match its config")
    dvalues = P @ dY
    dPT = trace.values @ np.swapaxes(dY, -1, -2)
    if dP is not None:
        dP = np.asarray(dP, dtype=np.float64)
        if dP.shape != P.shape:
            raise ShapeError("dP shape does not match P")
        dPT = dPT + dP

    O = trace.structure.O
    C = trace.cost
    eta = trace.config.eta
    dC = np.zeros_like(C)
    deta = 0.0
    dlogits = sinkhorn_vjp(trace.sinkhorn_caches[-1], dPT)
    for t in reversed(range(trace.config.T)):
        # logits(t+1) = logits(t) - eta * G(t),  G(t) = 2 sum_c C_c P(t) O_c^T
        deta -= float((trace.grads[t] * dlogits).sum())
        dG = -eta * dlogits
        Pt = trace.perms[t][..., None, :, :]
        dC += 2.0 * (dG[..., None, :, :] @ O @ np.swapaxes(Pt, -1, -2))
        dPt = 2.0 * (np.swapaxes(C, -1, -2) @ dG[..., None, :, :] @ O).sum(axis=-3)
        dlogits = dlogits + sinkhorn_vjp(trace.sinkhorn_caches[t], dPt)

    dX = np.zeros_like(trace.X)
    dinit = None
    if trace.config.init == INIT_LINEAR:
        # logits(0) = X W^T
        n, m = trace.X.shape[-2:]
        dinit = np.einsum("bik,bim->km", dlogits.reshape(-1, n, n), trace.X.reshape(-1, n, m))
        dX = dX + dlogits @ trace.init_params.W
    dcost, dX_cost = cost_matrix_vjp(trace.cost_cache, dC)
    dX = dX + dX_cost
    if trace.shared_values:
        dX = dX + dvalues
        dvalues = np.zeros_like(dvalues)
    return PoGrads(cost=dcost, X=dX, values=dvalues, eta=deta, init=dinit)
