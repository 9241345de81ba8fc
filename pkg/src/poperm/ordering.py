"""Learned anti-symmetric pairwise ordering cost.

A two-layer ReLU network ``f`` scores an ordered pair ``(x_i, x_j)``; the cost
``F(x_i, x_j) = f(x_i, x_j) - f(x_j, x_i)`` is anti-symmetric by
construction, and each channel of the assembled matrix is scaled to unit
Frobenius norm.

Set matrices may carry leading batch axes: ``X`` is ``(..., N, featdim)`` and
the cost is returned as ``(..., channels, N, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .linalg import ShapeError, as_matrix

NORM_EPS = 1e-12


@dataclass
class OrderingCostParams:
    W1: np.ndarray  # (hidden, 2 * featdim)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (channels, hidden)
    b2: np.ndarray  # (channels,)

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, as_matrix(getattr(self, f.name), f.name))
        h, two_d = self.W1.shape
        if two_d % 2:
            raise ShapeError("W1 must have an even number of input columns")
        if self.b1.shape != (h,) or self.W2.shape[1:] != (h,) or self.b2.shape != self.W2.shape[:1]:
            raise ShapeError(
                f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def featdim(self) -> int:
        return self.W1.shape[1] // 2

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def channels(self) -> int:
        return self.W2.shape[0]

    @classmethod
    def zeros(cls, featdim: int, hidden: int, channels: int = 1) -> "OrderingCostParams":
        return cls(
            np.zeros((hidden, 2 * featdim)),
            np.zeros(hidden),
            np.zeros((channels, hidden)),
            np.zeros(channels),
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def pairwise_f(params: OrderingCostParams, xi, xj) -> np.ndarray:
    """Raw (non anti-symmetrised) score of the ordered pair ``(xi, xj)``."""
    xi = np.atleast_1d(as_matrix(xi, "xi"))
    xj = np.atleast_1d(as_matrix(xj, "xj"))
    if xi.shape != (params.featdim,) or xj.shape != (params.featdim,):
        raise ShapeError(f"expected feature vectors of length {params.featdim}")
    h = np.maximum(params.W1 @ np.concatenate([xi, xj]) + params.b1, 0.0)
    return params.W2 @ h + params.b2


@dataclass
class CostCache:
    X: np.ndarray
    pre: np.ndarray  # (..., N, N, hidden) pre-activation for every ordered pair
    raw: np.ndarray  # (..., K, N, N) anti-symmetric F before normalisation
    norms: np.ndarray  # (..., K, 1, 1)
    cost: np.ndarray  # (..., K, N, N)
    params: OrderingCostParams


def _pre_activations(params: OrderingCostParams, X: np.ndarray) -> np.ndarray:
    d = params.featdim
    first = X @ params.W1[:, :d].T
    second = X @ params.W1[:, d:].T
    return first[..., :, None, :] + second[..., None, :, :] + params.b1


def raw_cost(params: OrderingCostParams, X) -> np.ndarray:
    """Un-normalised ``F(x_i, x_j)`` for every pair, ``(..., K, N, N)``."""
    return cost_matrix(params, X)[1].raw


def cost_matrix(params: OrderingCostParams, X):
    """Per-channel ordering-cost matrices with unit Frobenius norm.

    Returns ``(C, cache)``. A channel whose raw cost is identically zero (for
    example, a set of identical elements) stays zero.
    """
    X = as_matrix(X, "X")
    if X.ndim < 2 or X.shape[-1] != params.featdim:
        raise ShapeError(f"X must be (..., N, {params.featdim}), got {X.shape}")
    pre = _pre_activations(params, X)
    # b2 cancels in f(i,j) - f(j,i); leaving it out makes the cancellation exact.
    out = np.maximum(pre, 0.0) @ params.W2.T
    out = np.moveaxis(out, -1, -3)
    raw = out - np.swapaxes(out, -1, -2)
    n = X.shape[-2]
    raw[..., np.arange(n), np.arange(n)] = 0.0
    # summing sorted squares makes the norm exactly invariant to element order
    sq = np.sort((raw * raw).reshape(*raw.shape[:-2], n * n), axis=-1)
    norms = np.sqrt(sq.sum(axis=-1))[..., None, None]
    cost = raw / np.maximum(norms, NORM_EPS)
    return cost, CostCache(X=X, pre=pre, raw=raw, norms=norms, cost=cost, params=params)


def cost_matrix_vjp(cache: CostCache, dC):
    """Gradients of ``<dC, C>`` with respect to the parameters and ``X``.

    Returns ``(dparams, dX)`` where ``dparams`` is an :class:`OrderingCostParams`
    holding gradients summed over any batch axes.
    """
    dC = np.asarray(dC, dtype=np.float64)
    if dC.shape != cache.cost.shape:
        raise ShapeError(f"dC shape {dC.shape} does not match cost {cache.cost.shape}")
    p = cache.params
    d = p.featdim
    C = cache.cost
    live = cache.norms > NORM_EPS
    # quotient rule for C = F / ||F||; the guarded branch contributes nothing
    inner = (dC * C).sum(axis=(-2, -1), keepdims=True)
    dF = np.where(live, (dC - C * inner) / np.where(live, cache.norms, 1.0), 0.0)
    n = dF.shape[-1]
    dF[..., np.arange(n), np.arange(n)] = 0.0
    dout = np.moveaxis(dF - np.swapaxes(dF, -1, -2), -3, -1)  # (..., N, N, K)

    hidden = np.maximum(cache.pre, 0.0)
    batch_axes = tuple(range(dout.ndim - 1))
    dW2 = np.tensordot(dout, hidden, axes=(batch_axes, batch_axes))
    db2 = np.zeros_like(p.b2)
    dpre = (dout @ p.W2) * (cache.pre > 0)
    d_first = dpre.sum(axis=-2)  # (..., N, H), gradient of X @ W1a.T
    d_second = dpre.sum(axis=-3)
    db1 = dpre.reshape(-1, p.hidden).sum(axis=0)
    X = cache.X
    xb = tuple(range(X.ndim - 1))
    dW1 = np.concatenate(
        [np.tensordot(d_first, X, axes=(xb, xb)), np.tensordot(d_second, X, axes=(xb, xb))],
        axis=1,
    )
    dX = d_first @ p.W1[:, :d] + d_second @ p.W1[:, d:]
    return OrderingCostParams(dW1, db1, dW2, db2), dX
