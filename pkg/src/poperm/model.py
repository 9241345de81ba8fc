"""End-to-end PO models backed by a :class:`ParamStore`.

Parameter names: ``cost.W1 cost.b1 cost.W2 cost.b2`` (comparison network),
``eta`` (inner step size), ``init.W`` (linear-assignment init, PO-LA only)
and ``enc.W enc.b`` (tile encoder, mosaics only).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ordering import OrderingCostParams
from .permopt import INIT_LINEAR, INIT_UNIFORM, InitParams, PoConfig, po_backward, po_forward
from .tasks.mosaic import TileEncoderParams, encode_tiles, encode_tiles_vjp
from .training import ParamStore, xavier_init

MODELS = {"po-u": INIT_UNIFORM, "po-la": INIT_LINEAR}
CHUNK = 64  # batch work unit; fixed so results do not depend on the thread count


@dataclass(frozen=True)
class ModelSpec:
    n: int
    featdim: int  # input width per element: 1 for numbers, tile pixels for mosaics
    hidden: int = 16
    T: int = 6
    L: int = 4
    model: str = "po-u"
    grid: Optional[tuple] = None
    embed_dim: Optional[int] = None  # set to enable the tile encoder

    @property
    def init(self) -> str:
        return MODELS[self.model]

    @property
    def cost_dim(self) -> int:
        return self.embed_dim or self.featdim

    def po_config(self, eta: float) -> PoConfig:
        return PoConfig(n=self.n, T=self.T, eta=eta, L=self.L, init=self.init, grid=self.grid)


def build_store(spec: ModelSpec, seed: int, eta0: float = 1.0) -> ParamStore:
    """Fresh parameters: Xavier weights, zero biases, ``eta = eta0``."""
    if spec.model not in MODELS:
        raise ValueError(f"unknown model {spec.model!r}")
    channels = 1 if spec.grid is None else 2
    store = ParamStore()
    store.add("cost.W1", xavier_init((spec.hidden, 2 * spec.cost_dim), [seed, 0]))
    store.add("cost.b1", np.zeros(spec.hidden))
    store.add("cost.W2", xavier_init((channels, spec.hidden), [seed, 1]))
    store.add("cost.b2", np.zeros(channels))
    store.add("eta", np.array(eta0))
    if spec.init == INIT_LINEAR:
        store.add("init.W", xavier_init((spec.n, spec.cost_dim), [seed, 2]))
    if spec.embed_dim:
        store.add("enc.W", xavier_init((spec.embed_dim, spec.featdim), [seed, 3]))
        store.add("enc.b", np.zeros(spec.embed_dim))
    return store


def cost_params(store: ParamStore) -> OrderingCostParams:
    return OrderingCostParams(store["cost.W1"], store["cost.b1"], store["cost.W2"], store["cost.b2"])


def forward(spec: ModelSpec, store: ParamStore, inputs, update: str = "direct"):
    """Permute ``inputs`` ``(..., n, featdim)``. Returns ``(Y, P, trace, encoder_pre)``."""
    inputs = np.asarray(inputs, dtype=np.float64)
    pre = None
    features = inputs
    if spec.embed_dim:
        features, pre = encode_tiles(TileEncoderParams(store["enc.W"], store["enc.b"]), inputs)
    init = InitParams(store["init.W"]) if spec.init == INIT_LINEAR else None
    config = spec.po_config(float(store["eta"]))
    values = inputs if spec.embed_dim else None
    Y, P, trace = po_forward(features, cost_params(store), config, init, values=values, update=update)
    return Y, P, trace, pre


def _chunk_grads(spec: ModelSpec, store: ParamStore, inputs, target, scale: float):
    Y, P, trace, pre = forward(spec, store, inputs)
    diff = Y - target
    sq = float((diff * diff).sum())
    g = po_backward(trace, scale * 2.0 * diff)
    grads = {
        "cost.W1": g.cost.W1,
        "cost.b1": g.cost.b1,
        "cost.W2": g.cost.W2,
        "cost.b2": g.cost.b2,
        "eta": np.array(g.eta),
    }
    if g.init is not None:
        grads["init.W"] = g.init
    if spec.embed_dim:
        enc = TileEncoderParams(store["enc.W"], store["enc.b"])
        dW, db, _ = encode_tiles_vjp(enc, inputs, pre, g.X)
        grads["enc.W"] = dW
        grads["enc.b"] = db
    return sq, grads, P


def loss_and_grads(spec: ModelSpec, store: ParamStore, inputs, target, threads: int = 1):
    """Batch MSE, parameter gradients and final assignments.

    The batch is cut into fixed chunks of :data:`CHUNK` sets whose results are
    reduced in chunk order, so output is bit-identical for any ``threads``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    scale = 1.0 / target.size
    starts = range(0, len(inputs), CHUNK)
    work = lambda s: _chunk_grads(spec, store, inputs[s : s + CHUNK], target[s : s + CHUNK], scale)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]
    total_sq = 0.0
    grads = {}
    for sq, g, _ in results:
        total_sq += sq
        for name, value in g.items():
            grads[name] = grads[name] + value if name in grads else value
    P = np.concatenate([r[2] for r in results])
    return total_sq * scale, grads, P

