"""Parameter storage, Xavier init, Adam, MSE and finite-difference checking."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 512
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")


class ParamStore:
    """Named float64 tensors with Adam moment buffers and a step counter."""

    def __init__(self):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.m: dict = {}
        self.v: dict = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        if name.endswith((".m", ".v")) or name == "step":
            raise ValueError(f"reserved parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self) -> list:
        return list(self.params)

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, value in self.params.items():
            other.params[name] = value.copy()
            other.m[name] = self.m[name].copy()
            other.v[name] = self.v[name].copy()
        other.step = self.step
        return other

    def equals(self, other: "ParamStore") -> bool:
        """Bitwise equality of parameters, moments and step."""
        if self.names() != other.names() or self.step != other.step:
            return False
        for name in self.params:
            for mine, theirs in ((self.params, other.params), (self.m, other.m), (self.v, other.v)):
                a, b = mine[name], theirs[name]
                if a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
        return True


def xavier_init(shape, seed) -> np.ndarray:
    """Glorot-uniform sample on ``+-sqrt(6 / (fan_in + fan_out))``.

    For 2-D shapes ``(out, in)``, fan_in is the last axis; a 1-D shape uses
    its length for both fans.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if not shape or math.prod(shape) == 0:
        raise ValueError(f"cannot initialise empty shape {shape}")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = math.prod(shape[2:])
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=shape)


def adam_step(store: ParamStore, grads: dict, cfg: TrainConfig) -> ParamStore:
    """Bias-corrected Adam update, in place. Returns ``store``."""
    for name, g in grads.items():
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != store[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {store[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r} at step {store.step}")
    store.step += 1
    t = store.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = store.m[name] = cfg.beta1 * store.m[name] + (1.0 - cfg.beta1) * g
        v = store.v[name] = cfg.beta2 * store.v[name] + (1.0 - cfg.beta2) * g * g
        store.params[name] = store.params[name] - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return store


def mse_loss(Y, target):
    """Mean squared error over all entries and its gradient with respect to ``Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if Y.shape != target.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {target.shape}")
    diff = Y - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_name: str | None
    passed: bool
    rel_tol: float
    per_param: dict = field(default_factory=dict)
    deterministic: bool = True
    max_abs_grad: float = 0.0

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "worst_param": self.worst_name,
            "rel_tol": self.rel_tol,
            "deterministic": self.deterministic,
            "max_abs_grad": self.max_abs_grad,
            "per_param": self.per_param,
        }


def finite_diff_check(
    loss_fn: Callable,
    store: ParamStore,
    step: float = 1e-6,
    rel_tol: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(store)`` returns ``(loss, grads)``. Up to ``max_coords`` entries
    of each tensor are checked (seeded subsample). The relative error is
    ``|a - f| / max(|a|, |f|, s)`` with ``s`` the largest analytic magnitude in
    that tensor (at least 1e-8), so entries that are exactly zero are judged
    against the tensor's scale rather than against difference roundoff.
    The store is restored afterwards.
    """
    base, grads = loss_fn(store)
    again, _ = loss_fn(store)
    if base != again:
        return GradCheckReport(math.inf, None, False, rel_tol, deterministic=False)
    rng = np.random.default_rng(seed)
    worst, worst_name, max_abs = 0.0, None, 0.0
    per_param = {}
    for name in store.names():
        value = store.params[name]
        analytic = np.asarray(grads.get(name, np.zeros_like(value)), dtype=np.float64)
        scale = max(float(np.max(np.abs(analytic), initial=0.0)), 1e-8)
        max_abs = max(max_abs, scale if scale > 1e-8 else 0.0)
        flat = np.arange(value.size)
        if value.size > max_coords:
            flat = np.sort(rng.choice(value.size, size=max_coords, replace=False))
        param_worst = 0.0
        for idx in flat:
            pos = np.unravel_index(idx, value.shape)
            orig = value[pos]
            value[pos] = orig + step
            up, _ = loss_fn(store)
            value[pos] = orig - step
            down, _ = loss_fn(store)
            value[pos] = orig
            numeric = (up - down) / (2.0 * step)
            a = float(analytic[pos])
            err = abs(a - numeric) / max(abs(a), abs(numeric), scale)
            param_worst = max(param_worst, err)
        per_param[name] = param_worst
        if param_worst > worst or worst_name is None:
            worst, worst_name = param_worst, name
    return GradCheckReport(worst, worst_name, worst <= rel_tol, rel_tol, per_param, True, max_abs)
