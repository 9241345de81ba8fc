"""Number-sorting data: sets of uniform reals and their ascending targets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EVAL_INTERVALS = ((0.0, 1.0), (0.0, 10.0), (0.0, 1000.0), (1.0, 2.0), (10.0, 11.0), (100.0, 101.0), (1000.0, 1001.0))
FULL_TRAIN_SETS = 2**18
DESK_TRAIN_SETS = 2**14

_SPLITS = {"train": 0, "eval": 1, "val": 2}


@dataclass(frozen=True)
class SortTaskConfig:
    n: int
    lo: float = 0.0
    hi: float = 1.0
    eval_intervals: tuple = field(default=EVAL_INTERVALS)
    train_sets: int = DESK_TRAIN_SETS
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("interval must satisfy lo < hi")
        if self.n < 2:
            raise ValueError("sets need at least two numbers")

    @property
    def batches_per_epoch(self) -> int:
        return max(1, -(-self.train_sets // self.batch_size))


def gen_sort_batch(cfg: SortTaskConfig, batch_index: int, interval=None, split: str = "train", size=None):
    """Batch ``batch_index`` of a split: ``(X, target)``, both ``(B, n, 1)``.

    The draw depends only on ``(seed, split, batch_index)``; ``interval``
    rescales it, so every evaluation interval sees the same underlying sets.
    """
    lo, hi = (cfg.lo, cfg.hi) if interval is None else interval
    if size is None:
        size = cfg.batch_size
        if split == "train":
            size = min(size, cfg.train_sets - batch_index * cfg.batch_size)
    rng = np.random.default_rng([cfg.seed, _SPLITS[split], batch_index])
    X = lo + (hi - lo) * rng.random((size, cfg.n, 1))
    target = np.sort(X, axis=1)
    return X, target
