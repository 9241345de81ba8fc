"""Seeded training and evaluation runs for the sorting and mosaic tasks."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .model import MODELS, ModelSpec, build_store, forward, loss_and_grads
from .tasks.evaluate import evaluate_batch
from .tasks.idx import find_mnist, read_idx, standardise
from .tasks.mosaic import make_mosaic, synthetic_images
from .tasks.sorting import EVAL_INTERVALS, FULL_TRAIN_SETS, SortTaskConfig, gen_sort_batch
from .training import NonFiniteError, ParamStore, TrainConfig, adam_step

log = logging.getLogger(__name__)

TASK_DEFAULTS = {
    "sort": dict(T=6, lr=0.1, batch_size=512, hidden=16, epochs=4, train_sets=2**14),
    "mosaic": dict(T=4, lr=1e-3, batch_size=32, hidden=64, epochs=20, train_sets=2048),
}
DATASETS = ("synthetic", "blank", "mnist")
SPLITS = {"train": 0, "test": 1, "val": 2}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "sort"
    model: str = "po-u"
    n: int = 5  # set size (sort)
    grid: int = 2  # tiles per side (mosaic)
    T: Optional[int] = None
    L: int = 4
    eta0: float = 1.0
    hidden: Optional[int] = None
    embed_dim: int = 32
    lr: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: Optional[int] = None
    epochs: Optional[int] = None
    train_sets: Optional[int] = None  # sets (sort) or images (mosaic)
    full_scale: bool = False
    lo: float = 0.0
    hi: float = 1.0
    val_sets: int = 256
    eval_sets: int = 1000
    eval_every: int = 0  # steps between metric records; 0 = once per epoch
    dataset: str = "synthetic"
    data_dir: Optional[str] = None
    seed: int = 0
    threads: int = 1
    outdir: str = "runs/default"
    wall_clock: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def resolved(self) -> "RunConfig":
        """Copy with task defaults filled in, validated."""
        if self.task not in TASK_DEFAULTS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        values = asdict(self)
        for key, default in TASK_DEFAULTS[self.task].items():
            if values[key] is None:
                values[key] = default
        if self.task == "sort" and self.full_scale:
            values["train_sets"] = FULL_TRAIN_SETS
        cfg = RunConfig(**values)
        checks = [
            (cfg.T >= 1, "T must be >= 1"),
            (cfg.L >= 1, "L must be >= 1"),
            (cfg.lr > 0, "lr must be positive"),
            (0 < cfg.beta1 < 1 and 0 < cfg.beta2 < 1, "betas must lie in (0, 1)"),
            (cfg.batch_size >= 1 and cfg.epochs >= 1 and cfg.train_sets >= 1, "sizes must be positive"),
            (cfg.task != "sort" or cfg.n >= 2, "sort needs n >= 2"),
            (cfg.task != "mosaic" or cfg.grid >= 1, "grid must be >= 1"),
            (cfg.lo < cfg.hi, "lo must be below hi"),
            (cfg.threads >= 1, "threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.beta1, self.beta2, self.eps, self.batch_size, self.epochs, self.seed)

    def sort_config(self) -> SortTaskConfig:
        return SortTaskConfig(self.n, self.lo, self.hi, EVAL_INTERVALS, self.train_sets, self.batch_size, self.seed)


@dataclass
class MosaicData:
    tiles: np.ndarray  # (count, N, pixels)
    targets: np.ndarray
    truths: list


def _mosaic_images(cfg: RunConfig, split: str, count: int):
    if cfg.dataset == "mnist":
        files = find_mnist(cfg.data_dir)
        if "train" not in files or "test" not in files:
            raise ConfigError("MNIST IDX files not found; set POPERM_DATA_DIR or --data-dir")
        train_raw = read_idx(files["train"])
        _, mean, std = standardise(train_raw)
        raw = train_raw if split == "train" else read_idx(files["test"])
        return standardise(raw[:count], mean, std)[0]
    blank = cfg.dataset == "blank"
    train = synthetic_images(cfg.train_sets, cfg.seed, blank, stream=0)
    mean, std = train.mean(), train.std()
    images = train if split == "train" else synthetic_images(count, cfg.seed, blank, stream=SPLITS[split])
    return (images[:count] - mean) / std


def mosaic_data(cfg: RunConfig, split: str, count: int) -> MosaicData:
    images = _mosaic_images(cfg, split, count)
    code = SPLITS[split]
    source = "idx-file" if cfg.dataset == "mnist" else "synthetic"
    instances = [
        make_mosaic(img, cfg.grid, cfg.grid, seed=[cfg.seed, code, i], source=source) for i, img in enumerate(images)
    ]
    return MosaicData(
        np.stack([m.tiles for m in instances]),
        np.stack([m.target() for m in instances]),
        [m.truth for m in instances],
    )


def model_spec(cfg: RunConfig, featdim: int = 1) -> ModelSpec:
    if cfg.task == "sort":
        return ModelSpec(n=cfg.n, featdim=1, hidden=cfg.hidden, T=cfg.T, L=cfg.L, model=cfg.model)
    return ModelSpec(
        n=cfg.grid * cfg.grid,
        featdim=featdim,
        hidden=cfg.hidden,
        T=cfg.T,
        L=cfg.L,
        model=cfg.model,
        grid=(cfg.grid, cfg.grid),
        embed_dim=cfg.embed_dim,
    )


class Trainer:
    """Runs one training job; results are a pure function of the config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg.resolved()
        c = self.cfg
        if c.task == "sort":
            self.sort_cfg = c.sort_config()
            self.spec = model_spec(c)
            self.val = gen_sort_batch(self.sort_cfg, 0, split="val", size=c.val_sets)
        else:
            self.train_data = mosaic_data(c, "train", c.train_sets)
            self.spec = model_spec(c, self.train_data.tiles.shape[-1])
            self.val = mosaic_data(c, "val", c.val_sets)
        self.store = build_store(self.spec, c.seed, c.eta0)
        self.records: list = []

    def batches(self, epoch: int):
        c = self.cfg
        if c.task == "sort":
            n_batches = self.sort_cfg.batches_per_epoch
            for b in np.random.default_rng([c.seed, epoch]).permutation(n_batches):
                yield gen_sort_batch(self.sort_cfg, int(b))
        else:
            d = self.train_data
            order = np.random.default_rng([c.seed, epoch]).permutation(len(d.tiles))
            for s in range(0, len(order), c.batch_size):
                idx = order[s : s + c.batch_size]
                yield d.tiles[idx], d.targets[idx]

    def validate(self) -> dict:
        if self.cfg.task == "sort":
            X, target = self.val
            _, P, _, _ = forward(self.spec, self.store, X)
            return evaluate_batch(P, X, targets=target)
        _, P, _, _ = forward(self.spec, self.store, self.val.tiles)
        return evaluate_batch(P, self.val.tiles, truths=self.val.truths, sequence=False)

    def run(self, on_record=None) -> ParamStore:
        c = self.cfg
        tc = c.train_config()
        start = time.perf_counter()
        for epoch in range(c.epochs):
            for X, target in self.batches(epoch):
                loss, grads, _ = loss_and_grads(self.spec, self.store, X, target, threads=c.threads)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"loss became {loss} at step {self.store.step}")
                adam_step(self.store, grads, tc)
                if c.eval_every and self.store.step % c.eval_every == 0:
                    self._record(loss, start, on_record)
            if not c.eval_every:
                self._record(loss, start, on_record)
        return self.store

    def _record(self, loss: float, start: float, on_record) -> None:
        m = self.validate()
        rec = {
            "step": self.store.step,
            "loss": loss,
            "accuracy": m["accuracy"],
            "mse_hard": m["mse_hard"],
            "mse_soft": m["mse_soft"],
            "eta": float(self.store["eta"]),
            "wall_ms": round((time.perf_counter() - start) * 1000.0, 3) if self.cfg.wall_clock else None,
        }
        self.records.append(rec)
        log.info("step %d loss %.3g acc %.3f eta %.3f", rec["step"], loss, rec["accuracy"], rec["eta"])
        if on_record:
            on_record(rec)


def train(cfg: RunConfig) -> ParamStore:
    """Train and write ``config.json``, ``metrics.jsonl`` and ``final.popt`` to ``cfg.outdir``."""
    trainer = Trainer(cfg)
    out = Path(trainer.cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(trainer.cfg), indent=2, sort_keys=True) + "\n")
    with open(out / "metrics.jsonl", "w") as fh:

        def emit(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        store = trainer.run(emit)
    save_checkpoint(store, out / "final.popt")
    return store


def spec_from_store(cfg: RunConfig, store: ParamStore) -> ModelSpec:
    """Model spec implied by a checkpoint, checked against the requested task."""
    cfg = cfg.resolved()
    channels = store["cost.W2"].shape[0]
    task = "sort" if channels == 1 else "mosaic"
    if task != cfg.task or (cfg.task == "mosaic") != ("enc.W" in store):
        raise ConfigError(f"checkpoint holds a {task} model, not {cfg.task}")
    model = "po-la" if "init.W" in store else "po-u"
    hidden = store["cost.W1"].shape[0]
    if task == "sort":
        n = store["init.W"].shape[0] if model == "po-la" else cfg.n
        if store["cost.W1"].shape[1] != 2:
            raise ConfigError("sort checkpoint must compare scalar features")
        return ModelSpec(n=n, featdim=1, hidden=hidden, T=cfg.T, L=cfg.L, model=model)
    emb, pixels = store["enc.W"].shape
    return ModelSpec(
        n=cfg.grid**2, featdim=pixels, hidden=hidden, T=cfg.T, L=cfg.L, model=model,
        grid=(cfg.grid, cfg.grid), embed_dim=emb,
    )


def evaluate_checkpoint(cfg: RunConfig, store: ParamStore, intervals=None) -> list:
    """Held-out metrics: one record per interval (sort) or per split (mosaic)."""
    cfg = cfg.resolved()
    spec = spec_from_store(cfg, store)
    records = []
    if cfg.task == "sort":
        sc = SortTaskConfig(spec.n, cfg.lo, cfg.hi, EVAL_INTERVALS, cfg.train_sets, cfg.batch_size, cfg.seed)
        for lo, hi in intervals or EVAL_INTERVALS:
            X, target = gen_sort_batch(sc, 0, interval=(lo, hi), split="eval", size=cfg.eval_sets)
            _, P, _, _ = forward(spec, store, X)
            records.append({"interval": [lo, hi], "n": spec.n} | evaluate_batch(P, X, targets=target))
    else:
        data = mosaic_data(cfg, "test", cfg.eval_sets)
        if data.tiles.shape[-1] != spec.featdim:
            raise ConfigError("checkpoint tile size does not match the dataset")
        _, P, _, _ = forward(spec, store, data.tiles)
        m = evaluate_batch(P, data.tiles, truths=data.truths, sequence=False)
        records.append({"split": "test", "dataset": cfg.dataset, "grid": cfg.grid} | m)
    return records


def load_run(checkpoint) -> tuple:
    """Checkpoint plus the config echoed next to it (if any)."""
    path = Path(checkpoint)
    store = load_checkpoint(path)
    echo = path.parent / "config.json"
    base = json.loads(echo.read_text()) if echo.is_file() else {}
    return store, base
