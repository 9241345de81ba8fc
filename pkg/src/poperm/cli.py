"""``poperm`` command line: train, eval, gradcheck, oracle, inspect, bench.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointFormatError
from .harness import ConfigError, RunConfig, evaluate_checkpoint, load_run, spec_from_store, train
from .linalg import round_to_permutation, sinkhorn
from .model import ModelSpec, build_store, cost_params, forward, loss_and_grads
from .oracle import SizeGuardError, brute_min, build_q, pairwise_cost, quadratic_cost
from .ordering import OrderingCostParams, cost_matrix, raw_cost
from .permopt import ComparisonStructure, PoConfig, po_forward, total_cost
from .tasks.mosaic import make_mosaic, synthetic_images
from .training import NonFiniteError, finite_diff_check

log = logging.getLogger("poperm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    """One flag per :class:`RunConfig` field; unset flags leave the config alone."""
    for f in fields(RunConfig):
        kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "str")
        if "bool" in kind:
            p.add_argument(_flag(f.name), dest=f.name, action="store_true", default=argparse.SUPPRESS)
        elif "float" in kind:
            p.add_argument(_flag(f.name), dest=f.name, type=float, default=argparse.SUPPRESS)
        elif "int" in kind:
            p.add_argument(_flag(f.name), dest=f.name, type=int, default=argparse.SUPPRESS)
        else:
            p.add_argument(_flag(f.name), dest=f.name, default=argparse.SUPPRESS)
    p.add_argument("--config", dest="config_file", default=None, help="flat JSON config; flags override it")


def _run_config(args, base: dict | None = None) -> RunConfig:
    data = dict(base or {})
    if args.config_file:
        path = Path(args.config_file)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    names = {f.name for f in fields(RunConfig)}
    data.update({k: v for k, v in vars(args).items() if k in names})
    return RunConfig.from_dict(data).resolved()


def _emit(records, out=None) -> None:
    lines = "".join(json.dumps(r) + "\n" for r in records)
    if out:
        Path(out).write_text(lines)
    else:
        sys.stdout.write(lines)


# --- train / eval ----------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train(cfg)
    print(str(Path(cfg.outdir) / "final.popt"))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        store, base = load_run(args.checkpoint)
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from exc
    for key in ("outdir", "wall_clock"):
        base.pop(key, None)
    cfg = _run_config(args, base)
    intervals = None
    if args.intervals:
        intervals = [tuple(float(v) for v in item.split(":")) for item in args.intervals.split(",")]
    _emit(evaluate_checkpoint(cfg, store, intervals), args.out)
    return EXIT_OK


# --- gradcheck -------------------------------------------------------------


def gradcheck_problem(task: str, model: str, n: int, grid: int, T: int, hidden: int, seed: int, zero_params: bool):
    """A small seeded pipeline: ``(spec, store, inputs, target)``."""
    rng = np.random.default_rng(seed)
    if task == "sort":
        spec = ModelSpec(n=n, featdim=1, hidden=hidden, T=T, model=model)
        inputs = rng.random((2, n, 1))
        target = np.sort(inputs, axis=1)
    elif task == "mosaic":
        images = synthetic_images(2, seed, size=4 * grid)
        images = (images - images.mean()) / images.std()
        inst = [make_mosaic(img, grid, grid, seed=[seed, i]) for i, img in enumerate(images)]
        inputs = np.stack([m.tiles for m in inst])
        target = np.stack([m.target() for m in inst])
        spec = ModelSpec(
            n=grid * grid, featdim=inputs.shape[-1], hidden=hidden, T=T, model=model,
            grid=(grid, grid), embed_dim=6,
        )
    else:
        raise ConfigError(f"unknown task {task!r}")
    store = build_store(spec, seed, eta0=1.0)
    if zero_params:
        for name in store.names():
            if name != "eta":
                store.params[name][...] = 0.0
    return spec, store, inputs, target


def cmd_gradcheck(args) -> int:
    spec, store, inputs, target = gradcheck_problem(
        args.task, args.model, args.n, args.grid, args.T, args.hidden, args.seed, args.zero_params
    )
    wrong = args.inject_wrong_sign
    if wrong and wrong not in store:
        raise ConfigError(f"--inject-wrong-sign: no parameter {wrong!r}")

    def loss_fn(s):
        loss, grads, _ = loss_and_grads(spec, s, inputs, target)
        if wrong:
            grads[wrong] = -grads[wrong]
        return loss, grads

    report = finite_diff_check(loss_fn, store, step=args.step, rel_tol=args.rel_tol, seed=args.seed)
    out = {"task": args.task, "model": args.model, "T": args.T, "n": spec.n} | report.as_dict()
    print(json.dumps(out))
    if not report.passed:
        print(f"gradcheck failed: worst parameter {report.worst_name} rel error {report.max_rel_error:.3g}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# --- oracle ----------------------------------------------------------------


def oracle_report(n: int | None, grid: int | None, samples: int, seed: int, T: int = 6) -> dict:
    rng = np.random.default_rng(seed)
    if grid:
        structure = ComparisonStructure.grid(grid, grid)
        config = PoConfig(n=grid * grid, T=T, grid=(grid, grid))
    else:
        structure = ComparisonStructure.sequence(n)
        config = PoConfig(n=n, T=T)
    size = structure.n
    k = structure.channels
    params = OrderingCostParams(rng.normal(size=(8, 4)), rng.normal(size=8), rng.normal(size=(k, 8)), np.zeros(k))
    X = rng.normal(size=(size, 2))
    C, _ = cost_matrix(params, X)
    report = {"n": size, "grid": grid, "channels": k, "samples": samples}

    Q = build_q(C, structure)
    worst = 0.0
    for _ in range(samples):
        P, _ = sinkhorn(rng.normal(scale=2.0, size=(size, size)), 20)
        worst = max(worst, abs(float(total_cost(C, P, structure)) - quadratic_cost(Q, P)))
    uniform = np.full((size, size), 1.0 / size)
    report["q_identity_max_abs_error"] = worst
    report["q_identity_ok"] = bool(worst <= 1e-9)
    report["uniform_cost"] = float(total_cost(C, uniform, structure))
    report["uniform_cost_ok"] = bool(abs(report["uniform_cost"]) <= 1e-12)

    _, P_final, _ = po_forward(X, params, config)
    perm = round_to_permutation(P_final)
    po_cost = float(pairwise_cost(C, perm.assignment, structure))
    try:
        best, best_cost = brute_min(C, structure)
        report["brute"] = {
            "status": "ok",
            "min_cost": float(best_cost),
            "argmin": [int(i) for i in best.assignment],
            "po_cost": po_cost,
            "po_assignment": [int(i) for i in perm.assignment],
            "po_optimal": bool(abs(po_cost - best_cost) <= 1e-9),
        }
    except SizeGuardError as exc:
        report["brute"] = {"status": "size-guard", "error": str(exc), "po_cost": po_cost}
    return report


def cmd_oracle(args) -> int:
    if args.grid is None and args.n is None:
        raise ConfigError("oracle needs --n or --grid")
    report = oracle_report(args.n, args.grid, args.samples, args.seed)
    print(json.dumps(report))
    return EXIT_OK if report["q_identity_ok"] and report["uniform_cost_ok"] else EXIT_FAIL


# --- inspect ---------------------------------------------------------------


def comparator_table(store, lo: float, hi: float, step: float) -> tuple:
    """``(grid values, F)`` where ``F[c, i, j] = F_c(x_i, x_j)`` for scalar features."""
    params = cost_params(store)
    if params.featdim != 1:
        raise ConfigError("inspect needs a checkpoint with scalar features (sort task)")
    xs = np.round(np.arange(lo, hi + step / 2, step), 12)
    return xs, raw_cost(params, xs[:, None])


def cmd_inspect(args) -> int:
    try:
        store, _ = load_run(args.checkpoint)
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from exc
    xs, F = comparator_table(store, args.lo, args.hi, args.step)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for c in range(F.shape[0]):
        path = out / f"F_channel{c}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_i\\x_j"] + [repr(float(x)) for x in xs])
            for i, x in enumerate(xs):
                w.writerow([repr(float(x))] + [repr(float(v)) for v in F[c, i]])
        print(str(path))
    return EXIT_OK


# --- bench -----------------------------------------------------------------


def bench(sizes, T: int = 6, repeats: int = 3, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    params = OrderingCostParams(rng.normal(size=(16, 2)), rng.normal(size=16), rng.normal(size=(1, 16)), np.zeros(1))
    rows = []
    for n in sizes:
        X = rng.random((n, 1))
        config = PoConfig(n=n, T=T)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            po_forward(X, params, config)
            best = min(best, time.perf_counter() - t0)
        rows.append({"n": n, "forward_ms": best * 1e3, "per_step_ms": best * 1e3 / T})
    for prev, row in zip(rows, rows[1:]):
        row["ratio_to_previous"] = row["forward_ms"] / prev["forward_ms"]
    return {"T": T, "repeats": repeats, "results": rows}


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    print(json.dumps(bench(sizes, args.T, args.repeats, args.seed)))
    return EXIT_OK


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poperm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model, writing metrics and checkpoints")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--intervals", default=None, help="e.g. 0:1,1000:1001 (sort only)")
    p.add_argument("--out", default=None, help="JSONL output path (default stdout)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    p.add_argument("--task", choices=["sort", "mosaic"], default="sort")
    p.add_argument("--model", choices=["po-u", "po-la"], default="po-u")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--grid", type=int, default=2)
    p.add_argument("--T", type=int, default=3)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--rel-tol", type=float, default=1e-5)
    p.add_argument("--zero-params", action="store_true")
    p.add_argument("--inject-wrong-sign", default=None, metavar="PARAM", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle", help="check total cost against the quadratic form and brute force")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("inspect", help="dump comparator outputs F(x_i, x_j) as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="time the forward pass against set size")
    p.add_argument("--sizes", default="64,128,256")
    p.add_argument("--T", type=int, default=6)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"poperm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, CheckpointFormatError, UsageError) as exc:
        print(f"poperm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, FloatingPointError, ValueError) as exc:
        print(f"poperm: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
