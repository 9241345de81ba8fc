"""Hard/soft reconstruction metrics for learned permutations."""
from __future__ import annotations

import numpy as np

from ..linalg import HardPermutation, round_to_permutation


def kendall_tau(predicted, truth) -> float:
    """Rank correlation of the positions two assignments give each element."""
    pp = np.argsort(np.asarray(predicted))
    pt = np.argsort(np.asarray(truth))
    n = len(pp)
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, 1)
    agree = np.sign(pp[:, None] - pp[None, :]) * np.sign(pt[:, None] - pt[None, :])
    return float(agree[iu].sum() / len(iu[0]))


def evaluate(P, values, target=None, truth: HardPermutation | None = None) -> dict:
    """Metrics for one soft element-by-position assignment ``P``.

    Give ``truth`` (position -> element) to score exact placement by index, as
    for mosaics. Give only ``target`` (the correctly ordered values) to score
    by value, as for sorting, where ties between equal numbers don't count
    as mistakes.
    """
    P = np.asarray(P, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    rounded = round_to_permutation(P)
    assignment = rounded.as_array()
    hard = values[assignment]
    soft = P.T @ values
    if truth is not None:
        target = values[truth.as_array()]
        correct = bool(np.array_equal(assignment, truth.as_array()))
    else:
        if target is None:
            raise ValueError("evaluate needs a target or a ground-truth assignment")
        target = np.asarray(target, dtype=np.float64).reshape(values.shape)
        correct = bool(np.array_equal(hard, target))
        truth = HardPermutation(tuple(np.argsort(values[:, 0], kind="stable")))
    return {
        "accuracy": float(correct),
        "mse_hard": float(np.mean((hard - target) ** 2)),
        "mse_soft": float(np.mean((soft - target) ** 2)),
        "kendall_tau": kendall_tau(assignment, truth.assignment),
        "assignment": rounded,
    }


def evaluate_batch(P, values, targets=None, truths=None, sequence: bool = True) -> dict:
    """Mean of :func:`evaluate` over a batch; MSEs are per-pixel means."""
    records = []
    for b in range(len(P)):
        records.append(
            evaluate(
                P[b],
                values[b],
                target=None if targets is None else targets[b],
                truth=None if truths is None else truths[b],
            )
        )
    keys = ["accuracy", "mse_hard", "mse_soft"] + (["kendall_tau"] if sequence else [])
    return {k: float(np.mean([r[k] for r in records])) for k in keys} | {"count": len(records)}
