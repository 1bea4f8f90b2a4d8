"""Policy statistics exported as CSV: operation marginals, co-occurrence and independence."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Sequence, Union

import numpy as np
from scipy.stats import chi2_contingency

from .augment import NUM_OPS, OPS
from .core import logger
from .policy import PolicySnapshot
from .validators import InputValidator


@dataclass
class SnapshotStats:
    epoch: int
    policy_id: str
    samples: int
    pooled: np.ndarray
    view1: np.ndarray
    view2: np.ndarray
    first_step: np.ndarray
    any_step: np.ndarray


@dataclass
class IndependenceResult:
    statistic: float
    dof: int
    p_value: float


def snapshot_statistics(snap: PolicySnapshot, samples: int, rng: np.random.Generator) -> SnapshotStats:
    """Sample ``samples`` pairs from ``snap`` and tabulate their operations.

    ``first_step`` counts (view-1 first op, view-2 first op). ``any_step`` counts,
    once per pair, every (a, b) with ``a`` anywhere in view 1 and ``b`` anywhere in view 2.
    """

    InputValidator.validate_integer(samples, "samples", min_value=1)
    ops = snap.sample_pairs(samples, rng).ops
    n = snap.n_tau
    v1, v2 = ops[:, :n], ops[:, n:]

    first = np.zeros((NUM_OPS, NUM_OPS), dtype=np.int64)
    np.add.at(first, (v1[:, 0], v2[:, 0]), 1)
    present1 = np.zeros((samples, NUM_OPS), dtype=np.int64)
    present2 = np.zeros((samples, NUM_OPS), dtype=np.int64)
    rows = np.arange(samples)[:, None]
    present1[rows, v1] = 1
    present2[rows, v2] = 1

    return SnapshotStats(
        epoch=snap.epoch,
        policy_id=snap.policy_id,
        samples=samples,
        pooled=np.bincount(ops.ravel(), minlength=NUM_OPS) / ops.size,
        view1=np.bincount(v1.ravel(), minlength=NUM_OPS) / v1.size,
        view2=np.bincount(v2.ravel(), minlength=NUM_OPS) / v2.size,
        first_step=first,
        any_step=present1.T @ present2,
    )


def independence_test(matrix: np.ndarray) -> IndependenceResult:
    """Chi-square test of independence on a contingency table.

    Empty rows and columns are dropped first; a table that collapses to a
    single row or column is trivially independent.
    """

    table = np.asarray(matrix, dtype=np.float64)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    if table.shape[0] < 2 or table.shape[1] < 2:
        return IndependenceResult(0.0, 0, 1.0)
    statistic, p_value, dof, _ = chi2_contingency(table, correction=False)
    return IndependenceResult(float(statistic), int(dof), float(p_value))


def inspect_snapshots(snapshots: Sequence[PolicySnapshot], samples: int, seed: int = 0) -> List[SnapshotStats]:
    rng = np.random.default_rng(seed)
    stats = [snapshot_statistics(snap, samples, rng) for snap in sorted(snapshots, key=lambda s: s.epoch)]
    logger.info("inspect.done", extra={"context": {"snapshots": len(stats), "samples": samples}})
    return stats


def write_rows(path: Union[str, Path], header: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def write_op_probs(stats: Sequence[SnapshotStats], path: Union[str, Path]) -> Path:
    rows = (
        {
            "epoch": s.epoch,
            "op": op.value,
            "pooled": f"{s.pooled[op.index]:.6f}",
            "view1": f"{s.view1[op.index]:.6f}",
            "view2": f"{s.view2[op.index]:.6f}",
        }
        for s in stats
        for op in OPS
    )
    return write_rows(path, ("epoch", "op", "pooled", "view1", "view2"), rows)


def write_cooccurrence(stats: Sequence[SnapshotStats], path: Union[str, Path]) -> Path:
    rows = (
        {
            "epoch": s.epoch,
            "view1_op": a.value,
            "view2_op": b.value,
            "first_step": int(s.first_step[a.index, b.index]),
            "any_step": int(s.any_step[a.index, b.index]),
        }
        for s in stats
        for a in OPS
        for b in OPS
    )
    return write_rows(path, ("epoch", "view1_op", "view2_op", "first_step", "any_step"), rows)


def write_independence(stats: Sequence[SnapshotStats], path: Union[str, Path]) -> Path:
    rows = []
    for s in stats:
        result = independence_test(s.first_step)
        rows.append({
            "epoch": s.epoch,
            "policy_id": s.policy_id,
            "chi2": f"{result.statistic:.6f}",
            "dof": result.dof,
            "p_value": f"{result.p_value:.6g}",
        })
    return write_rows(path, ("epoch", "policy_id", "chi2", "dof", "p_value"), rows)
