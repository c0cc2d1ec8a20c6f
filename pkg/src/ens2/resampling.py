"""Deterministic k-fold assignment, optionally stratified by class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldAssignment:
    """Per-row fold indices in [0, k): mutually exclusive, jointly exhaustive."""

    k: int
    assignment: np.ndarray  # int64, len == n_rows

    def rows_in_fold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def rows_not_in_fold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def kfold(n: int, k: int, labels: np.ndarray | None = None, seed: int = 0) -> FoldAssignment:
    """Assign n rows to k folds, deterministically for a given seed.

    Fold sizes differ by at most one.  With labels given, assignment is
    stratified: each class's rows are spread round-robin so per-class
    counts per fold also differ by at most one.
    """
    if k < 2:
        raise ValueError(f"need at least 2 folds, got k={k}")
    if k > n:
        raise ValueError(f"cannot split {n} rows into {k} folds")

    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    if labels is None:
        perm = rng.permutation(n)
        for pos, row in enumerate(perm):
            assignment[row] = pos % k
    else:
        labels = np.asarray(labels)
        if len(labels) != n:
            raise ValueError("label vector length does not match n")
        # A single fold pointer runs across classes so that total fold
        # sizes stay balanced while each class is dealt round-robin.
        ptr = 0
        for cls in np.unique(labels):
            members = np.flatnonzero(labels == cls)
            members = members[rng.permutation(len(members))]
            for row in members:
                assignment[row] = ptr % k
                ptr += 1
    return FoldAssignment(k=k, assignment=assignment)
