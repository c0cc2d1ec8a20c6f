"""Ensembling of base-learner predictions.

Two strategies: top-K majority voting over hard labels, and a softmax
stacker trained by gradient descent on the concatenated out-of-fold
class-probability vectors of the base learners.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import softmax as sm
from .tabular import PredictionMatrix


@dataclass(frozen=True)
class VoteCommittee:
    """Voting members identified by pipeline id with their CV rank (1 = best)."""

    members: tuple[tuple[str, int], ...]
    k: int

    def __post_init__(self):
        ranks = [rank for _, rank in self.members]
        if len(set(ranks)) != len(ranks):
            raise ValueError("committee cv_ranks must be distinct")
        if len(self.members) > self.k:
            raise ValueError("committee larger than k")

    def to_text(self) -> str:
        lines = [f"k={self.k}"]
        for pid, rank in self.members:
            lines.append(f"{rank}\t{pid}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "VoteCommittee":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        k = int(lines[0].split("=", 1)[1])
        members = []
        for line in lines[1:]:
            rank, pid = line.split("\t", 1)
            members.append((pid, int(rank)))
        return cls(members=tuple(members), k=k)


def majority_vote(preds: list[np.ndarray], cv_ranks: list[int]) -> np.ndarray:
    """Per-row plurality vote over J label vectors.

    Ties are broken in favor of the label voted for by the member with the
    best (lowest) CV rank among the tied labels.
    """
    if len(preds) != len(cv_ranks):
        raise ValueError("need one cv_rank per member")
    if not preds:
        raise ValueError("empty committee")
    if len(set(cv_ranks)) != len(cv_ranks):
        raise ValueError("cv_ranks must be distinct")
    votes = np.column_stack([np.asarray(p, dtype=np.int64) for p in preds])
    n = len(votes)
    for p in preds:
        if len(p) != n:
            raise ValueError("prediction vectors have mismatched lengths")
    n_labels = int(votes.max()) + 1 if n else 1

    counts = np.zeros((n, n_labels), dtype=np.int64)
    best_rank = np.full((n, n_labels), np.inf)
    rows = np.arange(n)
    for j in range(votes.shape[1]):
        col = votes[:, j]
        np.add.at(counts, (rows, col), 1)
        np.minimum.at(best_rank, (rows, col), cv_ranks[j])

    max_counts = counts.max(axis=1, keepdims=True)
    tie_key = np.where(counts == max_counts, best_rank, np.inf)
    return np.argmin(tie_key, axis=1).astype(np.int64)


@dataclass(frozen=True)
class OofDesign:
    """Stacker training data: concatenated OOF probabilities plus labels."""

    features: np.ndarray  # (N, J*C)
    labels: np.ndarray  # (N,) class indices
    roster: tuple[str, ...]
    label_vocab: tuple[str, ...]

    @property
    def n_classes(self) -> int:
        return len(self.label_vocab)


def assemble_oof_design(
    oof: dict[str, PredictionMatrix],
    roster: tuple[str, ...],
    labels: np.ndarray,
) -> OofDesign:
    """Concatenate base learners' OOF probability blocks in roster order.

    Every learner must cover every training row exactly once; a coverage
    gap or a label-vocabulary mismatch is an error.
    """
    if not roster:
        raise ValueError("empty base-learner roster")
    n = len(labels)
    vocab: tuple[str, ...] | None = None
    blocks = []
    for pid in roster:
        if pid not in oof:
            raise ValueError(f"no out-of-fold predictions for learner {pid!r}")
        matrix = oof[pid]
        if vocab is None:
            vocab = matrix.label_vocab
        elif matrix.label_vocab != vocab:
            raise ValueError(f"label vocabulary mismatch for learner {pid!r}")
        probs = matrix.probs
        if matrix.row_indices is not None:
            seen = np.zeros(n, dtype=bool)
            ordered = np.full((n, probs.shape[1]), np.nan)
            for idx, row in zip(matrix.row_indices, probs):
                if idx >= n or seen[idx]:
                    raise ValueError(f"learner {pid!r} predicts row {idx} twice")
                seen[idx] = True
                ordered[idx] = row
            missing = np.flatnonzero(~seen)
            if len(missing):
                raise ValueError(f"learner {pid!r} missing row {missing[0]}")
            probs = ordered
        elif len(probs) != n:
            raise ValueError(
                f"learner {pid!r} covers {len(probs)} rows, expected {n}"
            )
        bad = np.flatnonzero(~np.isfinite(probs).all(axis=1))
        if len(bad):
            raise ValueError(f"learner {pid!r} missing row {bad[0]}")
        blocks.append(probs)
    features = np.hstack(blocks)
    return OofDesign(
        features=features,
        labels=np.asarray(labels, dtype=np.int64),
        roster=tuple(roster),
        label_vocab=vocab,
    )


@dataclass(frozen=True)
class StackerModel:
    """Trained softmax stacker over per-learner probability features."""

    theta: np.ndarray  # (C, J*C)
    roster: tuple[str, ...]
    label_vocab: tuple[str, ...]
    l2_lambda: float
    final_loss: float
    feature_layout: str = "per_learner_probs"

    def __post_init__(self):
        expected = len(self.roster) * len(self.label_vocab)
        if self.theta.shape != (len(self.label_vocab), expected):
            raise ValueError(
                f"theta shape {self.theta.shape} does not match roster/vocab"
            )
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        obj = {
            "format": "ens2-stacker",
            "version": 1,
            "feature_layout": self.feature_layout,
            "roster": list(self.roster),
            "label_vocab": list(self.label_vocab),
            "l2_lambda": self.l2_lambda,
            "final_loss": self.final_loss,
            "theta": [[float(v) for v in row] for row in self.theta],
        }
        path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "StackerModel":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if obj.get("format") != "ens2-stacker" or obj.get("version") != 1:
            raise ValueError(f"{path}: not a version-1 stacker artifact")
        return cls(
            theta=np.array(obj["theta"], dtype=np.float64),
            roster=tuple(obj["roster"]),
            label_vocab=tuple(obj["label_vocab"]),
            l2_lambda=float(obj["l2_lambda"]),
            final_loss=float(obj["final_loss"]),
            feature_layout=obj["feature_layout"],
        )


def train_stacker(
    design: OofDesign,
    l2_lambda: float = 1e-3,
    epochs: int = 500,
    step: float = 0.1,
) -> StackerModel:
    """Fit the softmax stacker by full-batch gradient descent from zero."""
    n, _ = design.features.shape
    c = design.n_classes
    if n < c:
        raise ValueError(f"need at least {c} rows to fit a {c}-class stacker")
    if l2_lambda < 0:
        raise ValueError("l2_lambda must be non-negative")
    theta, final_loss = sm.train_softmax(
        design.features,
        design.labels,
        n_classes=c,
        l2_lambda=l2_lambda,
        epochs=epochs,
        step=step,
    )
    return StackerModel(
        theta=theta,
        roster=design.roster,
        label_vocab=design.label_vocab,
        l2_lambda=l2_lambda,
        final_loss=final_loss,
    )


def stacker_features(
    m: StackerModel, test_preds: dict[str, PredictionMatrix]
) -> np.ndarray:
    """Concatenate test-time probability blocks in roster order."""
    blocks = []
    n = None
    for pid in m.roster:
        if pid not in test_preds:
            raise ValueError(f"missing test predictions for learner {pid!r}")
        matrix = test_preds[pid]
        if matrix.label_vocab != m.label_vocab:
            raise ValueError(f"label vocabulary mismatch for learner {pid!r}")
        if n is None:
            n = matrix.n_rows
        elif matrix.n_rows != n:
            raise ValueError("base learners predict different row counts")
        blocks.append(matrix.probs)
    return np.hstack(blocks)


def stacker_predict(
    m: StackerModel, test_preds: dict[str, PredictionMatrix]
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the stacker; returns (label indices, class probabilities).

    Argmax ties break toward the lowest class index.
    """
    features = stacker_features(m, test_preds)
    probs = sm.predict_proba(m.theta, features)
    return np.argmax(probs, axis=1).astype(np.int64), probs
