"""Candidate pipelines: assembly, cross-validated evaluation, refitting,
and self-describing model artifacts.

A candidate is an imputer -> encoder -> optional scaler -> estimator
chain with bound hyperparameters.  Fitted pipelines embed the training
schema and category vocabulary so a saved artifact can align and score a
raw test dataset on its own.
"""

from __future__ import annotations

import os
import pickle
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .primitives import (
    PRIMITIVE_REGISTRY,
    STAGE_ENCODER,
    STAGE_ESTIMATOR,
    STAGE_IMPUTER,
    STAGE_SCALER,
    FeatureFrame,
    Primitive,
)
from .resampling import FoldAssignment
from .stats import accuracy, logloss
from .tabular import Dataset, PredictionMatrix, Schema, align_to, category_values

ARTIFACT_MAGIC = b"ENS2MODL"
ARTIFACT_VERSION = 1


class PipelineFitError(RuntimeError):
    """A candidate failed to fit; fatal for the candidate, not the search."""


@dataclass(frozen=True)
class CandidatePipeline:
    """An unfitted pipeline: primitives in stage order with bound params."""

    steps: tuple[tuple[Primitive, dict], ...]

    def __post_init__(self):
        stages = [p.stage for p, _ in self.steps]
        expected = [STAGE_IMPUTER, STAGE_ENCODER, STAGE_SCALER, STAGE_ESTIMATOR]
        if stages not in ([STAGE_IMPUTER, STAGE_ENCODER, STAGE_ESTIMATOR], expected):
            raise ValueError(f"invalid stage sequence {stages}")

    @property
    def step_descriptors(self) -> tuple[tuple[str, dict], ...]:
        return tuple((p.name, dict(hp)) for p, hp in self.steps)

    def describe(self) -> str:
        parts = []
        for p, hp in self.steps:
            if hp:
                args = ",".join(f"{k}={v}" for k, v in sorted(hp.items()))
                parts.append(f"{p.name}({args})")
            else:
                parts.append(p.name)
        return " -> ".join(parts)


def candidate_from_steps(steps: tuple[tuple[str, dict], ...]) -> CandidatePipeline:
    """Rebuild a candidate from the (primitive_name, hyperparams) form
    stored in pipeline records."""
    bound = []
    for name, hyperparams in steps:
        if name not in PRIMITIVE_REGISTRY:
            raise KeyError(f"unknown primitive {name!r}")
        bound.append((PRIMITIVE_REGISTRY[name], dict(hyperparams)))
    return CandidatePipeline(steps=tuple(bound))


@dataclass
class FittedPipeline:
    """A fitted pipeline plus everything needed to score raw test data."""

    step_descriptors: tuple[tuple[str, dict], ...]
    transforms: list  # fitted imputer, encoder, optional scaler, in order
    estimator: object
    schema: Schema
    cat_values: dict[str, frozenset]
    label_vocab: tuple[str, ...]

    def _features_for(self, d: Dataset, rows: np.ndarray | None) -> np.ndarray:
        frame = FeatureFrame.from_dataset(d)
        if rows is not None:
            frame = frame.take(rows)
        stage_input = frame
        for t in self.transforms:
            stage_input = t.transform(stage_input)
        return stage_input

    def predict_proba_rows(self, d: Dataset, rows: np.ndarray | None = None) -> PredictionMatrix:
        """Predict rows of a dataset that already matches the train schema."""
        return self.estimator.predict_proba(self._features_for(d, rows))

    def predict_proba(self, test: Dataset) -> PredictionMatrix:
        """Align a raw test dataset to the training contract and predict."""
        aligned = align_to(self.schema, self.cat_values, self.label_vocab, test)
        return self.predict_proba_rows(aligned)

    def save(self, path: str | Path) -> Path:
        """Serialize atomically (temp file + rename) with a format header."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = pickle.dumps(self, protocol=4)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-model-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(ARTIFACT_MAGIC)
                fh.write(bytes([ARTIFACT_VERSION]))
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path


def load_fitted_pipeline(path: str | Path) -> FittedPipeline:
    data = Path(path).read_bytes()
    if not data.startswith(ARTIFACT_MAGIC):
        raise ValueError(f"{path}: not a model artifact")
    version = data[len(ARTIFACT_MAGIC)]
    if version != ARTIFACT_VERSION:
        raise ValueError(f"{path}: unsupported artifact version {version}")
    model = pickle.loads(data[len(ARTIFACT_MAGIC) + 1 :])
    if not isinstance(model, FittedPipeline):
        raise ValueError(f"{path}: artifact does not contain a fitted pipeline")
    return model


def fit_candidate(
    p: CandidatePipeline, d: Dataset, rows: np.ndarray | None = None
) -> FittedPipeline:
    """Fit a candidate on (a row subset of) a labeled dataset."""
    if d.labels is None:
        raise PipelineFitError("cannot fit on an unlabeled dataset")
    frame = FeatureFrame.from_dataset(d)
    y = d.labels
    if rows is not None:
        frame = frame.take(rows)
        y = y[rows]
    try:
        transforms = []
        stage_input = frame
        estimator = None
        for primitive, hyperparams in p.steps:
            impl = primitive.make(hyperparams)
            if primitive.stage == STAGE_ESTIMATOR:
                impl.fit(stage_input, y, d.label_vocab)
                estimator = impl
            else:
                impl.fit(stage_input)
                stage_input = impl.transform(stage_input)
                transforms.append(impl)
    except Exception as exc:
        raise PipelineFitError(f"fit failed for {p.describe()}: {exc}") from exc
    return FittedPipeline(
        step_descriptors=p.step_descriptors,
        transforms=transforms,
        estimator=estimator,
        schema=d.schema,
        cat_values=category_values(d),
        label_vocab=d.label_vocab,
    )


def fold_metric(metric: str, probs: PredictionMatrix, truth: np.ndarray) -> float:
    if metric == "accuracy":
        return accuracy(probs.argmax_labels(), truth)
    return logloss(probs, truth)


def normalized_score(metric: str, raw_mean: float) -> float:
    """Map a raw mean fold metric onto a [0, 1] higher-is-better score."""
    if metric == "accuracy":
        return raw_mean
    return float(np.exp(-raw_mean))  # logloss: 0 -> 1.0, larger -> smaller


CvHook = Callable[[int, np.ndarray, np.ndarray], None]


def cv_evaluate(
    p: CandidatePipeline,
    d: Dataset,
    folds: FoldAssignment,
    metric: str = "accuracy",
    cv_hook: CvHook | None = None,
) -> tuple[float, PredictionMatrix]:
    """K-fold evaluation: returns (mean fold metric, out-of-fold matrix).

    For each fold the pipeline is fit on every row outside the fold and
    predicts the fold's rows, so each training row is predicted exactly
    once by a model that never saw it.  ``cv_hook`` receives
    (fold, train_rows, predict_rows) per fold, for leakage auditing.
    """
    if d.labels is None:
        raise PipelineFitError("cv_evaluate needs a labeled dataset")
    if len(folds.assignment) != d.n_rows:
        raise ValueError("fold assignment does not match dataset")
    oof = np.full((d.n_rows, d.n_classes), np.nan)
    scores = []
    for fold in range(folds.k):
        train_rows = folds.rows_not_in_fold(fold)
        test_rows = folds.rows_in_fold(fold)
        if cv_hook is not None:
            cv_hook(fold, train_rows, test_rows)
        fitted = fit_candidate(p, d, train_rows)
        probs = fitted.predict_proba_rows(d, test_rows)
        oof[test_rows] = probs.probs
        scores.append(fold_metric(metric, probs, d.labels[test_rows]))
    matrix = PredictionMatrix(d.label_vocab, oof)
    return float(np.mean(scores)), matrix


def refit(p: CandidatePipeline, d: Dataset, artifact_path: str | Path) -> Path:
    """Fit on all rows and persist the model; returns the artifact path."""
    fitted = fit_candidate(p, d)
    return fitted.save(artifact_path)
