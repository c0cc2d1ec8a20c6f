"""Pipeline primitive library.

Primitives come in four stages: imputer -> encoder -> scaler (optional)
-> estimator.  Imputers and encoders operate on mixed-kind feature
frames; encoders emit a dense float matrix; scalers and estimators work
on matrices.  All fits are deterministic, which keeps whole searcher runs
reproducible bit for bit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import softmax as sm
from .tabular import CATEGORICAL, NUMERIC, UNKNOWN_TOKEN, Dataset, PredictionMatrix

STAGE_IMPUTER = "imputer"
STAGE_ENCODER = "encoder"
STAGE_SCALER = "scaler"
STAGE_ESTIMATOR = "estimator"


@dataclass(frozen=True)
class FeatureFrame:
    """Feature columns plus their kinds, decoupled from the Dataset."""

    kinds: tuple[str, ...]
    cols: tuple[np.ndarray, ...]

    @classmethod
    def from_dataset(cls, d: Dataset) -> "FeatureFrame":
        return cls(
            kinds=tuple(kind for _, kind in d.schema.columns),
            cols=d.cols,
        )

    def take(self, rows: np.ndarray) -> "FeatureFrame":
        return FeatureFrame(self.kinds, tuple(col[rows] for col in self.cols))


@dataclass(frozen=True)
class Primitive:
    """A named, parameterizable pipeline step."""

    name: str
    stage: str
    hyperparam_space: dict[str, tuple]
    factory: Callable[[dict], object]

    def make(self, hyperparams: dict) -> object:
        return self.factory(hyperparams)


def _numeric_mode(values: np.ndarray) -> float:
    counts = Counter(values.tolist())
    # Tie goes to the smallest value for determinism.
    return float(min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0])


def _categorical_mode(values: list[str]) -> str:
    counts = Counter(values)
    # Tie goes to the lexicographically smallest value for determinism.
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


class Imputer:
    """Fills missing cells: numeric by mean/median/mode, categorical by mode."""

    def __init__(self, strategy: str):
        if strategy not in ("mean", "median", "mode"):
            raise ValueError(f"unknown imputation strategy {strategy!r}")
        self.strategy = strategy
        self.fills_: list[object] = []

    def fit(self, frame: FeatureFrame) -> "Imputer":
        self.fills_ = []
        for kind, col in zip(frame.kinds, frame.cols):
            if kind == NUMERIC:
                present = col[~np.isnan(col)]
                if len(present) == 0:
                    fill = 0.0
                elif self.strategy == "mean":
                    fill = float(np.mean(present))
                elif self.strategy == "median":
                    fill = float(np.median(present))
                else:
                    fill = _numeric_mode(present)
            else:
                present_c = [v for v in col if v is not None]
                fill = _categorical_mode(present_c) if present_c else UNKNOWN_TOKEN
            self.fills_.append(fill)
        return self

    def transform(self, frame: FeatureFrame) -> FeatureFrame:
        cols = []
        for kind, col, fill in zip(frame.kinds, frame.cols, self.fills_):
            if kind == NUMERIC:
                out = np.where(np.isnan(col), fill, col)
            else:
                out = np.array([fill if v is None else v for v in col], dtype=object)
            cols.append(out)
        return FeatureFrame(frame.kinds, tuple(cols))


class OneHotEncoder:
    """Categorical columns become per-value indicators; unseen values map
    to the all-zero vector.  Numeric columns pass through."""

    def __init__(self):
        self.vocabs_: list[tuple[str, ...] | None] = []

    def fit(self, frame: FeatureFrame) -> "OneHotEncoder":
        self.vocabs_ = []
        for kind, col in zip(frame.kinds, frame.cols):
            if kind == CATEGORICAL:
                self.vocabs_.append(tuple(sorted({v for v in col if v is not None})))
            else:
                self.vocabs_.append(None)
        return self

    def transform(self, frame: FeatureFrame) -> np.ndarray:
        blocks = []
        for kind, col, vocab in zip(frame.kinds, frame.cols, self.vocabs_):
            if vocab is None:
                blocks.append(np.asarray(col, dtype=np.float64).reshape(-1, 1))
            else:
                block = np.zeros((len(col), len(vocab)))
                index = {v: i for i, v in enumerate(vocab)}
                for r, v in enumerate(col):
                    j = index.get(v)
                    if j is not None:
                        block[r, j] = 1.0
                blocks.append(block)
        return np.hstack(blocks) if blocks else np.zeros((0, 0))


class OrdinalEncoder:
    """Categorical values become their index in the sorted train vocabulary;
    unseen values become -1."""

    def __init__(self):
        self.vocabs_: list[dict | None] = []

    def fit(self, frame: FeatureFrame) -> "OrdinalEncoder":
        self.vocabs_ = []
        for kind, col in zip(frame.kinds, frame.cols):
            if kind == CATEGORICAL:
                vocab = sorted({v for v in col if v is not None})
                self.vocabs_.append({v: float(i) for i, v in enumerate(vocab)})
            else:
                self.vocabs_.append(None)
        return self

    def transform(self, frame: FeatureFrame) -> np.ndarray:
        cols = []
        for kind, col, vocab in zip(frame.kinds, frame.cols, self.vocabs_):
            if vocab is None:
                cols.append(np.asarray(col, dtype=np.float64))
            else:
                cols.append(
                    np.array([vocab.get(v, -1.0) for v in col], dtype=np.float64)
                )
        return np.column_stack(cols) if cols else np.zeros((0, 0))


class Standardizer:
    """Per-column (x - mean) / std; constant columns are left centered."""

    def __init__(self):
        self.mean_: np.ndarray | None = None
        self.std_: np.ndarray | None = None

    def fit(self, matrix: np.ndarray) -> "Standardizer":
        self.mean_ = matrix.mean(axis=0)
        std = matrix.std(axis=0)
        self.std_ = np.where(std == 0.0, 1.0, std)
        return self

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.mean_) / self.std_


class GaussianNB:
    """Gaussian naive Bayes with additive variance smoothing."""

    def __init__(self, var_smoothing: float = 1e-9):
        self.var_smoothing = var_smoothing
        self.label_vocab: tuple[str, ...] = ()

    def fit(self, features: np.ndarray, y: np.ndarray, label_vocab: tuple[str, ...]):
        self.label_vocab = label_vocab
        n_classes = len(label_vocab)
        n, f = features.shape
        self.log_prior_ = np.full(n_classes, -np.inf)
        self.mean_ = np.zeros((n_classes, f))
        self.var_ = np.ones((n_classes, f))
        smoothing = self.var_smoothing * max(float(features.var(axis=0).max()), 1.0)
        for c in range(n_classes):
            rows = features[y == c]
            if len(rows) == 0:
                continue
            self.log_prior_[c] = np.log(len(rows) / n)
            self.mean_[c] = rows.mean(axis=0)
            self.var_[c] = rows.var(axis=0) + smoothing
        return self

    def predict_proba(self, features: np.ndarray) -> PredictionMatrix:
        log_joint = np.empty((len(features), len(self.label_vocab)))
        for c in range(len(self.label_vocab)):
            ll = -0.5 * np.sum(
                np.log(2.0 * np.pi * self.var_[c])
                + (features - self.mean_[c]) ** 2 / self.var_[c],
                axis=1,
            )
            log_joint[:, c] = self.log_prior_[c] + ll
        return PredictionMatrix(self.label_vocab, sm.softmax(log_joint))


class KNearestNeighbors:
    """Euclidean k-NN voting; neighbor ties resolve by training row order."""

    def __init__(self, k: int = 5):
        self.k = int(k)
        self.label_vocab: tuple[str, ...] = ()

    def fit(self, features: np.ndarray, y: np.ndarray, label_vocab: tuple[str, ...]):
        self.label_vocab = label_vocab
        self.train_x_ = np.asarray(features, dtype=np.float64)
        self.train_y_ = np.asarray(y, dtype=np.int64)
        return self

    def predict_proba(self, features: np.ndarray) -> PredictionMatrix:
        k = min(self.k, len(self.train_x_))
        n_classes = len(self.label_vocab)
        probs = np.zeros((len(features), n_classes))
        for i, x in enumerate(np.asarray(features, dtype=np.float64)):
            d2 = np.sum((self.train_x_ - x) ** 2, axis=1)
            nearest = np.argsort(d2, kind="stable")[:k]
            counts = np.bincount(self.train_y_[nearest], minlength=n_classes)
            probs[i] = counts / k
        return PredictionMatrix(self.label_vocab, probs)


class DecisionTree:
    """Depth-limited CART-style tree on dense numeric features (gini split).

    Split ties break toward the lowest feature index, then the lowest
    threshold, so fitting is fully deterministic.
    """

    def __init__(self, max_depth: int = 4, min_leaf: int = 1):
        self.max_depth = int(max_depth)
        self.min_leaf = int(min_leaf)
        self.label_vocab: tuple[str, ...] = ()
        self.root_: dict | None = None

    def fit(self, features: np.ndarray, y: np.ndarray, label_vocab: tuple[str, ...]):
        self.label_vocab = label_vocab
        features = np.asarray(features, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.root_ = self._grow(features, y, depth=0)
        return self

    def _leaf(self, y: np.ndarray) -> dict:
        counts = np.bincount(y, minlength=len(self.label_vocab)).astype(np.float64)
        return {"leaf": counts / counts.sum()}

    def _gini(self, counts: np.ndarray) -> float:
        total = counts.sum()
        if total == 0:
            return 0.0
        p = counts / total
        return float(1.0 - np.sum(p * p))

    def _grow(self, x: np.ndarray, y: np.ndarray, depth: int) -> dict:
        n = len(y)
        if depth >= self.max_depth or n < 2 * self.min_leaf or len(np.unique(y)) == 1:
            return self._leaf(y)

        n_classes = len(self.label_vocab)
        parent_counts = np.bincount(y, minlength=n_classes).astype(np.float64)
        parent_gini = self._gini(parent_counts)
        best = None  # (gain, feature, threshold)
        for j in range(x.shape[1]):
            order = np.argsort(x[:, j], kind="stable")
            xs, ys = x[order, j], y[order]
            left_counts = np.zeros(n_classes)
            right_counts = parent_counts.copy()
            for i in range(n - 1):
                left_counts[ys[i]] += 1
                right_counts[ys[i]] -= 1
                if xs[i] == xs[i + 1]:
                    continue
                n_left = i + 1
                n_right = n - n_left
                if n_left < self.min_leaf or n_right < self.min_leaf:
                    continue
                gain = parent_gini - (
                    n_left * self._gini(left_counts) + n_right * self._gini(right_counts)
                ) / n
                threshold = (xs[i] + xs[i + 1]) / 2.0
                if gain > 1e-12 and (
                    best is None
                    or gain > best[0] + 1e-12
                    or (abs(gain - best[0]) <= 1e-12 and (j, threshold) < best[1:])
                ):
                    best = (gain, j, threshold)
        if best is None:
            return self._leaf(y)
        _, j, threshold = best
        mask = x[:, j] <= threshold
        return {
            "feature": j,
            "threshold": threshold,
            "left": self._grow(x[mask], y[mask], depth + 1),
            "right": self._grow(x[~mask], y[~mask], depth + 1),
        }

    def predict_proba(self, features: np.ndarray) -> PredictionMatrix:
        features = np.asarray(features, dtype=np.float64)
        probs = np.empty((len(features), len(self.label_vocab)))
        for i, x in enumerate(features):
            node = self.root_
            while "leaf" not in node:
                node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
            probs[i] = node["leaf"]
        return PredictionMatrix(self.label_vocab, probs)


class SoftmaxLinear:
    """L2-regularized softmax regression over internally standardized
    features plus a bias column.  Shares the gradient-descent kernel with
    the stacking model."""

    EPOCHS = 300
    STEP = 0.2

    def __init__(self, l2: float = 1e-3):
        self.l2 = float(l2)
        self.label_vocab: tuple[str, ...] = ()

    def _prepare(self, features: np.ndarray) -> np.ndarray:
        z = (np.asarray(features, dtype=np.float64) - self.mean_) / self.std_
        return np.hstack([z, np.ones((len(z), 1))])

    def fit(self, features: np.ndarray, y: np.ndarray, label_vocab: tuple[str, ...]):
        self.label_vocab = label_vocab
        features = np.asarray(features, dtype=np.float64)
        self.mean_ = features.mean(axis=0)
        std = features.std(axis=0)
        self.std_ = np.where(std == 0.0, 1.0, std)
        self.theta_, self.final_loss_ = sm.train_softmax(
            self._prepare(features),
            y,
            n_classes=len(label_vocab),
            l2_lambda=self.l2,
            epochs=self.EPOCHS,
            step=self.STEP,
        )
        return self

    def predict_proba(self, features: np.ndarray) -> PredictionMatrix:
        probs = sm.predict_proba(self.theta_, self._prepare(features))
        return PredictionMatrix(self.label_vocab, probs)


def builtin_primitive_library() -> list[Primitive]:
    """The shared primitive vocabulary available to every searcher."""
    return [
        Primitive("impute_mean", STAGE_IMPUTER, {}, lambda hp: Imputer("mean")),
        Primitive("impute_median", STAGE_IMPUTER, {}, lambda hp: Imputer("median")),
        Primitive("impute_mode", STAGE_IMPUTER, {}, lambda hp: Imputer("mode")),
        Primitive("onehot", STAGE_ENCODER, {}, lambda hp: OneHotEncoder()),
        Primitive("ordinal", STAGE_ENCODER, {}, lambda hp: OrdinalEncoder()),
        Primitive("standardize", STAGE_SCALER, {}, lambda hp: Standardizer()),
        Primitive(
            "gaussian_nb",
            STAGE_ESTIMATOR,
            {"var_smoothing": (1e-9, 1e-6)},
            lambda hp: GaussianNB(**hp),
        ),
        Primitive(
            "knn",
            STAGE_ESTIMATOR,
            {"k": (1, 3, 5, 7, 9, 11, 15)},
            lambda hp: KNearestNeighbors(**hp),
        ),
        Primitive(
            "decision_tree",
            STAGE_ESTIMATOR,
            {"max_depth": (1, 2, 3, 4, 6, 8), "min_leaf": (1, 2, 3, 5)},
            lambda hp: DecisionTree(**hp),
        ),
        Primitive(
            "softmax_linear",
            STAGE_ESTIMATOR,
            {"l2": (1e-4, 1e-3, 1e-2, 1e-1)},
            lambda hp: SoftmaxLinear(**hp),
        ),
    ]


PRIMITIVE_REGISTRY: dict[str, Primitive] = {
    p.name: p for p in builtin_primitive_library()
}
