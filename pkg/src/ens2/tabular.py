"""Tabular dataset model: CSV ingestion, schema inference, test alignment.

Datasets are immutable after construction and safe to share across worker
processes.  Column kind inference is deliberately simple: a column is
numeric iff every non-missing cell parses as a float, otherwise it is
categorical.  Missing cells (empty CSV fields) are preserved as NaN/None;
filling them is the job of pipeline imputer primitives, not ingestion.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

#: Reserved token that `align_test` substitutes for categorical values
#: never seen in the training data.
UNKNOWN_TOKEN = "__unknown__"


class ParseError(ValueError):
    """Raised when CSV bytes cannot be turned into a valid Dataset."""


@dataclass(frozen=True)
class Schema:
    """Ordered feature columns plus the name of the target column."""

    columns: tuple[tuple[str, str], ...]  # (name, kind) in file order
    target: str

    def __post_init__(self):
        names = [name for name, _ in self.columns]
        if len(set(names)) != len(names):
            raise ParseError("duplicate column names in schema")
        if not self.columns:
            raise ParseError("schema needs at least one feature column")
        for _, kind in self.columns:
            if kind not in (NUMERIC, CATEGORICAL):
                raise ParseError(f"unknown column kind {kind!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.columns)

    def kind_of(self, name: str) -> str:
        for n, k in self.columns:
            if n == name:
                return k
        raise KeyError(name)


@dataclass(frozen=True)
class Dataset:
    """A parsed tabular classification dataset.

    Feature data is stored column-major: numeric columns as float64 arrays
    (NaN marks missing), categorical columns as object arrays of str
    (None marks missing).  ``labels`` holds per-row class indices into
    ``label_vocab`` when the target column was present at parse time.
    """

    schema: Schema
    cols: tuple[np.ndarray, ...]
    labels: np.ndarray | None  # int64 class indices, or None
    label_vocab: tuple[str, ...]

    def __post_init__(self):
        if len(self.cols) != len(self.schema.columns):
            raise ParseError("column data does not match schema")
        n = self.n_rows
        for (name, _), col in zip(self.schema.columns, self.cols):
            if len(col) != n:
                raise ParseError(f"column {name!r} has inconsistent length")
        if self.labels is not None:
            if len(self.labels) != n:
                raise ParseError("label vector length does not match rows")
            if n and (self.labels.min() < 0 or self.labels.max() >= len(self.label_vocab)):
                raise ParseError("label index outside vocabulary")

    @property
    def n_rows(self) -> int:
        return len(self.cols[0]) if self.cols else 0

    @property
    def n_classes(self) -> int:
        return len(self.label_vocab)

    def column(self, name: str) -> np.ndarray:
        return self.cols[self.schema.names.index(name)]


@dataclass(frozen=True)
class TaskSpec:
    """What a searcher is asked to do, and under what budget."""

    target: str
    metric: str = "accuracy"  # "accuracy" or "logloss"
    time_budget_s: float = 60.0
    refit_fraction: float = 0.25
    seed: int = 0
    task_kind: str = "classification"

    def __post_init__(self):
        if self.metric not in ("accuracy", "logloss"):
            raise ValueError(f"unsupported metric {self.metric!r}")
        if self.time_budget_s <= 0:
            raise ValueError("time_budget_s must be positive")
        if not 0.0 <= self.refit_fraction <= 1.0:
            raise ValueError("refit_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class PipelineRecord:
    """One discovered pipeline as reported by a searcher."""

    id: str
    searcher_id: str
    steps: tuple[tuple[str, dict], ...]  # (primitive_name, hyperparams)
    validation_score: float
    artifact_ref: str | None  # path to serialized model, relative to worker dir
    has_oof: bool
    discovered_at: int

    def __post_init__(self):
        if not self.steps:
            raise ValueError("pipeline has no steps")
        if not np.isfinite(self.validation_score):
            raise ValueError("validation_score must be finite")

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "searcher_id": self.searcher_id,
            "steps": [
                {"primitive": name, "hyperparams": dict(params)}
                for name, params in self.steps
            ],
            "validation_score": self.validation_score,
            "artifact_ref": self.artifact_ref,
            "has_oof": self.has_oof,
            "discovered_at": self.discovered_at,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PipelineRecord":
        return cls(
            id=obj["id"],
            searcher_id=obj["searcher_id"],
            steps=tuple(
                (step["primitive"], dict(step["hyperparams"])) for step in obj["steps"]
            ),
            validation_score=float(obj["validation_score"]),
            artifact_ref=obj["artifact_ref"],
            has_oof=bool(obj["has_oof"]),
            discovered_at=int(obj["discovered_at"]),
        )


@dataclass(frozen=True)
class PredictionMatrix:
    """Per-row class probabilities aligned to a label vocabulary.

    ``row_indices`` identifies which dataset rows the probability rows
    belong to; None means rows 0..N-1 in order.
    """

    label_vocab: tuple[str, ...]
    probs: np.ndarray  # shape (N, C)
    row_indices: np.ndarray | None = None

    def __post_init__(self):
        if self.probs.ndim != 2 or self.probs.shape[1] != len(self.label_vocab):
            raise ValueError("probability matrix shape does not match vocabulary")
        if self.row_indices is not None and len(self.row_indices) != len(self.probs):
            raise ValueError("row_indices length does not match matrix")

    @property
    def n_rows(self) -> int:
        return len(self.probs)

    def argmax_labels(self) -> np.ndarray:
        """Predicted class indices; ties go to the lowest class index."""
        return np.argmax(self.probs, axis=1)


def _parse_float(cell: str) -> float | None:
    try:
        value = float(cell)
    except ValueError:
        return None
    # inf/nan spellings are treated as text, not numbers: they would
    # otherwise be indistinguishable from missing values downstream.
    return value if np.isfinite(value) else None


def parse_csv(data: bytes, target: str | None) -> Dataset:
    """Parse RFC-4180 CSV bytes (UTF-8, header row) into a Dataset.

    The target column, when given, is removed from the features and
    encoded into labels against a lexicographically sorted vocabulary.
    Empty fields are missing values.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"input is not valid UTF-8: {exc}") from exc
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header row") from None
    if not header or all(h == "" for h in header):
        raise ParseError("missing header row")
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header")

    rows: list[list[str]] = []
    for i, row in enumerate(reader):
        if not row:
            continue  # stray blank line
        if len(row) != len(header):
            raise ParseError(
                f"row {i + 1} has {len(row)} cells, expected {len(header)}"
            )
        rows.append(row)
    if not rows:
        raise ParseError("dataset has no data rows")

    if target is not None and target not in header:
        raise ParseError(f"unknown target column {target!r}")

    feature_names = [h for h in header if h != target]
    if not feature_names:
        raise ParseError("dataset has no feature columns")

    columns: list[tuple[str, str]] = []
    cols: list[np.ndarray] = []
    for name in feature_names:
        j = header.index(name)
        raw = [row[j] for row in rows]
        parsed = [None if cell == "" else _parse_float(cell) for cell in raw]
        numeric = all(p is not None for cell, p in zip(raw, parsed) if cell != "")
        if numeric:
            col = np.array(
                [np.nan if cell == "" else p for cell, p in zip(raw, parsed)],
                dtype=np.float64,
            )
            columns.append((name, NUMERIC))
        else:
            col = np.array(
                [None if cell == "" else cell for cell in raw], dtype=object
            )
            columns.append((name, CATEGORICAL))
        cols.append(col)

    labels = None
    label_vocab: tuple[str, ...] = ()
    if target is not None:
        j = header.index(target)
        raw_labels = [row[j] for row in rows]
        missing = [i for i, cell in enumerate(raw_labels) if cell == ""]
        if missing:
            raise ParseError(f"target column has missing values (first at row {missing[0]})")
        label_vocab = tuple(sorted(set(raw_labels)))
        index = {name: i for i, name in enumerate(label_vocab)}
        labels = np.array([index[cell] for cell in raw_labels], dtype=np.int64)

    schema = Schema(columns=tuple(columns), target=target if target is not None else "")
    return Dataset(schema=schema, cols=tuple(cols), labels=labels, label_vocab=label_vocab)


def _format_numeric(value: float) -> str:
    if np.isnan(value):
        return ""
    return repr(float(value))


def dataset_to_csv_bytes(d: Dataset) -> bytes:
    """Serialize a Dataset back to canonical CSV bytes.

    Round-trips schema, row count and label vocabulary exactly through
    `parse_csv`.  The target column, when labels are present, is appended
    as the last column.
    """
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    header = list(d.schema.names)
    if d.labels is not None:
        header.append(d.schema.target)
    writer.writerow(header)
    for i in range(d.n_rows):
        row: list[str] = []
        for (name, kind), col in zip(d.schema.columns, d.cols):
            if kind == NUMERIC:
                row.append(_format_numeric(col[i]))
            else:
                row.append("" if col[i] is None else str(col[i]))
        if d.labels is not None:
            row.append(d.label_vocab[d.labels[i]])
        writer.writerow(row)
    return out.getvalue().encode("utf-8")


def split_features_labels(d: Dataset) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Return (feature columns in schema order, label vector)."""
    if d.labels is None:
        raise ValueError("dataset has no labels")
    return d.cols, d.labels


def take_rows(d: Dataset, rows: np.ndarray) -> Dataset:
    """Dataset restricted to the given row indices, order preserved.

    Keeps the full label vocabulary even if a class vanishes from the
    subset, so train/test splits stay mutually aligned.
    """
    rows = np.asarray(rows, dtype=np.int64)
    return Dataset(
        schema=d.schema,
        cols=tuple(col[rows] for col in d.cols),
        labels=None if d.labels is None else d.labels[rows],
        label_vocab=d.label_vocab,
    )


def category_values(d: Dataset) -> dict[str, frozenset]:
    """Distinct non-missing values of each categorical column."""
    out = {}
    for (name, kind), col in zip(d.schema.columns, d.cols):
        if kind == CATEGORICAL:
            out[name] = frozenset(v for v in col if v is not None)
    return out


def align_to(
    schema: Schema,
    cat_values: dict[str, frozenset],
    label_vocab: tuple[str, ...],
    test: Dataset,
) -> Dataset:
    """Reorder/normalize a test dataset against a training-time contract.

    Categorical values outside ``cat_values`` become UNKNOWN_TOKEN; the
    result carries ``label_vocab``, and test labels (when present) are
    re-encoded against it (an unseen class is an error).
    """
    missing = [n for n in schema.names if n not in test.schema.names]
    if missing:
        raise ParseError(f"test dataset missing feature columns: {', '.join(missing)}")

    cols: list[np.ndarray] = []
    for name, kind in schema.columns:
        col = test.column(name)
        test_kind = test.schema.kind_of(name)
        if kind == NUMERIC:
            if test_kind != NUMERIC:
                # A numeric train column whose test values contain text:
                # unparseable cells become missing.
                col = np.array(
                    [np.nan if v is None else _maybe_float(v) for v in col],
                    dtype=np.float64,
                )
            cols.append(col.copy())
        else:
            if test_kind == NUMERIC:
                col = np.array(
                    [None if np.isnan(v) else _format_numeric(v) for v in col],
                    dtype=object,
                )
            seen = cat_values.get(name, frozenset())
            mapped = np.array(
                [
                    None if v is None else (v if v in seen else UNKNOWN_TOKEN)
                    for v in col
                ],
                dtype=object,
            )
            cols.append(mapped)

    labels = None
    if test.labels is not None:
        index = {name: i for i, name in enumerate(label_vocab)}
        try:
            labels = np.array(
                [index[test.label_vocab[i]] for i in test.labels], dtype=np.int64
            )
        except KeyError as exc:
            raise ParseError(f"test label {exc.args[0]!r} not in training vocabulary") from exc

    out_schema = Schema(columns=schema.columns, target=schema.target)
    return Dataset(schema=out_schema, cols=tuple(cols), labels=labels, label_vocab=label_vocab)


def align_test(train: Dataset, test: Dataset) -> Dataset:
    """Reorder test columns to the train schema and normalize its values.

    Categorical values unseen in train become UNKNOWN_TOKEN.  The result
    carries train's label vocabulary.
    """
    return align_to(train.schema, category_values(train), train.label_vocab, test)


def write_manifest(d: Dataset, csv_path: str | Path) -> Path:
    """Write the dataset manifest (schema + vocab) next to its CSV file."""
    path = Path(str(csv_path) + ".manifest.json")
    obj = {
        "columns": [[name, kind] for name, kind in d.schema.columns],
        "target": d.schema.target,
        "label_vocab": list(d.label_vocab),
        "n_rows": d.n_rows,
    }
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(csv_path: str | Path) -> dict:
    path = Path(str(csv_path) + ".manifest.json")
    return json.loads(path.read_text(encoding="utf-8"))


def _maybe_float(v) -> float:
    try:
        f = float(v)
        return f if np.isfinite(f) else np.nan
    except (TypeError, ValueError):
        return np.nan
