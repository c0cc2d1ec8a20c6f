"""Scoring metrics and benchmark statistics.

Everything here is a pure function of its inputs, so regenerated reports
are byte-identical and all operations are safe to call concurrently.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .tabular import PredictionMatrix

#: Exact Wilcoxon p-values are computed for up to this many non-zero
#: differences; beyond it the normal approximation takes over.
WILCOXON_EXACT_MAX_N = 20

FAILED = "failed"
OK = "ok"


def accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of exact matches between two equally long label vectors."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if len(pred) == 0:
        raise ValueError("empty label vectors")
    return float(np.mean(pred == truth))


def logloss(probs: PredictionMatrix, truth: np.ndarray, eps: float = 1e-15) -> float:
    """Mean negative log-probability of the true class, clamped to stay finite."""
    truth = np.asarray(truth)
    if len(truth) != probs.n_rows:
        raise ValueError("label vector does not align with probability matrix")
    row_sums = probs.probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-9):
        raise ValueError("probability rows must sum to 1")
    p_true = probs.probs[np.arange(len(truth)), truth]
    clamped = np.clip(p_true, eps, 1.0 - eps)
    return float(-np.mean(np.log(clamped)))


def fractional_ranks(values: np.ndarray, higher_better: bool = True) -> np.ndarray:
    """Rank values with 1 = best; tied values share the mean of their span."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("cannot rank an empty vector")
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot rank non-finite values")
    keys = -values if higher_better else values
    order = np.argsort(keys, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and keys[order[j + 1]] == keys[order[i]]:
            j += 1
        mean_rank = (i + j) / 2.0 + 1.0
        for pos in range(i, j + 1):
            ranks[order[pos]] = mean_rank
        i = j + 1
    return ranks


@dataclass(frozen=True)
class ScoreTable:
    """Accuracy per (system, dataset, seed), with explicit failure marks."""

    systems: tuple[str, ...]
    datasets: tuple[str, ...]
    seeds: tuple[int, ...]
    scores: np.ndarray  # float64 (S, D, E); NaN where failed
    failed: np.ndarray  # bool (S, D, E)

    def __post_init__(self):
        shape = (len(self.systems), len(self.datasets), len(self.seeds))
        if self.scores.shape != shape or self.failed.shape != shape:
            raise ValueError("score array dimensions are inconsistent")
        ok = ~self.failed
        vals = self.scores[ok]
        if np.any(~np.isfinite(vals)) or np.any(vals < 0) or np.any(vals > 1):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_csv_bytes(self) -> bytes:
        out = io.StringIO(newline="")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["system", "dataset", "seed", "accuracy", "status"])
        for si, system in enumerate(self.systems):
            for di, dataset in enumerate(self.datasets):
                for ei, seed in enumerate(self.seeds):
                    if self.failed[si, di, ei]:
                        writer.writerow([system, dataset, seed, "", FAILED])
                    else:
                        writer.writerow(
                            [system, dataset, seed, repr(float(self.scores[si, di, ei])), OK]
                        )
        return out.getvalue().encode("utf-8")

    @classmethod
    def from_csv_bytes(cls, data: bytes) -> "ScoreTable":
        reader = csv.reader(io.StringIO(data.decode("utf-8"), newline=""))
        header = next(reader)
        if header != ["system", "dataset", "seed", "accuracy", "status"]:
            raise ValueError(f"unexpected score table header: {header}")
        systems: list[str] = []
        datasets: list[str] = []
        seeds: list[int] = []
        cells: dict[tuple[str, str, int], tuple[float, bool]] = {}
        for row in reader:
            if not row:
                continue
            system, dataset, seed_s, acc_s, status = row
            seed = int(seed_s)
            if system not in systems:
                systems.append(system)
            if dataset not in datasets:
                datasets.append(dataset)
            if seed not in seeds:
                seeds.append(seed)
            if status == FAILED:
                cells[(system, dataset, seed)] = (math.nan, True)
            else:
                cells[(system, dataset, seed)] = (float(acc_s), False)
        shape = (len(systems), len(datasets), len(seeds))
        scores = np.full(shape, np.nan)
        failed = np.ones(shape, dtype=bool)
        for (system, dataset, seed), (value, is_failed) in cells.items():
            idx = (systems.index(system), datasets.index(dataset), seeds.index(seed))
            scores[idx] = value
            failed[idx] = is_failed
        return cls(tuple(systems), tuple(datasets), tuple(seeds), scores, failed)


@dataclass(frozen=True)
class SystemSummary:
    system: str
    avg_accuracy: float
    avg_rank: float
    first_place_count: int
    n_failures: int


def summarize(table: ScoreTable) -> list[SystemSummary]:
    """Per-system average accuracy, tie-aware average rank, first-place count.

    Ranks are computed per (dataset, seed) cell across the systems that
    succeeded there; a system's failures are excluded both from that
    cell's ranking and from the system's own averages.
    """
    if not table.systems or not table.datasets or not table.seeds:
        raise ValueError("empty score table")
    n_systems = len(table.systems)
    rank_lists: list[list[float]] = [[] for _ in range(n_systems)]
    first_places = [0] * n_systems
    for di in range(len(table.datasets)):
        for ei in range(len(table.seeds)):
            present = [si for si in range(n_systems) if not table.failed[si, di, ei]]
            if not present:
                raise ValueError(
                    f"no successful system for dataset {table.datasets[di]!r} "
                    f"seed {table.seeds[ei]}"
                )
            cell = np.array([table.scores[si, di, ei] for si in present])
            ranks = fractional_ranks(cell, higher_better=True)
            best = ranks.min()
            for si, rank in zip(present, ranks):
                rank_lists[si].append(float(rank))
                if rank == best:
                    first_places[si] += 1

    summaries = []
    for si, system in enumerate(table.systems):
        ok_scores = table.scores[si][~table.failed[si]]
        summaries.append(
            SystemSummary(
                system=system,
                avg_accuracy=float(np.mean(ok_scores)) if len(ok_scores) else math.nan,
                avg_rank=float(np.mean(rank_lists[si])) if rank_lists[si] else math.nan,
                first_place_count=first_places[si],
                n_failures=int(table.failed[si].sum()),
            )
        )
    return summaries


@dataclass(frozen=True)
class WilcoxonResult:
    w_plus: float
    p_two_sided: float
    reject: bool
    n_effective: int
    exact: bool


def wilcoxon_signed_rank(
    x: np.ndarray, y: np.ndarray, alpha: float = 0.05
) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test of paired samples.

    Zero differences are discarded.  Absolute differences are ranked with
    fractional ranks and W+ sums the ranks of positive differences.  For
    up to WILCOXON_EXACT_MAX_N effective pairs the p-value is exact over
    all sign assignments; beyond that a tie-corrected, continuity-corrected
    normal approximation is used.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("paired samples must have equal length")
    if len(x) == 0:
        raise ValueError("need at least one pair")
    diffs = x - y
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, False, 0, True)

    abs_ranks = fractional_ranks(np.abs(diffs), higher_better=False)
    w_plus = float(abs_ranks[diffs > 0].sum())

    if n <= WILCOXON_EXACT_MAX_N:
        p = _exact_two_sided_p(abs_ranks, w_plus)
        exact = True
    else:
        p = _normal_two_sided_p(np.abs(diffs), n, w_plus)
        exact = False
    return WilcoxonResult(w_plus, p, bool(p < alpha), n, exact)


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    # Fractional ranks are integer or half-integer; doubling makes every
    # achievable W+ an exact integer so the distribution is a table.
    doubled = np.rint(ranks * 2).astype(np.int64)
    total_sum = int(doubled.sum())
    counts = np.zeros(total_sum + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    total = 1 << len(ranks)
    w2 = int(round(w_plus * 2))
    n_ge = int(counts[w2:].sum())
    n_le = int(counts[: w2 + 1].sum())
    return min(1.0, 2.0 * min(n_ge, n_le) / total)


def _normal_two_sided_p(abs_diffs: np.ndarray, n: int, w_plus: float) -> float:
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(abs_diffs, return_counts=True)
    var -= float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    if var <= 0:
        return 1.0
    delta = w_plus - mean
    if delta > 0:
        delta -= 0.5
    elif delta < 0:
        delta += 0.5
    z = delta / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass(frozen=True)
class CorrelationMatrix:
    """Pairwise Pearson correlation with explicit undefined-entry marks."""

    systems: tuple[str, ...]
    values: np.ndarray  # float64 (S, S); NaN where undefined
    defined: np.ndarray  # bool (S, S)


def pearson_correlation_matrix(table: ScoreTable) -> CorrelationMatrix:
    """Pearson r between systems over cells where both succeeded.

    A pair with fewer than two shared cells or zero variance on either
    side is marked undefined rather than poisoning the rest of the matrix.
    The diagonal is 1 by definition.
    """
    n = len(table.systems)
    values = np.full((n, n), np.nan)
    defined = np.zeros((n, n), dtype=bool)
    flat_scores = table.scores.reshape(n, -1)
    flat_ok = ~table.failed.reshape(n, -1)
    for i in range(n):
        values[i, i] = 1.0
        defined[i, i] = True
        for j in range(i + 1, n):
            both = flat_ok[i] & flat_ok[j]
            if both.sum() < 2:
                continue
            a = flat_scores[i][both]
            b = flat_scores[j][both]
            da = a - a.mean()
            db = b - b.mean()
            denom = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
            if denom == 0.0:
                continue
            r = float(np.sum(da * db)) / denom
            values[i, j] = values[j, i] = r
            defined[i, j] = defined[j, i] = True
    return CorrelationMatrix(table.systems, values, defined)
