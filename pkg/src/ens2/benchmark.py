"""Benchmark harness: run systems over datasets x seeds, score and report.

A "system" is either a single searcher given the whole budget or the
meta-search over all searchers with voting/stacking prediction.  Every
(system, dataset, seed) cell does a fresh stratified split, a full search
and a prediction; failures mark the cell FAILED and the run continues.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .orchestrator import (
    STACKING,
    VOTING,
    SearchPlan,
    run_predict,
    run_search,
)
from .resampling import kfold
from .stats import (
    CorrelationMatrix,
    ScoreTable,
    SystemSummary,
    WilcoxonResult,
    accuracy,
    pearson_correlation_matrix,
    summarize,
    wilcoxon_signed_rank,
)
from .tabular import parse_csv, take_rows

log = logging.getLogger(__name__)

DEFAULT_WORKERS: tuple[tuple[str, str], ...] = (
    ("grid", "grid"),
    ("random", "random"),
    ("halving", "halving"),
)
TEST_SPLIT_FOLDS = 4  # one fold held out => 25% test split


@dataclass(frozen=True)
class BenchmarkSystem:
    """One column of the comparison: who searches and how it predicts."""

    name: str
    workers: tuple[tuple[str, str], ...]
    mode: str = VOTING
    k_top: int = 3
    budget_s: float | None = None  # None: the config-wide budget


@dataclass(frozen=True)
class BenchmarkConfig:
    datasets: tuple[tuple[str, str], ...]  # (csv path, target column)
    seeds: tuple[int, ...]
    budget_s: float
    workers: tuple[tuple[str, str], ...] = DEFAULT_WORKERS
    include_singles: bool = True
    include_voting: bool = True
    include_stacking: bool = False
    equal_compute: bool = False  # singles get the aggregate meta budget
    k_top: int = 3
    metric: str = "accuracy"

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("benchmark needs at least one dataset")
        if not self.seeds:
            raise ValueError("benchmark needs at least one seed")
        if not self.workers:
            raise ValueError("benchmark needs at least one worker kind")
        if self.budget_s <= 0:
            raise ValueError("budget_s must be positive")

    def systems(self) -> list[BenchmarkSystem]:
        out: list[BenchmarkSystem] = []
        if self.include_singles:
            single_budget = (
                self.budget_s * len(self.workers)
                if self.equal_compute
                else self.budget_s
            )
            for sid, kind in self.workers:
                out.append(
                    BenchmarkSystem(
                        name=sid,
                        workers=((sid, kind),),
                        mode=VOTING,
                        k_top=1,
                        budget_s=single_budget,
                    )
                )
        if self.include_voting:
            out.append(
                BenchmarkSystem(
                    name="ens-voting", workers=self.workers, mode=VOTING,
                    k_top=self.k_top,
                )
            )
        if self.include_stacking:
            out.append(
                BenchmarkSystem(
                    name="ens-stacking", workers=self.workers, mode=STACKING,
                    k_top=self.k_top,
                )
            )
        if not out:
            raise ValueError("no systems enabled")
        return out


@dataclass
class BenchmarkResult:
    out_dir: Path
    table: ScoreTable
    summaries: list[SystemSummary]
    table_path: Path
    report_path: Path


def _dataset_name(path: str) -> str:
    return Path(path).stem


def run_benchmark(config: BenchmarkConfig, out_dir: str | Path) -> BenchmarkResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    systems = config.systems()
    dataset_names = tuple(_dataset_name(p) for p, _ in config.datasets)
    if len(set(dataset_names)) != len(dataset_names):
        raise ValueError("dataset file names must be distinct")

    shape = (len(systems), len(dataset_names), len(config.seeds))
    scores = np.full(shape, np.nan)
    failed = np.zeros(shape, dtype=bool)

    for d_idx, (path, target) in enumerate(config.datasets):
        full = parse_csv(Path(path).read_bytes(), target)
        if full.labels is None:
            raise ValueError(f"{path}: target column produced no labels")
        for e_idx, seed in enumerate(config.seeds):
            quarters = kfold(full.n_rows, TEST_SPLIT_FOLDS, full.labels, seed)
            test_rows = quarters.rows_in_fold(0)
            train_rows = quarters.rows_not_in_fold(0)
            train_ds = take_rows(full, train_rows)
            test_ds = take_rows(full, test_rows)
            truth = np.array(
                [full.label_vocab[i] for i in test_ds.labels], dtype=object
            )
            for s_idx, system in enumerate(systems):
                run_dir = (
                    out_dir
                    / "runs"
                    / dataset_names[d_idx]
                    / f"seed{seed}"
                    / system.name
                )
                started = time.monotonic()
                try:
                    plan = SearchPlan(
                        workers=system.workers,
                        time_budget_s=system.budget_s or config.budget_s,
                        seed=seed,
                        k_top=system.k_top,
                        metric=config.metric,
                        retry_failed=True,
                    )
                    outcome = run_search(train_ds, plan, run_dir)
                    prediction = run_predict(outcome, test_ds, mode=system.mode)
                    scores[s_idx, d_idx, e_idx] = accuracy(prediction.labels, truth)
                except Exception as exc:
                    failed[s_idx, d_idx, e_idx] = True
                    log.warning(
                        "cell failed: system=%s dataset=%s seed=%d: %s",
                        system.name, dataset_names[d_idx], seed, exc,
                    )
                log.info(
                    "cell done: system=%s dataset=%s seed=%d score=%s (%.1fs)",
                    system.name,
                    dataset_names[d_idx],
                    seed,
                    scores[s_idx, d_idx, e_idx],
                    time.monotonic() - started,
                )

    table = ScoreTable(
        systems=tuple(s.name for s in systems),
        datasets=dataset_names,
        seeds=tuple(config.seeds),
        scores=scores,
        failed=failed,
    )
    table_path = out_dir / "score_table.csv"
    table_path.write_bytes(table.to_csv_bytes())
    summaries = summarize(table)
    summary_path = out_dir / "summary.csv"
    summary_path.write_text(_summary_csv(summaries), encoding="utf-8")
    report_path = out_dir / "report.md"
    report_path.write_text(render_report(table), encoding="utf-8")
    return BenchmarkResult(
        out_dir=out_dir,
        table=table,
        summaries=summaries,
        table_path=table_path,
        report_path=report_path,
    )


def _summary_csv(summaries: list[SystemSummary]) -> str:
    lines = ["system,avg_accuracy,avg_rank,first_place,failures"]
    for s in summaries:
        lines.append(
            f"{s.system},{s.avg_accuracy:.6f},{s.avg_rank:.6f},"
            f"{s.first_place_count},{s.n_failures}"
        )
    return "\n".join(lines) + "\n"


def wilcoxon_matrix(
    table: ScoreTable, alpha: float = 0.05
) -> dict[tuple[str, str], WilcoxonResult]:
    """Pairwise signed-rank tests over cells where both systems succeeded."""
    flat_scores = table.scores.reshape(len(table.systems), -1)
    flat_ok = ~table.failed.reshape(len(table.systems), -1)
    out: dict[tuple[str, str], WilcoxonResult] = {}
    for i, a in enumerate(table.systems):
        for j, b in enumerate(table.systems):
            if i >= j:
                continue
            shared = flat_ok[i] & flat_ok[j]
            if not np.any(shared):
                continue  # no shared cells: the pair is untestable
            out[(a, b)] = wilcoxon_signed_rank(
                flat_scores[i][shared], flat_scores[j][shared], alpha=alpha
            )
    return out


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def render_report(table: ScoreTable, alpha: float = 0.05) -> str:
    """Markdown benchmark report; a pure function of the score table."""
    summaries = summarize(table)
    pairs = wilcoxon_matrix(table, alpha=alpha)
    corr = pearson_correlation_matrix(table)

    lines: list[str] = []
    lines.append("# Benchmark report")
    lines.append("")
    lines.append(
        f"{len(table.systems)} systems x {len(table.datasets)} datasets x "
        f"{len(table.seeds)} seeds; scores are test-set accuracy."
    )
    lines.append("")
    lines.append("## Summary")
    lines.append("")
    lines.append("| System | Avg Accuracy | Avg Rank | First Place | Failures |")
    lines.append("| --- | --- | --- | --- | --- |")
    for s in summaries:
        lines.append(
            f"| {s.system} | {_fmt(s.avg_accuracy)} | {_fmt(s.avg_rank)} "
            f"| {s.first_place_count} | {s.n_failures} |"
        )
    lines.append("")

    lines.append("## Accuracy by dataset (mean over seeds)")
    lines.append("")
    lines.append("| System | " + " | ".join(table.datasets) + " |")
    lines.append("| --- |" + " --- |" * len(table.datasets))
    for s_idx, system in enumerate(table.systems):
        cells = []
        for d_idx in range(len(table.datasets)):
            ok = ~table.failed[s_idx, d_idx]
            if not np.any(ok):
                cells.append("FAILED")
            else:
                cells.append(_fmt(float(np.mean(table.scores[s_idx, d_idx][ok]))))
        lines.append(f"| {system} | " + " | ".join(cells) + " |")
    lines.append("")

    lines.append("## Per-cell scores")
    lines.append("")
    lines.append("| System | Dataset | Seed | Accuracy |")
    lines.append("| --- | --- | --- | --- |")
    for s_idx, system in enumerate(table.systems):
        for d_idx, dataset in enumerate(table.datasets):
            for e_idx, seed in enumerate(table.seeds):
                if table.failed[s_idx, d_idx, e_idx]:
                    cell = "FAILED"
                else:
                    cell = _fmt(float(table.scores[s_idx, d_idx, e_idx]))
                lines.append(f"| {system} | {dataset} | {seed} | {cell} |")
    lines.append("")

    lines.append(f"## Wilcoxon signed-rank (two-sided, alpha={alpha:g})")
    lines.append("")
    lines.append("Starred entries reject the no-difference hypothesis.")
    lines.append("")
    lines.append("| | " + " | ".join(table.systems) + " |")
    lines.append("| --- |" + " --- |" * len(table.systems))
    for i, a in enumerate(table.systems):
        cells = []
        for j, b in enumerate(table.systems):
            if i == j:
                cells.append("-")
                continue
            result = pairs.get((a, b)) or pairs.get((b, a))
            if result is None:
                cells.append("n/a")
                continue
            mark = "*" if result.reject else ""
            cells.append(f"p={result.p_two_sided:.4f}{mark}")
        lines.append(f"| {a} | " + " | ".join(cells) + " |")
    lines.append("")

    lines.append("## Pearson correlation of per-cell accuracy")
    lines.append("")
    lines.append("| | " + " | ".join(corr.systems) + " |")
    lines.append("| --- |" + " --- |" * len(corr.systems))
    for i, a in enumerate(corr.systems):
        cells = []
        for j in range(len(corr.systems)):
            if corr.defined[i, j]:
                cells.append(_fmt(float(corr.values[i, j])))
            else:
                cells.append("n/a")
        lines.append(f"| {a} | " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines) + "\n"
