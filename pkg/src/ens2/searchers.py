"""Three pipeline-search strategies with deliberately different heuristics.

* grid: exhaustive sweep over preprocessing templates x estimators x a
  coarse hyperparameter grid, in a fixed order.
* random: uniform sampling over the whole primitive/hyperparameter space.
* halving: successive halving of a sampled cohort on growing data
  fractions scored against a holdout, with full CV only for the survivor.

Each evaluates candidates by 3-fold cross-validation (holdout during
halving rungs), respects a wall-clock deadline, and reports discovered
pipelines with their out-of-fold prediction matrices.  A searcher run is
a deterministic function of (dataset, seed) when the budget is generous
enough to finish.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .pipeline import (
    CandidatePipeline,
    CvHook,
    PipelineFitError,
    cv_evaluate,
    fit_candidate,
    fold_metric,
    normalized_score,
)
from .primitives import PRIMITIVE_REGISTRY
from .resampling import kfold
from .tabular import Dataset, PipelineRecord, PredictionMatrix, TaskSpec

CV_FOLDS = 3

SEARCH_COMPLETE = "complete"
SEARCH_BUDGET_EXHAUSTED = "budget_exhausted"
SEARCH_FAILED = "failed"

#: Fixed preprocessing templates for the grid searcher.
GRID_TEMPLATES: tuple[tuple[str, str, str | None], ...] = (
    ("impute_mean", "onehot", "standardize"),
    ("impute_mean", "onehot", None),
    ("impute_median", "onehot", "standardize"),
    ("impute_mode", "ordinal", "standardize"),
)

#: Coarse per-estimator grids for the grid searcher.
GRID_ESTIMATOR_GRIDS: tuple[tuple[str, tuple[dict, ...]], ...] = (
    ("gaussian_nb", ({"var_smoothing": 1e-9},)),
    ("knn", ({"k": 1}, {"k": 5}, {"k": 11})),
    (
        "decision_tree",
        (
            {"max_depth": 2, "min_leaf": 1},
            {"max_depth": 2, "min_leaf": 3},
            {"max_depth": 4, "min_leaf": 1},
            {"max_depth": 4, "min_leaf": 3},
            {"max_depth": 8, "min_leaf": 1},
            {"max_depth": 8, "min_leaf": 3},
        ),
    ),
    ("softmax_linear", ({"l2": 1e-3}, {"l2": 1e-1})),
)

RANDOM_SEARCH_CANDIDATES = 64
HALVING_COHORT = 16
HALVING_BASE_FRACTION = 0.25

OnCandidate = Callable[[PipelineRecord, PredictionMatrix | None], None]


@dataclass
class SearchReport:
    """Everything a searcher run produced."""

    searcher_id: str
    pipelines: list[PipelineRecord] = field(default_factory=list)
    oof: dict[str, PredictionMatrix] = field(default_factory=dict)
    candidates: dict[str, CandidatePipeline] = field(default_factory=dict)
    elapsed_s: float = 0.0
    status: str = SEARCH_FAILED
    failure_reason: str | None = None


def make_candidate(
    imputer: str, encoder: str, scaler: str | None, estimator: str, hyperparams: dict
) -> CandidatePipeline:
    steps = [
        (PRIMITIVE_REGISTRY[imputer], {}),
        (PRIMITIVE_REGISTRY[encoder], {}),
    ]
    if scaler is not None:
        steps.append((PRIMITIVE_REGISTRY[scaler], {}))
    steps.append((PRIMITIVE_REGISTRY[estimator], dict(hyperparams)))
    return CandidatePipeline(steps=tuple(steps))


class _Emitter:
    """Shared bookkeeping: ids, ordering, streaming callback."""

    def __init__(self, report: SearchReport, on_candidate: OnCandidate | None):
        self.report = report
        self.on_candidate = on_candidate
        self.counter = 0

    def emit(
        self,
        candidate: CandidatePipeline,
        score: float,
        oof: PredictionMatrix | None,
    ) -> PipelineRecord:
        pid = f"{self.report.searcher_id}-{self.counter:04d}"
        record = PipelineRecord(
            id=pid,
            searcher_id=self.report.searcher_id,
            steps=candidate.step_descriptors,
            validation_score=score,
            artifact_ref=None,
            has_oof=oof is not None,
            discovered_at=self.counter,
        )
        self.counter += 1
        self.report.pipelines.append(record)
        self.report.candidates[pid] = candidate
        if oof is not None:
            self.report.oof[pid] = oof
        if self.on_candidate is not None:
            self.on_candidate(record, oof)
        return record


def _finish(report: SearchReport, started: float, ran_out: bool, nominal_done: bool) -> SearchReport:
    report.elapsed_s = time.monotonic() - started
    if not report.pipelines:
        report.status = SEARCH_FAILED
        report.failure_reason = "budget too small: no candidate evaluated"
    elif nominal_done and not ran_out:
        report.status = SEARCH_COMPLETE
    else:
        report.status = SEARCH_BUDGET_EXHAUSTED
    return report


def _cv_candidates(
    candidates: list[CandidatePipeline],
    d: Dataset,
    spec: TaskSpec,
    deadline: float,
    report: SearchReport,
    on_candidate: OnCandidate | None,
    cv_hook: CvHook | None,
    started: float,
) -> SearchReport:
    """Evaluate a fixed candidate list by k-fold CV until the deadline."""
    folds = kfold(d.n_rows, min(CV_FOLDS, d.n_rows), d.labels, spec.seed)
    emitter = _Emitter(report, on_candidate)
    ran_out = False
    done = 0
    for candidate in candidates:
        if time.monotonic() >= deadline:
            ran_out = True
            break
        try:
            raw, oof = cv_evaluate(candidate, d, folds, spec.metric, cv_hook)
        except PipelineFitError:
            done += 1  # candidate-level failure is not fatal to the search
            continue
        emitter.emit(candidate, normalized_score(spec.metric, raw), oof)
        done += 1
    return _finish(report, started, ran_out, nominal_done=done == len(candidates))


def grid_template_search(
    d: Dataset,
    spec: TaskSpec,
    deadline: float,
    searcher_id: str = "grid",
    on_candidate: OnCandidate | None = None,
    cv_hook: CvHook | None = None,
    max_candidates: int | None = None,
) -> SearchReport:
    """Sweep templates x estimators x coarse grids in a fixed order."""
    started = time.monotonic()
    candidates = [
        make_candidate(imputer, encoder, scaler, estimator, hp)
        for imputer, encoder, scaler in GRID_TEMPLATES
        for estimator, grid in GRID_ESTIMATOR_GRIDS
        for hp in grid
    ]
    if max_candidates is not None:
        candidates = candidates[:max_candidates]
    report = SearchReport(searcher_id=searcher_id)
    return _cv_candidates(
        candidates, d, spec, deadline, report, on_candidate, cv_hook, started
    )


def _sample_candidate(rng: np.random.Generator) -> CandidatePipeline:
    imputer = rng.choice(["impute_mean", "impute_median", "impute_mode"])
    encoder = rng.choice(["onehot", "ordinal"])
    scaler = rng.choice(["standardize", "none"])
    estimator = rng.choice(
        ["gaussian_nb", "knn", "decision_tree", "softmax_linear"]
    )
    space = PRIMITIVE_REGISTRY[str(estimator)].hyperparam_space
    hyperparams = {
        name: values[int(rng.integers(len(values)))]
        for name, values in sorted(space.items())
    }
    return make_candidate(
        str(imputer),
        str(encoder),
        None if scaler == "none" else str(scaler),
        str(estimator),
        hyperparams,
    )


def random_search(
    d: Dataset,
    spec: TaskSpec,
    deadline: float,
    searcher_id: str = "random",
    on_candidate: OnCandidate | None = None,
    cv_hook: CvHook | None = None,
    n_candidates: int = RANDOM_SEARCH_CANDIDATES,
) -> SearchReport:
    """Uniformly sample pipelines from the primitive space."""
    started = time.monotonic()
    rng = np.random.default_rng([spec.seed, 1])
    candidates = [_sample_candidate(rng) for _ in range(n_candidates)]
    report = SearchReport(searcher_id=searcher_id)
    return _cv_candidates(
        candidates, d, spec, deadline, report, on_candidate, cv_hook, started
    )


def successive_halving_search(
    d: Dataset,
    spec: TaskSpec,
    deadline: float,
    searcher_id: str = "halving",
    on_candidate: OnCandidate | None = None,
    cv_hook: CvHook | None = None,
    cohort_size: int = HALVING_COHORT,
) -> SearchReport:
    """Successive halving: cohort of sampled candidates, holdout scoring on
    growing data fractions, full CV for the final survivor."""
    started = time.monotonic()
    report = SearchReport(searcher_id=searcher_id)
    emitter = _Emitter(report, on_candidate)
    rng = np.random.default_rng([spec.seed, 2])
    cohort = [_sample_candidate(rng) for _ in range(cohort_size)]

    # Hold out ~25% of rows for rung scoring; rungs train on growing
    # prefixes of a fixed permutation of the remainder.
    quarters = kfold(d.n_rows, 4, d.labels, spec.seed)
    holdout_rows = quarters.rows_in_fold(0)
    pool_rows = quarters.rows_not_in_fold(0)
    pool_rows = pool_rows[rng.permutation(len(pool_rows))]
    truth = d.labels[holdout_rows]

    alive = list(range(len(cohort)))
    last_score: dict[int, float] = {}
    ran_out = False
    rung = 0
    while len(alive) > 1 and not ran_out:
        fraction = min(HALVING_BASE_FRACTION * (2**rung), 1.0)
        n_take = max(int(np.ceil(fraction * len(pool_rows))), 2)
        subset = np.sort(pool_rows[:n_take])
        scores: dict[int, float] = {}
        for idx in alive:
            if time.monotonic() >= deadline:
                ran_out = True
                break
            try:
                fitted = fit_candidate(cohort[idx], d, subset)
                probs = fitted.predict_proba_rows(d, holdout_rows)
            except PipelineFitError:
                scores[idx] = -1.0  # always eliminated first, never reported
                continue
            raw = fold_metric(spec.metric, probs, truth)
            scores[idx] = normalized_score(spec.metric, raw)
            last_score[idx] = scores[idx]
        if ran_out:
            break
        order = sorted(alive, key=lambda i: (-scores[i], i))
        keep = max(len(alive) // 2, 1)
        survivors, eliminated = order[:keep], order[keep:]
        for idx in sorted(eliminated):
            if idx in last_score:
                emitter.emit(cohort[idx], last_score[idx], None)
        alive = sorted(survivors)
        rung += 1

    if ran_out:
        # Report whatever still-alive candidates have a completed rung score.
        for idx in alive:
            if idx in last_score:
                emitter.emit(cohort[idx], last_score[idx], None)
        return _finish(report, started, ran_out=True, nominal_done=False)

    folds = kfold(d.n_rows, min(CV_FOLDS, d.n_rows), d.labels, spec.seed)
    for idx in alive:
        if time.monotonic() >= deadline:
            return _finish(report, started, ran_out=True, nominal_done=False)
        try:
            raw, oof = cv_evaluate(cohort[idx], d, folds, spec.metric, cv_hook)
        except PipelineFitError:
            continue
        emitter.emit(cohort[idx], normalized_score(spec.metric, raw), oof)
    return _finish(report, started, ran_out=False, nominal_done=True)


SEARCHER_KINDS: dict[str, Callable] = {
    "grid": grid_template_search,
    "random": random_search,
    "halving": successive_halving_search,
}
