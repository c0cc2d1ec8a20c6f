"""Supervises parallel search workers and drives ensemble prediction.

One run lives in a run directory:

    runs/<run_id>/plan.json
    runs/<run_id>/train.csv
    runs/<run_id>/workers/<searcher_id>/   (each worker's artifacts)
    runs/<run_id>/merged.ndjson            (ranked union of all pipelines)
    runs/<run_id>/predictions/final.csv

Workers are plain child processes.  A worker that overruns the budget gets
SIGTERM, then SIGKILL after the grace period; whatever it persisted before
dying is recovered from its artifact directory.  The run as a whole fails
only when no worker leaves anything usable behind.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import protocol
from .ensemble import assemble_oof_design, majority_vote, stacker_predict, train_stacker
from .tabular import Dataset, PipelineRecord, PredictionMatrix, dataset_to_csv_bytes, parse_csv
from .worker import read_oof_csv, read_prediction_csv, write_prediction_csv

log = logging.getLogger(__name__)

DEFAULT_K_TOP = 3
SUPERVISOR_POLL_S = 0.05
PREDICT_TIMEOUT_S = 120.0
EXIT_BUDGET_KILL = 124

WORKER_COMPLETE = "complete"
WORKER_RECOVERED = "recovered_partial"
WORKER_FAILED = "failed"

VOTING = "voting"
STACKING = "stacking"


class MetaSearchError(RuntimeError):
    """The whole meta-search (or its prediction phase) failed."""


def default_grace_s(time_budget_s: float) -> float:
    """Desk-scale analog of a fixed large grace window: at least 5 s,
    growing with the budget."""
    return max(5.0, 0.1 * time_budget_s)


def worker_roster(kinds: list[str]) -> tuple[tuple[str, str], ...]:
    """(searcher_id, kind) pairs from a kind list; duplicates get suffixes."""
    seen: dict[str, int] = {}
    roster = []
    for kind in kinds:
        seen[kind] = seen.get(kind, 0) + 1
        sid = kind if seen[kind] == 1 else f"{kind}{seen[kind]}"
        roster.append((sid, kind))
    return tuple(roster)


@dataclass(frozen=True)
class SearchPlan:
    workers: tuple[tuple[str, str], ...]  # (searcher_id, searcher kind)
    time_budget_s: float
    grace_period_s: float | None = None  # None: default_grace_s(budget)
    refit_fraction: float = 0.25
    seed: int = 0
    k_top: int = DEFAULT_K_TOP
    metric: str = "accuracy"
    retry_failed: bool = False

    def __post_init__(self):
        if not self.workers:
            raise ValueError("plan needs at least one worker")
        ids = [sid for sid, _ in self.workers]
        if len(set(ids)) != len(ids):
            raise ValueError("searcher_ids must be unique")
        if self.time_budget_s <= 0:
            raise ValueError("time_budget_s must be positive")
        if self.grace_period_s is not None and self.grace_period_s < 0:
            raise ValueError("grace_period_s must be non-negative")
        if self.k_top < 1:
            raise ValueError("k_top must be at least 1")

    @property
    def grace_s(self) -> float:
        if self.grace_period_s is None:
            return default_grace_s(self.time_budget_s)
        return self.grace_period_s


@dataclass
class WorkerLog:
    searcher_id: str
    kind: str
    exit_code: int | None = None
    result: dict | None = None  # SearchResult payload, if the worker sent one
    error: str | None = None
    n_recovered: int = 0
    attempts: int = 1
    heartbeat_times: list[float] = field(default_factory=list)
    stderr_tail: str = ""


@dataclass
class SearchOutcome:
    run_id: str
    run_dir: Path
    worker_status: dict[str, str]
    merged: list[PipelineRecord]
    logs: dict[str, WorkerLog]

    def worker_dir(self, searcher_id: str) -> Path:
        return self.run_dir / "workers" / searcher_id

    def artifact_path(self, record: PipelineRecord) -> Path | None:
        if record.artifact_ref is None:
            return None
        return self.worker_dir(record.searcher_id) / record.artifact_ref


class _Handle:
    """One supervised worker process plus its stdout/stderr readers."""

    def __init__(self, searcher_id: str, kind: str, proc: subprocess.Popen):
        self.searcher_id = searcher_id
        self.kind = kind
        self.proc = proc
        self.heartbeat_times: list[float] = []
        self.result: dict | None = None
        self.error: str | None = None
        self.stderr = b""
        self.stop_requested = False
        self.killed = False
        self._threads = [
            threading.Thread(target=self._read_stdout, daemon=True),
            threading.Thread(target=self._read_stderr, daemon=True),
        ]
        for t in self._threads:
            t.start()

    def _read_stdout(self):
        for line in self.proc.stdout:
            now = time.monotonic()
            try:
                env = protocol.decode(line)
            except protocol.ProtocolError:
                continue  # garbage on the pipe is a worker bug, not ours
            if env.kind == protocol.KIND_HEARTBEAT:
                self.heartbeat_times.append(now)
            elif env.kind == protocol.KIND_SEARCH_RESULT:
                self.result = env.payload
            elif env.kind == protocol.KIND_ERROR:
                self.error = env.payload.get("message")

    def _read_stderr(self):
        self.stderr = self.proc.stderr.read()

    def join(self):
        for t in self._threads:
            t.join(timeout=5.0)

    @property
    def logged_exit_code(self) -> int:
        code = self.proc.returncode
        if self.killed:
            return EXIT_BUDGET_KILL
        if self.stop_requested and code is not None and code < 0:
            return EXIT_BUDGET_KILL  # died from our stop signal
        return code


def _launch(
    searcher_id: str,
    kind: str,
    run_id: str,
    train_path: Path,
    target: str,
    plan: SearchPlan,
    worker_dir: Path,
) -> _Handle:
    worker_dir.mkdir(parents=True, exist_ok=True)
    request = protocol.WorkerEnvelope(
        kind=protocol.KIND_SEARCH_REQUEST,
        run_id=run_id,
        payload={
            "dataset_path": str(train_path),
            "target": target,
            "metric": plan.metric,
            "time_budget_s": plan.time_budget_s,
            "refit_fraction": plan.refit_fraction,
            "seed": plan.seed,
            "artifact_dir": str(worker_dir),
        },
    )
    proc = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "ens2.worker",
            "search",
            "--searcher",
            kind,
            "--searcher-id",
            searcher_id,
        ],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )
    try:
        proc.stdin.write(protocol.encode(request))
        proc.stdin.flush()
        proc.stdin.close()
    except BrokenPipeError:
        pass  # instant crash; judged by exit code and artifacts like any other
    return _Handle(searcher_id, kind, proc)


def _supervise(handles: list[_Handle], time_budget_s: float, grace_s: float) -> None:
    """SIGTERM overruns at the budget, SIGKILL at budget + grace."""
    deadline = time.monotonic() + time_budget_s
    while time.monotonic() < deadline:
        if all(h.proc.poll() is not None for h in handles):
            break
        time.sleep(SUPERVISOR_POLL_S)
    for h in handles:
        if h.proc.poll() is None:
            h.stop_requested = True
            h.proc.terminate()
    kill_at = deadline + grace_s
    while time.monotonic() < kill_at:
        if all(h.proc.poll() is not None for h in handles):
            break
        time.sleep(SUPERVISOR_POLL_S)
    for h in handles:
        if h.proc.poll() is None:
            h.killed = True
            h.proc.kill()
    for h in handles:
        h.proc.wait()
        h.join()


def _recover_records(worker_dir: Path) -> list[PipelineRecord]:
    """Read every complete pipeline record a worker left behind.

    Lines that do not parse are skipped: the atomic-rename discipline makes
    them impossible in normal operation, so tolerance here is pure defense.
    """
    path = worker_dir / "pipelines.ndjson"
    if not path.exists():
        return []
    records = []
    for line in path.read_bytes().split(b"\n"):
        if not line.strip():
            continue
        try:
            records.append(PipelineRecord.from_json_obj(json.loads(line)))
        except (ValueError, KeyError):
            continue
    return records


def rank_pipelines(records: list[PipelineRecord]) -> list[PipelineRecord]:
    """Total order: score desc, then discovery order, then searcher id."""
    if not records:
        raise ValueError("no pipelines to rank")
    return sorted(
        records,
        key=lambda r: (-r.validation_score, r.discovered_at, r.searcher_id),
    )


def select_top_k(ranked: list[PipelineRecord], k: int) -> list[PipelineRecord]:
    if not ranked:
        raise ValueError("no pipelines to select from")
    return ranked[: min(k, len(ranked))]


def select_best_per_searcher(ranked: list[PipelineRecord]) -> list[PipelineRecord]:
    """Each searcher's best pipeline, skipping searchers whose best lacks
    out-of-fold predictions."""
    if not ranked:
        raise ValueError("no pipelines to select from")
    best: dict[str, PipelineRecord] = {}
    for record in ranked:
        best.setdefault(record.searcher_id, record)
    kept = []
    for record in best.values():
        if record.has_oof:
            kept.append(record)
        else:
            log.warning(
                "searcher %s excluded from stacking: best pipeline %s has no "
                "out-of-fold predictions",
                record.searcher_id,
                record.id,
            )
    if not kept:
        raise MetaSearchError("stacker has no base learners")
    return kept


def run_search(
    train: Dataset,
    plan: SearchPlan,
    run_dir: str | Path,
    run_id: str | None = None,
) -> SearchOutcome:
    """Run every planned worker in parallel and merge what they produce."""
    if train.labels is None:
        raise ValueError("run_search needs a labeled dataset")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    run_id = run_id or run_dir.name

    train_path = run_dir / "train.csv"
    train_path.write_bytes(dataset_to_csv_bytes(train))
    plan_obj = {
        "run_id": run_id,
        "workers": [[sid, kind] for sid, kind in plan.workers],
        "time_budget_s": plan.time_budget_s,
        "grace_period_s": plan.grace_s,
        "refit_fraction": plan.refit_fraction,
        "seed": plan.seed,
        "k_top": plan.k_top,
        "metric": plan.metric,
        "target": train.schema.target,
    }
    (run_dir / "plan.json").write_text(
        json.dumps(plan_obj, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )

    target = train.schema.target
    handles = [
        _launch(sid, kind, run_id, train_path, target, plan, run_dir / "workers" / sid)
        for sid, kind in plan.workers
    ]
    _supervise(handles, plan.time_budget_s, plan.grace_s)

    logs: dict[str, WorkerLog] = {}
    by_sid: dict[str, _Handle] = {h.searcher_id: h for h in handles}
    retried: set[str] = set()
    if plan.retry_failed:
        retry = [
            (h.searcher_id, h.kind)
            for h in handles
            if h.logged_exit_code != 0
            and not _recover_records(run_dir / "workers" / h.searcher_id)
        ]
        if retry:
            log.warning("retrying failed workers: %s", [sid for sid, _ in retry])
            second = [
                _launch(sid, kind, run_id, train_path, target, plan,
                        run_dir / "workers" / sid)
                for sid, kind in retry
            ]
            _supervise(second, plan.time_budget_s, plan.grace_s)
            for h in second:
                by_sid[h.searcher_id] = h
                retried.add(h.searcher_id)

    worker_status: dict[str, str] = {}
    merged_records: list[PipelineRecord] = []
    for sid, kind in plan.workers:
        h = by_sid[sid]
        records = _recover_records(run_dir / "workers" / sid)
        entry = WorkerLog(
            searcher_id=sid,
            kind=kind,
            exit_code=h.logged_exit_code,
            result=h.result,
            error=h.error,
            n_recovered=len(records),
            attempts=2 if sid in retried else 1,
            heartbeat_times=list(h.heartbeat_times),
            stderr_tail=h.stderr[-2000:].decode("utf-8", errors="replace"),
        )
        logs[sid] = entry
        if h.logged_exit_code == 0 and h.result is not None and records:
            worker_status[sid] = WORKER_COMPLETE
        elif records:
            worker_status[sid] = WORKER_RECOVERED
        else:
            worker_status[sid] = WORKER_FAILED
        merged_records.extend(records)

    if not merged_records:
        raise MetaSearchError("meta-search failed")
    merged = rank_pipelines(merged_records)
    merged_lines = [json.dumps(r.to_json_obj(), sort_keys=True) for r in merged]
    (run_dir / "merged.ndjson").write_text(
        "\n".join(merged_lines) + "\n", encoding="utf-8"
    )
    return SearchOutcome(
        run_id=run_id,
        run_dir=run_dir,
        worker_status=worker_status,
        merged=merged,
        logs=logs,
    )


def load_outcome(run_dir: str | Path) -> SearchOutcome:
    """Rebuild a SearchOutcome from a completed run directory."""
    run_dir = Path(run_dir)
    merged_path = run_dir / "merged.ndjson"
    plan_path = run_dir / "plan.json"
    if not plan_path.exists() or not merged_path.exists():
        raise FileNotFoundError(f"{run_dir} is not a completed run directory")
    plan_obj = json.loads(plan_path.read_text(encoding="utf-8"))
    records = []
    for line in merged_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(PipelineRecord.from_json_obj(json.loads(line)))
    if not records:
        raise FileNotFoundError(f"{merged_path} holds no pipeline records")
    return SearchOutcome(
        run_id=plan_obj["run_id"],
        run_dir=run_dir,
        worker_status={},
        merged=rank_pipelines(records),
        logs={},
    )


@dataclass
class PredictOutcome:
    mode: str
    labels: np.ndarray  # final predicted label names, one per test row
    final_path: Path
    per_pipeline: dict[str, Path]
    used: tuple[str, ...]
    dropped: tuple[str, ...]


def _predict_wave(
    outcome: SearchOutcome,
    records: list[PipelineRecord],
    test_path: Path,
    pred_dir: Path,
    timeout_s: float,
) -> dict[str, PredictionMatrix]:
    """Run predict-mode workers in parallel; returns whatever succeeded."""
    procs: list[tuple[PipelineRecord, subprocess.Popen, Path]] = []
    for record in records:
        out_path = pred_dir / f"{record.id}.csv"
        request = protocol.WorkerEnvelope(
            kind=protocol.KIND_PREDICT_REQUEST,
            run_id=outcome.run_id,
            payload={
                "pipeline_id": record.id,
                "artifact_dir": str(outcome.worker_dir(record.searcher_id)),
                "test_dataset_path": str(test_path),
                "output_path": str(out_path),
            },
        )
        proc = subprocess.Popen(
            [sys.executable, "-m", "ens2.worker", "predict"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )
        try:
            proc.stdin.write(protocol.encode(request))
            proc.stdin.flush()
            proc.stdin.close()
        except BrokenPipeError:
            pass
        procs.append((record, proc, out_path))

    results: dict[str, PredictionMatrix] = {}
    deadline = time.monotonic() + timeout_s
    for record, proc, out_path in procs:
        remaining = max(0.1, deadline - time.monotonic())
        try:
            proc.wait(timeout=remaining)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        proc.stdout.read()
        proc.stderr.read()
        if proc.returncode == 0 and out_path.exists():
            try:
                results[record.id] = read_prediction_csv(out_path)
            except ValueError:
                log.warning("unreadable prediction file for %s", record.id)
    return results


def _write_label_csv(path: Path, labels: np.ndarray) -> None:
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["row_index", "predicted_label"])
    for i, name in enumerate(labels):
        writer.writerow([str(i), str(name)])
    path.write_text(out.getvalue(), encoding="utf-8")


def run_predict(
    outcome: SearchOutcome,
    test: Dataset,
    mode: str = VOTING,
    k: int | None = None,
    predict_timeout_s: float = PREDICT_TIMEOUT_S,
) -> PredictOutcome:
    """Predict the test set with the chosen ensemble over the run's pipelines."""
    if mode not in (VOTING, STACKING):
        raise ValueError(f"unknown prediction mode {mode!r}")
    plan_obj = json.loads((outcome.run_dir / "plan.json").read_text(encoding="utf-8"))
    pred_dir = outcome.run_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    test_path = pred_dir / "test.csv"
    test_path.write_bytes(dataset_to_csv_bytes(test))
    final_path = pred_dir / "final.csv"
    ranked = outcome.merged

    if mode == VOTING:
        if k is None:
            k = int(plan_obj["k_top"])
        if k > len(ranked):
            log.warning(
                "k=%d exceeds the %d discovered pipelines; using all", k, len(ranked)
            )
        committee = select_top_k(ranked, k)
        pool = ranked[len(committee):]
        results = _predict_wave(outcome, committee, test_path, pred_dir, predict_timeout_s)
        members = [r for r in committee if r.id in results]
        dropped = [r.id for r in committee if r.id not in results]
        for candidate in pool:
            if len(members) >= len(committee):
                break
            one = _predict_wave(
                outcome, [candidate], test_path, pred_dir, predict_timeout_s
            )
            if candidate.id in one:
                results.update(one)
                members.append(candidate)
        if not members:
            raise MetaSearchError("prediction failed: no pipeline produced predictions")
        vocab = results[members[0].id].label_vocab
        for r in members[1:]:
            if results[r.id].label_vocab != vocab:
                raise MetaSearchError(
                    f"pipeline {r.id} predicts a different label vocabulary"
                )
        rank_of = {r.id: i + 1 for i, r in enumerate(ranked)}
        votes = [results[r.id].argmax_labels() for r in members]
        ranks = [rank_of[r.id] for r in members]
        label_idx = majority_vote(votes, ranks)
        labels = np.array([vocab[i] for i in label_idx], dtype=object)
        _write_label_csv(final_path, labels)
        return PredictOutcome(
            mode=mode,
            labels=labels,
            final_path=final_path,
            per_pipeline={r.id: pred_dir / f"{r.id}.csv" for r in members},
            used=tuple(r.id for r in members),
            dropped=tuple(dropped),
        )

    roster_records = select_best_per_searcher(ranked)
    results = _predict_wave(
        outcome, roster_records, test_path, pred_dir, predict_timeout_s
    )
    kept = [r for r in roster_records if r.id in results]
    dropped = [r.id for r in roster_records if r.id not in results]
    if not kept:
        raise MetaSearchError("prediction failed: no pipeline produced predictions")
    if dropped:
        log.warning("stacking without failed base learners: %s", dropped)

    train = parse_csv(
        (outcome.run_dir / "train.csv").read_bytes(), plan_obj["target"]
    )
    oof = {}
    for record in kept:
        oof_path = outcome.worker_dir(record.searcher_id) / "oof" / f"{record.id}.csv"
        oof[record.id] = read_oof_csv(oof_path)
    roster = tuple(record.id for record in kept)
    design = assemble_oof_design(oof, roster, train.labels)
    model = train_stacker(design)
    model.save(pred_dir / "stacker.json")
    label_idx, probs = stacker_predict(
        model, {record.id: results[record.id] for record in kept}
    )
    matrix = PredictionMatrix(model.label_vocab, probs)
    write_prediction_csv(final_path, matrix)
    labels = np.array([model.label_vocab[i] for i in label_idx], dtype=object)
    return PredictOutcome(
        mode=mode,
        labels=labels,
        final_path=final_path,
        per_pipeline={record.id: pred_dir / f"{record.id}.csv" for record in kept},
        used=roster,
        dropped=tuple(dropped),
    )
