"""Worker process: runs one search or predict job driven by stdin/stdout.

The supervisor writes a single request envelope to the worker's stdin and
reads heartbeat/progress/result envelopes from its stdout.  Artifacts are
handed over through the worker's artifact directory; every file there is
published atomically (temp + rename) so a kill at any instant leaves only
complete NDJSON lines and complete model files.

Exit codes: 0 success, 2 protocol error, 3 task failure.  124 is reserved
for the supervisor's force-kill path.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import signal
import sys
import tempfile
import threading
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import protocol
from .pipeline import PipelineFitError, load_fitted_pipeline, refit
from .searchers import SEARCH_FAILED, SEARCHER_KINDS, grid_template_search
from .tabular import Dataset, PipelineRecord, PredictionMatrix, TaskSpec, parse_csv

EXIT_OK = 0
EXIT_PROTOCOL_ERROR = 2
EXIT_TASK_FAILURE = 3

HEARTBEAT_INTERVAL_S = 0.75

# Fault-injection searcher kinds used by the supervisor's robustness tests.
CHAOS_CRASH = "chaos-crash"
CHAOS_HANG = "chaos-hang"


class GracefulStop(Exception):
    """Raised in the main thread when SIGTERM asks for an orderly stop."""


class Wire:
    """Serialized envelope writes shared by the main and heartbeat threads."""

    def __init__(self, stream):
        self._stream = stream
        self._lock = threading.Lock()

    def send(self, envelope: protocol.WorkerEnvelope) -> None:
        line = protocol.encode(envelope)
        with self._lock:
            self._stream.write(line)
            self._stream.flush()


def _start_heartbeats(wire: Wire, run_id: str, stop: threading.Event) -> threading.Thread:
    def beat():
        while not stop.wait(HEARTBEAT_INTERVAL_S):
            try:
                wire.send(protocol.heartbeat(run_id))
            except OSError:
                return  # supervisor went away; nothing left to notify
    thread = threading.Thread(target=beat, name="heartbeat", daemon=True)
    thread.start()
    return thread


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ArtifactStore:
    """One worker's artifact directory: pipelines.ndjson, oof/, models/."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.records: dict[str, PipelineRecord] = {}

    def publish_record(self, record: PipelineRecord) -> None:
        """Insert or update one record and rewrite the NDJSON atomically."""
        self.records[record.id] = record
        lines = [
            json.dumps(r.to_json_obj(), sort_keys=True) for r in self.records.values()
        ]
        data = ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
        _write_atomic(self.root / "pipelines.ndjson", data)

    def write_oof(self, pipeline_id: str, matrix: PredictionMatrix) -> None:
        out = io.StringIO(newline="")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["row_index"] + [f"p_{c}" for c in matrix.label_vocab])
        for i, row in enumerate(matrix.probs):
            writer.writerow([str(i)] + [repr(float(v)) for v in row])
        _write_atomic(
            self.root / "oof" / f"{pipeline_id}.csv", out.getvalue().encode("utf-8")
        )

    def model_path(self, pipeline_id: str) -> Path:
        return self.root / "models" / f"{pipeline_id}.bin"


def write_prediction_csv(path: Path, matrix: PredictionMatrix) -> None:
    """row_index,predicted_label plus one probability column per class."""
    labels = matrix.argmax_labels()
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["row_index", "predicted_label"] + [f"p_{c}" for c in matrix.label_vocab]
    )
    for i in range(matrix.n_rows):
        writer.writerow(
            [str(i), matrix.label_vocab[labels[i]]]
            + [repr(float(v)) for v in matrix.probs[i]]
        )
    _write_atomic(path, out.getvalue().encode("utf-8"))


def _probability_table(path: Path, leading: int) -> tuple[tuple[str, ...], np.ndarray]:
    """Shared reader for the worker CSV formats: `leading` non-probability
    columns followed by one p_<class> column per class, row_index first."""
    text = path.read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise ValueError(f"{path}: empty prediction file")
    header = rows[0]
    if header[:1] != ["row_index"] or len(header) <= leading:
        raise ValueError(f"{path}: unexpected header {header!r}")
    vocab = tuple(name[2:] for name in header[leading:])
    if any(not name.startswith("p_") for name in header[leading:]):
        raise ValueError(f"{path}: unexpected probability columns")
    body = rows[1:]
    probs = np.full((len(body), len(vocab)), np.nan)
    for row in body:
        idx = int(row[0])
        if not 0 <= idx < len(body):
            raise ValueError(f"{path}: row_index {idx} out of range")
        probs[idx] = [float(v) for v in row[leading:]]
    if not np.all(np.isfinite(probs)):
        raise ValueError(f"{path}: duplicate or missing row_index")
    return vocab, probs


def read_prediction_csv(path: Path) -> PredictionMatrix:
    vocab, probs = _probability_table(path, leading=2)
    return PredictionMatrix(vocab, probs)


def read_oof_csv(path: Path) -> PredictionMatrix:
    vocab, probs = _probability_table(path, leading=1)
    return PredictionMatrix(vocab, probs)


def _refit_phase(report, train: Dataset, store: ArtifactStore, deadline: float) -> None:
    """Refit discovered pipelines on all rows, best score first, until the
    refit budget runs out.  Each saved model updates its record's
    artifact_ref on disk before the next refit starts."""
    order = sorted(report.pipelines, key=lambda r: (-r.validation_score, r.discovered_at))
    for record in order:
        if time.monotonic() >= deadline:
            break
        candidate = report.candidates[record.id]
        path = store.model_path(record.id)
        try:
            refit(candidate, train, path)
        except PipelineFitError:
            continue  # record stays usable for ranking, just not for predict
        rel = os.path.relpath(path, store.root)
        store.publish_record(replace(record, artifact_ref=rel))


def _search_result(wire, run_id, searcher_id, status, n_pipelines, started):
    wire.send(
        protocol.WorkerEnvelope(
            kind=protocol.KIND_SEARCH_RESULT,
            run_id=run_id,
            payload={
                "searcher_id": searcher_id,
                "status": status,
                "n_pipelines": n_pipelines,
                "elapsed_s": time.monotonic() - started,
            },
        )
    )


def run_search(
    wire: Wire,
    envelope: protocol.WorkerEnvelope,
    searcher_kind: str,
    searcher_id: str,
) -> int:
    run_id = envelope.run_id
    body = envelope.payload
    started = time.monotonic()
    stopping = threading.Event()
    hb_stop = threading.Event()

    def on_sigterm(signum, frame):
        if not stopping.is_set():
            stopping.set()
            raise GracefulStop()

    if searcher_kind == CHAOS_HANG:
        signal.signal(signal.SIGTERM, signal.SIG_IGN)
    else:
        signal.signal(signal.SIGTERM, on_sigterm)

    store: ArtifactStore | None = None
    try:
        _start_heartbeats(wire, run_id, hb_stop)
        spec = TaskSpec(
            target=str(body["target"]),
            metric=str(body["metric"]),
            time_budget_s=float(body["time_budget_s"]),
            refit_fraction=float(body["refit_fraction"]),
            seed=int(body["seed"]),
        )
        train = parse_csv(Path(body["dataset_path"]).read_bytes(), spec.target)
        if train.labels is None:
            raise ValueError("training dataset has no target labels")
        store = ArtifactStore(body["artifact_dir"])
        search_deadline = started + spec.time_budget_s * (1.0 - spec.refit_fraction)
        hard_deadline = started + spec.time_budget_s

        def on_candidate(record: PipelineRecord, oof: PredictionMatrix | None) -> None:
            if oof is not None:
                store.write_oof(record.id, oof)
            store.publish_record(record)
            wire.send(
                protocol.WorkerEnvelope(
                    kind=protocol.KIND_SEARCH_PROGRESS,
                    run_id=run_id,
                    payload={
                        "searcher_id": searcher_id,
                        "record": record.to_json_obj(),
                    },
                )
            )

        if searcher_kind == CHAOS_CRASH:
            return 1
        if searcher_kind == CHAOS_HANG:
            grid_template_search(
                train,
                spec,
                deadline=started + 3600.0,
                searcher_id=searcher_id,
                on_candidate=on_candidate,
                max_candidates=2,
            )
            while True:  # deaf to SIGTERM; only SIGKILL ends this
                time.sleep(60.0)

        search = SEARCHER_KINDS[searcher_kind]
        try:
            report = search(
                train,
                spec,
                deadline=search_deadline,
                searcher_id=searcher_id,
                on_candidate=on_candidate,
            )
        except GracefulStop:
            # Stopped mid-candidate: everything already persisted stands.
            _search_result(
                wire, run_id, searcher_id, "budget_exhausted", len(store.records), started
            )
            return EXIT_OK

        if report.status == SEARCH_FAILED:
            wire.send(
                protocol.error_envelope(
                    run_id, report.failure_reason or "search failed"
                )
            )
            return EXIT_TASK_FAILURE

        try:
            _refit_phase(report, train, store, hard_deadline)
        except GracefulStop:
            pass  # models refit so far are already published

        _search_result(
            wire, run_id, searcher_id, report.status, len(store.records), started
        )
        return EXIT_OK
    except GracefulStop:
        n = len(store.records) if store is not None else 0
        _search_result(wire, run_id, searcher_id, "budget_exhausted", n, started)
        return EXIT_OK
    except Exception as exc:
        wire.send(protocol.error_envelope(run_id, f"{type(exc).__name__}: {exc}"))
        return EXIT_TASK_FAILURE
    finally:
        hb_stop.set()


def run_predict(wire: Wire, envelope: protocol.WorkerEnvelope) -> int:
    run_id = envelope.run_id
    body = envelope.payload
    try:
        model_path = Path(body["artifact_dir"]) / "models" / f"{body['pipeline_id']}.bin"
        if not model_path.exists():
            raise FileNotFoundError(
                f"no model artifact for pipeline {body['pipeline_id']!r}"
            )
        model = load_fitted_pipeline(model_path)
        test = parse_csv(Path(body["test_dataset_path"]).read_bytes(), target=None)
        matrix = model.predict_proba(test)
        output_path = Path(body["output_path"])
        write_prediction_csv(output_path, matrix)
        wire.send(
            protocol.WorkerEnvelope(
                kind=protocol.KIND_PREDICT_RESULT,
                run_id=run_id,
                payload={
                    "pipeline_id": body["pipeline_id"],
                    "output_path": str(output_path),
                    "n_rows": matrix.n_rows,
                },
            )
        )
        return EXIT_OK
    except Exception as exc:
        wire.send(protocol.error_envelope(run_id, f"{type(exc).__name__}: {exc}"))
        return EXIT_TASK_FAILURE


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ens2-worker", add_help=True)
    parser.add_argument("mode", choices=("search", "predict"))
    parser.add_argument("--searcher", default="grid")
    parser.add_argument("--searcher-id", default=None)
    args = parser.parse_args(argv)

    wire = Wire(sys.stdout.buffer)
    line = sys.stdin.buffer.readline()
    try:
        envelope = protocol.decode(line)
    except protocol.ProtocolError as exc:
        wire.send(protocol.error_envelope("unknown", f"bad request: {exc}"))
        return EXIT_PROTOCOL_ERROR

    if args.mode == "search":
        if envelope.kind != protocol.KIND_SEARCH_REQUEST:
            wire.send(
                protocol.error_envelope(
                    envelope.run_id, f"expected SearchRequest, got {envelope.kind}"
                )
            )
            return EXIT_PROTOCOL_ERROR
        kind = args.searcher
        if kind not in SEARCHER_KINDS and kind not in (CHAOS_CRASH, CHAOS_HANG):
            wire.send(
                protocol.error_envelope(envelope.run_id, f"unknown searcher {kind!r}")
            )
            return EXIT_PROTOCOL_ERROR
        searcher_id = args.searcher_id or kind
        return run_search(wire, envelope, kind, searcher_id)

    if envelope.kind != protocol.KIND_PREDICT_REQUEST:
        wire.send(
            protocol.error_envelope(
                envelope.run_id, f"expected PredictRequest, got {envelope.kind}"
            )
        )
        return EXIT_PROTOCOL_ERROR
    return run_predict(wire, envelope)


if __name__ == "__main__":
    sys.exit(main())
