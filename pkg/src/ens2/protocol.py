"""Line-oriented wire protocol between the supervisor and worker processes.

One JSON envelope per line: ``{"v":1,"kind":"...","run_id":"...","payload":{...}}``.
Encoding is canonical (fixed top-level field order, sorted payload keys,
ASCII-only) so identical envelopes produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator

PROTOCOL_VERSION = 1

KIND_SEARCH_REQUEST = "SearchRequest"
KIND_SEARCH_PROGRESS = "SearchProgress"
KIND_SEARCH_RESULT = "SearchResult"
KIND_PREDICT_REQUEST = "PredictRequest"
KIND_PREDICT_RESULT = "PredictResult"
KIND_HEARTBEAT = "Heartbeat"
KIND_ERROR = "Error"

KNOWN_KINDS = frozenset(
    {
        KIND_SEARCH_REQUEST,
        KIND_SEARCH_PROGRESS,
        KIND_SEARCH_RESULT,
        KIND_PREDICT_REQUEST,
        KIND_PREDICT_RESULT,
        KIND_HEARTBEAT,
        KIND_ERROR,
    }
)

# Payload fields that must be present for a kind to decode at all.
REQUIRED_PAYLOAD_FIELDS: dict[str, tuple[str, ...]] = {
    KIND_SEARCH_REQUEST: (
        "dataset_path",
        "target",
        "metric",
        "time_budget_s",
        "refit_fraction",
        "seed",
        "artifact_dir",
    ),
    KIND_PREDICT_REQUEST: (
        "pipeline_id",
        "artifact_dir",
        "test_dataset_path",
        "output_path",
    ),
    KIND_SEARCH_PROGRESS: ("searcher_id", "record"),
    KIND_SEARCH_RESULT: ("searcher_id", "status", "n_pipelines", "elapsed_s"),
    KIND_PREDICT_RESULT: ("pipeline_id", "output_path", "n_rows"),
    KIND_HEARTBEAT: (),
    KIND_ERROR: ("message",),
}


class ProtocolError(ValueError):
    """Malformed wire data; ``offset`` is the offending byte position."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class WorkerEnvelope:
    kind: str
    run_id: str
    payload: dict[str, Any] = field(default_factory=dict)
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.kind not in KNOWN_KINDS:
            raise ValueError(f"unknown envelope kind {self.kind!r}")
        if not self.run_id:
            raise ValueError("run_id must be non-empty")
        missing = [
            name
            for name in REQUIRED_PAYLOAD_FIELDS[self.kind]
            if name not in self.payload
        ]
        if missing:
            raise ValueError(f"{self.kind} payload missing field {missing[0]!r}")


def _canonical(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def encode(envelope: WorkerEnvelope) -> bytes:
    """Serialize one envelope to a newline-terminated UTF-8 line.

    ensure_ascii keeps every control character escaped, so the payload can
    never smuggle a raw newline into the framing.
    """
    obj = {
        "v": envelope.version,
        "kind": envelope.kind,
        "run_id": envelope.run_id,
        "payload": _canonical(envelope.payload),
    }
    text = json.dumps(obj, ensure_ascii=True, separators=(",", ":"))
    return text.encode("ascii") + b"\n"


def decode(line: bytes | str) -> WorkerEnvelope:
    if isinstance(line, str):
        raw = line.encode("utf-8", errors="surrogateescape")
    else:
        raw = line
    raw = raw.rstrip(b"\r\n")
    if not raw:
        raise ProtocolError("empty line", 0)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"invalid UTF-8: {exc.reason}", exc.start) from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ProtocolError(f"invalid JSON: {exc.msg}", offset) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("envelope must be a JSON object", 0)
    version = obj.get("v")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported version {version!r}", 0)
    kind = obj.get("kind")
    if not isinstance(kind, str) or kind not in KNOWN_KINDS:
        raise ProtocolError(f"unknown kind {kind!r}", 0)
    run_id = obj.get("run_id")
    if not isinstance(run_id, str) or not run_id:
        raise ProtocolError("missing or empty run_id", 0)
    payload = obj.get("payload")
    if not isinstance(payload, dict):
        raise ProtocolError("missing payload object", 0)
    for name in REQUIRED_PAYLOAD_FIELDS[kind]:
        if name not in payload:
            raise ProtocolError(f"{kind} payload missing field {name!r}", 0)
    return WorkerEnvelope(kind=kind, run_id=run_id, payload=payload, version=version)


def decode_stream(data: bytes) -> Iterator[WorkerEnvelope]:
    """Decode a buffer of concatenated envelope lines; skips blank lines."""
    offset = 0
    for line in data.split(b"\n"):
        if line.strip():
            try:
                yield decode(line)
            except ProtocolError as exc:
                raise ProtocolError(str(exc), offset + exc.offset) from exc
        offset += len(line) + 1


def heartbeat(run_id: str) -> WorkerEnvelope:
    return WorkerEnvelope(kind=KIND_HEARTBEAT, run_id=run_id)


def error_envelope(run_id: str, message: str) -> WorkerEnvelope:
    return WorkerEnvelope(kind=KIND_ERROR, run_id=run_id, payload={"message": message})
