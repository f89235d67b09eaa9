"""Model persistence and the prediction microservice.

The artifact is a single self-describing file: magic, version, a canonical
JSON header (specs, shapes, block offsets) and raw little-endian float64
weight blocks, so a save/load round-trip is bit-identical regardless of
platform defaults. The service exposes POST /predict, POST /feedback,
GET /health and GET /metrics-summary over plain HTTP/JSON; feedback is
appended to a JSONL log and folded into per-target agreement counters.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .discretize import BinSpec, assign_class, class_to_allocation
from .encode import CategoricalSpec, EncoderSpec, NumericSpec
from .ingest import TaskRecord
from .nnet import Network, TargetModel, TrainConfig, predict

MAGIC = b"RPAF"
FORMAT_VERSION = 1
SERVED_TARGETS = ("RAMCOUNT", "CPUTIME", "IOINTENSITY", "WALLTIME")
REQUEST_FEATURES = ("PROCESSINGTYPE", "FRAMEWORK", "NCORE", "NINPUT", "NFILES", "NEVENTS")
BIND_ENV_VAR = "RESPRED_BIND"
DEFAULT_BIND = "127.0.0.1:8421"


class CorruptArtifactError(ValueError):
    """The artifact file is truncated or malformed."""


class ArtifactVersionError(ValueError):
    """The artifact was written by an incompatible format version."""


class NotServableError(ValueError):
    """The artifact does not carry all four targets."""


class ValidationError(ValueError):
    """A request document failed validation; ``field`` names the offender."""

    def __init__(self, message: str, field_name: Optional[str] = None) -> None:
        super().__init__(message)
        self.field = field_name


# --- spec <-> json ----------------------------------------------------------

def _encoder_to_dict(spec: EncoderSpec) -> dict:
    return {
        "categorical": [
            {"name": c.name, "vocabulary": c.vocabulary, "embed_dim": c.embed_dim}
            for c in spec.categorical
        ],
        "numeric": [
            {"name": n.name, "transform": n.transform, "mean": n.mean, "stddev": n.stddev}
            for n in spec.numeric
        ],
        "dropped": list(spec.dropped),
    }


def _encoder_from_dict(doc: dict) -> EncoderSpec:
    return EncoderSpec(
        categorical=tuple(
            CategoricalSpec(name=c["name"], vocabulary=dict(c["vocabulary"]), embed_dim=int(c["embed_dim"]))
            for c in doc["categorical"]
        ),
        numeric=tuple(
            NumericSpec(name=n["name"], transform=n["transform"], mean=float(n["mean"]), stddev=float(n["stddev"]))
            for n in doc["numeric"]
        ),
        dropped=tuple(doc.get("dropped", ())),
    )


def _bins_to_dict(spec: BinSpec) -> dict:
    return {
        "target_name": spec.target_name,
        "edges": list(spec.edges),
        "n_classes": spec.n_classes,
        "fit_method": spec.fit_method,
        "allocation_values": list(spec.allocation_values),
    }


def _bins_from_dict(doc: dict) -> BinSpec:
    return BinSpec(
        target_name=doc["target_name"],
        edges=tuple(float(e) for e in doc["edges"]),
        n_classes=int(doc["n_classes"]),
        fit_method=doc["fit_method"],
        allocation_values=tuple(float(v) for v in doc["allocation_values"]),
    )


# --- artifact file ----------------------------------------------------------

@dataclass
class ModelArtifact:
    models: dict[str, TargetModel]
    created_at: str
    config_fingerprint: str
    version: int = FORMAT_VERSION


def config_fingerprint(cfg: TrainConfig) -> str:
    return hashlib.sha256(repr(cfg).encode()).hexdigest()[:16]


def _artifact_bytes(artifact: ModelArtifact) -> bytes:
    header: dict = {
        "created_at": artifact.created_at,
        "config_fingerprint": artifact.config_fingerprint,
        "targets": {},
    }
    blocks: list[bytes] = []
    offset = 0
    for target in sorted(artifact.models):
        model = artifact.models[target]
        net = model.net
        entry: dict = {
            "n_classes": net.n_classes,
            "hidden": list(net.hidden),
            "encoder": _encoder_to_dict(model.encoder),
            "bins": _bins_to_dict(model.bins),
            "train_summary": model.train_summary,
            "params": [],
            "running": [],
        }
        for section, tensors in (("params", net.params), ("running", net.running)):
            for name in sorted(tensors):
                arr = np.ascontiguousarray(tensors[name], dtype="<f8")
                entry[section].append({"name": name, "shape": list(arr.shape), "offset": offset})
                blocks.append(arr.tobytes())
                offset += arr.size
        header["targets"][target] = entry

    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<Q", len(header_bytes))
    out += header_bytes
    for b in blocks:
        out += b
    return bytes(out)


def save_artifact(
    models: Mapping[str, TargetModel],
    path: str | Path,
    train_config: Optional[TrainConfig] = None,
    created_at: Optional[str] = None,
) -> ModelArtifact:
    """Write a servable artifact; all four targets are required."""
    missing = set(SERVED_TARGETS) - set(models)
    if missing:
        raise NotServableError(f"artifact missing targets: {sorted(missing)}")
    artifact = ModelArtifact(
        models=dict(models),
        created_at=created_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        config_fingerprint=config_fingerprint(train_config) if train_config else "",
    )
    Path(path).write_bytes(_artifact_bytes(artifact))
    return artifact


def write_artifact_unchecked(artifact: ModelArtifact, path: str | Path) -> None:
    """Serialize without the servability check (used to round-trip loaded artifacts)."""
    Path(path).write_bytes(_artifact_bytes(artifact))


def load_artifact(path: str | Path) -> ModelArtifact:
    """Read and validate an artifact; weights round-trip bit-exactly."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CorruptArtifactError(f"{path}: not a model artifact")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != FORMAT_VERSION:
        raise ArtifactVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    header_len = struct.unpack("<Q", raw[8:16])[0]
    if 16 + header_len > len(raw):
        raise CorruptArtifactError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptArtifactError(f"{path}: unreadable header ({exc})") from None

    body = raw[16 + header_len:]
    n_floats = len(body) // 8

    models: dict[str, TargetModel] = {}
    for target, entry in header["targets"].items():
        encoder = _encoder_from_dict(entry["encoder"])
        bins = _bins_from_dict(entry["bins"])
        net = Network(encoder, n_classes=int(entry["n_classes"]), hidden=tuple(entry["hidden"]))
        for section, store in (("params", net.params), ("running", net.running)):
            for item in entry[section]:
                shape = tuple(item["shape"])
                size = int(np.prod(shape)) if shape else 1
                off = int(item["offset"])
                if off + size > n_floats:
                    raise CorruptArtifactError(f"{path}: truncated weight block {item['name']}")
                arr = np.frombuffer(body, dtype="<f8", count=size, offset=off * 8)
                store[item["name"]] = arr.reshape(shape).copy()
        models[target] = TargetModel(
            target=target,
            net=net,
            encoder=encoder,
            bins=bins,
            train_summary=entry.get("train_summary", {}),
        )

    missing = set(SERVED_TARGETS) - set(models)
    if missing:
        raise NotServableError(f"{path}: artifact missing targets {sorted(missing)}")
    return ModelArtifact(
        models=models,
        created_at=header["created_at"],
        config_fingerprint=header.get("config_fingerprint", ""),
        version=version,
    )


# --- prediction and feedback ------------------------------------------------

def _sig9(x: float) -> float:
    """Probabilities are emitted with 9 significant digits."""
    return float(f"{x:.9g}")


def record_from_request(doc: Mapping) -> TaskRecord:
    for name in REQUEST_FEATURES:
        if name not in doc or doc[name] in ("", None):
            raise ValidationError(f"missing feature {name}", field_name=name)
    try:
        return TaskRecord(
            task_id=str(doc.get("TASK_ID", "")),
            processing_type=str(doc["PROCESSINGTYPE"]),
            framework=str(doc["FRAMEWORK"]),
            core_count=int(doc["NCORE"]),
            n_input=int(doc["NINPUT"]),
            n_files=int(doc["NFILES"]),
            n_events=int(doc["NEVENTS"]),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid feature value: {exc}", field_name=None) from None


def predict_request(artifact: ModelArtifact, doc: Mapping) -> dict:
    """One prediction document: class, probabilities and allocation per target."""
    record = record_from_request(doc)
    started = time.perf_counter()
    classes, probs = predict(artifact.models, [record])
    elapsed = time.perf_counter() - started

    per_class = classes[0].as_dict()
    response: dict = {"task_id": record.task_id, "predictions": {}}
    for target in SERVED_TARGETS:
        k = int(per_class[target])
        response["predictions"][target] = {
            "class": k,
            "probabilities": [_sig9(p) for p in probs[target][0]],
            "allocation": class_to_allocation(k, artifact.models[target].bins),
        }
    response["inference_seconds"] = elapsed
    return response


@dataclass
class FeedbackCounters:
    agree: dict[str, int] = field(default_factory=lambda: {t: 0 for t in SERVED_TARGETS})
    disagree: dict[str, int] = field(default_factory=lambda: {t: 0 for t in SERVED_TARGETS})
    n_records: int = 0
    n_unknown_task: int = 0

    def as_dict(self) -> dict:
        rates = {}
        for t in SERVED_TARGETS:
            total = self.agree[t] + self.disagree[t]
            rates[t] = self.agree[t] / total if total else None
        return {
            "n_records": self.n_records,
            "n_unknown_task": self.n_unknown_task,
            "agree": dict(self.agree),
            "disagree": dict(self.disagree),
            "agreement_rate": rates,
        }


class PredictionService:
    """Holds the servable artifact, the feedback log and its counters.

    Inference over the loaded artifact is read-only, so concurrent predict
    calls are safe; feedback appends are serialized by a lock. The artifact
    can be hot-swapped between requests.
    """

    def __init__(self, artifact: Optional[ModelArtifact], feedback_log: Optional[str | Path] = None) -> None:
        self.artifact = artifact
        self.feedback_log = Path(feedback_log) if feedback_log else None
        self.counters = FeedbackCounters()
        self._lock = threading.Lock()
        self._predicted_ids: set[str] = set()
        if self.feedback_log and self.feedback_log.exists():
            self._replay_log()

    def _replay_log(self) -> None:
        for line in self.feedback_log.read_text().splitlines():
            if line.strip():
                self._apply_feedback(json.loads(line), append=False)

    def swap_artifact(self, artifact: ModelArtifact) -> None:
        with self._lock:
            self.artifact = artifact

    def predict(self, doc: Mapping) -> dict:
        artifact = self.artifact
        if artifact is None:
            raise NotServableError("no artifact loaded")
        response = predict_request(artifact, doc)
        if response["task_id"]:
            with self._lock:
                self._predicted_ids.add(response["task_id"])
        return response

    def feedback(self, doc: Mapping) -> dict:
        if self.artifact is None:
            raise NotServableError("no artifact loaded")
        required = ("task_id", "predicted_classes", "actual_targets")
        for name in required:
            if name not in doc:
                raise ValidationError(f"missing field {name}", field_name=name)
        with self._lock:
            ack = self._apply_feedback(dict(doc), append=True)
        return ack

    def _apply_feedback(self, doc: dict, append: bool) -> dict:
        artifact = self.artifact
        actual_classes: dict[str, int] = {}
        agreement: dict[str, bool] = {}
        for target in SERVED_TARGETS:
            try:
                value = float(doc["actual_targets"][target])
                predicted = int(doc["predicted_classes"][target])
            except (KeyError, TypeError, ValueError):
                raise ValidationError(
                    f"malformed feedback for target {target}", field_name=target
                ) from None
            actual = assign_class(value, artifact.models[target].bins)
            actual_classes[target] = actual
            agreement[target] = actual == predicted
            if agreement[target]:
                self.counters.agree[target] += 1
            else:
                self.counters.disagree[target] += 1

        self.counters.n_records += 1
        known = doc["task_id"] in self._predicted_ids
        if not known:
            self.counters.n_unknown_task += 1

        entry = {
            "task_id": doc["task_id"],
            "predicted_classes": {t: int(doc["predicted_classes"][t]) for t in SERVED_TARGETS},
            "actual_targets": {t: float(doc["actual_targets"][t]) for t in SERVED_TARGETS},
            "actual_classes": actual_classes,
            "timestamp": doc.get("timestamp") or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        if append and self.feedback_log is not None:
            with self.feedback_log.open("a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

        return {
            "status": "recorded",
            "known_task": known,
            "actual_classes": actual_classes,
            "agreement": agreement,
        }

    def metrics_summary(self) -> dict:
        return self.counters.as_dict()


# --- http layer ---------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    service: PredictionService   # set by make_server

    def _send(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ValidationError("request body is not valid JSON") from None
        if not isinstance(doc, dict):
            raise ValidationError("request body must be a JSON object")
        return doc

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        if self.path == "/health":
            ok = self.service.artifact is not None
            self._send(200 if ok else 503, {"status": "ok" if ok else "no artifact"})
        elif self.path == "/metrics-summary":
            self._send(200, self.service.metrics_summary())
        else:
            self._send(404, {"error": f"unknown path {self.path}"})

    def do_POST(self) -> None:  # noqa: N802
        try:
            doc = self._read_json()
            if self.path == "/predict":
                self._send(200, self.service.predict(doc))
            elif self.path == "/feedback":
                self._send(200, self.service.feedback(doc))
            else:
                self._send(404, {"error": f"unknown path {self.path}"})
        except ValidationError as exc:
            self._send(400, {"error": str(exc), "field": exc.field})
        except NotServableError as exc:
            self._send(503, {"error": str(exc)})
        except Exception as exc:  # pragma: no cover - defensive
            self._send(500, {"error": f"internal error: {exc}"})

    def log_message(self, fmt: str, *args) -> None:
        pass  # quiet by default; the CLI reports the bind address


def parse_bind(bind: Optional[str] = None) -> tuple[str, int]:
    value = bind or os.environ.get(BIND_ENV_VAR, DEFAULT_BIND)
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ValidationError(f"bind address must be host:port, got {value!r}")
    return host, int(port)


def make_server(service: PredictionService, bind: Optional[str] = None) -> ThreadingHTTPServer:
    """HTTP server bound per the argument or the RESPRED_BIND env var."""
    host, port = parse_bind(bind)
    handler = type("Handler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(service: PredictionService, bind: Optional[str] = None) -> None:
    server = make_server(service, bind)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}")
    try:
        server.serve_forever()
    finally:
        server.server_close()
