"""The prediction microservice: persist, serve over HTTP, log feedback.

Trains a small model set, saves the single-file artifact, starts the HTTP
service on an ephemeral port, sends a predict request and a feedback
record, and reads back the agreement counters.
"""

import json
import tempfile
import threading
import urllib.request
from pathlib import Path

from respred import GeneratorSpec, TrainConfig, generate, load_artifact, save_artifact
from respred.pipeline import train_all
from respred.service import PredictionService, make_server

synth = generate(GeneratorSpec(seed=29, n_tasks=1500))
cfg = TrainConfig(learning_rate=1e-3, max_epochs=20, batch_size=64, seed=4)
models, _ = train_all(synth.dataset, synth.targets, cfg, split_seed=2)

workdir = Path(tempfile.mkdtemp())
artifact_path = workdir / "artifact.rpa"
save_artifact(models, artifact_path, train_config=cfg)
artifact = load_artifact(artifact_path)
print(f"artifact: {artifact_path} ({artifact_path.stat().st_size} bytes, "
      f"created {artifact.created_at})")

service = PredictionService(artifact, feedback_log=workdir / "feedback.jsonl")
server = make_server(service, "127.0.0.1:0")
threading.Thread(target=server.serve_forever, daemon=True).start()
host, port = server.server_address[:2]
base = f"http://{host}:{port}"
print(f"serving on {base}")


def post(path, doc):
    req = urllib.request.Request(
        base + path, data=json.dumps(doc).encode(),
        headers={"Content-Type": "application/json"},
    )
    with urllib.request.urlopen(req, timeout=10) as resp:
        return json.loads(resp.read().decode())


record = synth.dataset.records[0]
request = {
    "TASK_ID": record.task_id,
    "PROCESSINGTYPE": record.processing_type,
    "FRAMEWORK": record.framework,
    "NCORE": record.core_count,
    "NINPUT": record.n_input,
    "NFILES": record.n_files,
    "NEVENTS": record.n_events,
}
response = post("/predict", request)
print(f"\nprediction for {record.task_id} "
      f"({response['inference_seconds'] * 1000:.1f} ms):")
for target, pred in response["predictions"].items():
    print(f"  {target:<12} class {pred['class']}  allocation {pred['allocation']:.3g}")

# post-execution feedback closes the loop: actual targets are re-binned
# with the artifact's own edges and compared against the prediction
ack = post("/feedback", {
    "task_id": record.task_id,
    "predicted_classes": {t: p["class"] for t, p in response["predictions"].items()},
    "actual_targets": {t: float(synth.targets[t][0]) for t in synth.targets},
})
print(f"\nfeedback ack: {ack['status']}, agreement {ack['agreement']}")

with urllib.request.urlopen(base + "/metrics-summary", timeout=10) as resp:
    print("metrics summary:", json.dumps(json.loads(resp.read().decode()), indent=2))

server.shutdown()
server.server_close()
