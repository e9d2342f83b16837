"""Drive an experiment end to end through the command-line entry point.

Same thing as `python3 -m prototok reconstruct --config ...`, run in-process:
write a config, run it, inspect the artifacts, replay the stored snapshot
and confirm the metrics come back byte-identical.
"""
import json
import tempfile
from pathlib import Path

from prototok.cli import load_run_record, main

workdir = Path(tempfile.mkdtemp(prefix="prototok_demo_"))
corpus = workdir / "corpus.jsonl"
with open(corpus, "w", encoding="utf-8") as fh:
    for i, text in enumerate(("the dog runs", "a cat sleeps", "birds sing now")):
        fh.write(json.dumps({"id": f"r{i}", "text": text}) + "\n")

config = {
    "schema_version": 1,
    "seed": 3,
    "output_dir": str(workdir / "runs"),
    "model": {"hidden_size": 32, "num_layers": 1, "num_heads": 4, "mlp_hidden": 64,
              "vocab_size": 64, "max_positions": 12, "seed": 0,
              "attn_gain": 3.0, "final_gain": 8.0},
    "stopping": {"accuracy_threshold": 0.95, "max_iterations": 400},
    "corpus": {"path": str(corpus)},
}
config_path = workdir / "reconstruct.json"
config_path.write_text(json.dumps(config, indent=2))

print("$ prototok reconstruct --config", config_path.name)
main(["reconstruct", "--config", str(config_path)])

run_dir = next((workdir / "runs").iterdir())
record = load_run_record(run_dir)
print("\nartifacts in", run_dir)
for name in sorted(p.name for p in run_dir.iterdir()):
    print("  ", name)
print("summary:", record.summary)

# the snapshot in run.json is enough to reproduce every step metric
replay_config = workdir / "replay.json"
replay_config.write_text(json.dumps(record.config_snapshot))
print("\n$ prototok reconstruct --config replay.json --out runs2")
main(["reconstruct", "--config", str(replay_config), "--out", str(workdir / "runs2")])

replay_dir = next((workdir / "runs2").iterdir())
same = (run_dir / "steps.jsonl").read_bytes() == (replay_dir / "steps.jsonl").read_bytes()
print("replayed steps.jsonl byte-identical:", same)
