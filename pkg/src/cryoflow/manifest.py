"""Run manifests: canonical JSON records of inputs, outputs and metrics.

Manifests contain no timestamps or absolute paths, so re-running a command
with the same config and seed reproduces the manifest byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


class RunManifest:
    def __init__(self, command: str, experiment: str, seed: int, config_snapshot: dict):
        self.doc = {
            "kind": "run_manifest",
            "format_version": 1,
            "command": command,
            "experiment": experiment,
            "seed": int(seed),
            "config": config_snapshot,
            "inputs": {},
            "outputs": {},
            "metrics": {},
        }

    def add_input(self, name: str, path) -> None:
        self.doc["inputs"][name] = sha256_file(path)

    def add_output(self, name: str, path) -> None:
        self.doc["outputs"][name] = sha256_file(path)

    def set_metric(self, name: str, value) -> None:
        self.doc["metrics"][name] = value

    def set(self, key: str, value) -> None:
        self.doc[key] = value

    def write(self, out_dir, command: str | None = None) -> Path:
        name = f"{command or self.doc['command']}_manifest.json"
        path = Path(out_dir) / name
        path.write_text(canonical_json(self.doc) + "\n")
        return path
