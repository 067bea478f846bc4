"""Model checkpoints: ``metadata.json`` plus a ``params.pt`` state dict per directory."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch

from .errors import CheckpointError
from .models import ModelSpec, build_model
from .training.loop import TrainedModel

SCHEMA_VERSION = 1


def config_hash(spec: ModelSpec) -> str:
    blob = json.dumps(spec.to_dict(), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(trained: TrainedModel, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "model_id": trained.spec.model_id,
        "architecture": trained.spec.architecture.value,
        "config_hash": config_hash(trained.spec),
        "freezing_map": trained.freezing_map,
        "provenance": trained.provenance,
        "spec": trained.spec.to_dict(),
    }
    torch.save(trained.model.state_dict(), directory / "params.pt")
    (directory / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return directory


def read_metadata(directory: str | Path) -> dict:
    path = Path(directory) / "metadata.json"
    if not path.is_file():
        raise CheckpointError(f"no checkpoint metadata at {path}")
    return json.loads(path.read_text())


def load_checkpoint(directory: str | Path, spec: ModelSpec) -> TrainedModel:
    """Rebuild ``spec`` and load its weights; refuse a checkpoint written for another config."""
    directory = Path(directory)
    meta = read_metadata(directory)
    expected = config_hash(spec)
    if meta.get("config_hash") != expected:
        raise CheckpointError(
            f"config hash mismatch for {directory}: checkpoint {meta.get('config_hash', '?')[:12]}, "
            f"current config {expected[:12]}"
        )
    model = build_model(spec, seed=0)
    state = torch.load(directory / "params.pt", map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return TrainedModel(spec, model, dict(meta["freezing_map"]), dict(meta["provenance"]))
