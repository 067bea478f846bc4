from __future__ import annotations

import json

import pytest
import torch
import yaml

from mosbench.checkpoint import config_hash, load_checkpoint, read_metadata, save_checkpoint
from mosbench.config import example_config, load_config
from mosbench.data import Split
from mosbench.errors import CheckpointError, ConfigError
from mosbench.models import Architecture, ModelSpec, build_model
from mosbench.training import Optimizer
from mosbench.training.loop import TrainedModel


@pytest.fixture
def manifest_path(small_corpus):
    return small_corpus.utterances[0].audio_path.parent.parent / "manifest.csv"


def _write(tmp_path, doc, name="c.yaml"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if name.endswith(".json") else yaml.safe_dump(doc))
    return path


def _base(manifest_path, **extra):
    doc = {
        "datasets": {"voicemos": {"manifest": str(manifest_path)}},
        "models": [{"id": "A", "architecture": "convmaxpool"}],
        "seeds": [0, 1],
    }
    doc.update(extra)
    return doc


def test_example_config_loads(tmp_path, manifest_path, small_corpus):
    unl = tmp_path / "unl.csv"
    unl.write_text("audio_path\n" + str(small_corpus.utterances[0].audio_path) + "\n")
    cfg = load_config(_write(tmp_path, example_config(str(manifest_path), str(unl))))
    assert len(cfg.models) == 8 and cfg.seeds == tuple(range(10))
    assert cfg.model("Fusion1").spec.base_model == "w2v_VoiceMOS"
    assert cfg.train_config(cfg.model("w2v_PSTN").spec).optimizer is Optimizer.SGD
    assert cfg.train_config(cfg.model("NISQA").spec).batch_size == 32
    assert all(u.split is Split.TEST for u in cfg.test_manifest().utterances)
    assert cfg.alpha == 0.05


def test_json_and_overrides(tmp_path, manifest_path):
    doc = _base(manifest_path, training={"max_epochs": 7})
    doc["models"][0]["train"] = {"learning_rate": 0.01}
    cfg = load_config(_write(tmp_path, doc, "c.json"), output_dir=tmp_path / "o", seeds=[4])
    tc = cfg.train_config(cfg.models[0].spec)
    assert (tc.max_epochs, tc.learning_rate) == (7, 0.01)
    assert cfg.seeds == (4,) and cfg.output_dir == tmp_path / "o"


def test_relative_paths_resolve_against_config(tmp_path, manifest_path):
    sub = tmp_path / "nested"
    sub.mkdir()
    (sub / "m.csv").write_text(manifest_path.read_text())
    cfg = load_config(_write(sub, _base("m.csv", output_dir="out")))
    assert cfg.datasets["voicemos"].manifest == sub / "m.csv"
    assert cfg.output_dir == sub / "out"


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.update(bogus=1), "unknown keys"),
        (lambda d: d["models"][0].update(architecture="rnn"), "unknown architecture"),
        (lambda d: d["models"].append(dict(d["models"][0])), "duplicate"),
        (lambda d: d["models"][0].update(train_set="nope"), "train_set"),
        (lambda d: d["models"][0].update(pretrain="vae"), "pretrain"),
        (lambda d: d["models"][0].update(pretrain="ae"), "autoencoder.dataset"),
        (lambda d: d["models"].append({"id": "F", "architecture": "fusion1", "base_model": "A"}), "base_model"),
        (lambda d: d.update(schema_version=2), "schema_version"),
        (lambda d: d.update(models=[]), "no models"),
        (lambda d: d.update(test={"dataset": "other"}), "test"),
        (lambda d: d.update(training={"learning_rat": 1}), "unknown keys"),
        (lambda d: d.update(features={"n_mel": 40}), "unknown keys"),
    ],
)
def test_validation_errors(tmp_path, manifest_path, mutate, fragment):
    doc = _base(manifest_path)
    mutate(doc)
    with pytest.raises(ConfigError, match=fragment):
        load_config(_write(tmp_path, doc))


def test_missing_files_name_path(tmp_path, manifest_path):
    with pytest.raises(ConfigError) as exc:
        load_config(tmp_path / "absent.yaml")
    assert exc.value.path.endswith("absent.yaml")
    doc = _base(tmp_path / "gone.csv")
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, doc))
    assert exc.value.path.endswith("gone.csv")
    bad = tmp_path / "bad.yaml"
    bad.write_text("models: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_subsample_applies_to_train_rows_only(tmp_path, manifest_path):
    doc = _base(manifest_path)
    doc["datasets"]["voicemos"]["subsample"] = {"target_size": 20, "bin_width": 0.5, "seed": 1}
    cfg = load_config(_write(tmp_path, doc))
    full = load_config(_write(tmp_path, _base(manifest_path), "full.yaml"))
    assert len(cfg.train_manifest(cfg.models[0].spec)) == 20
    assert cfg.test_manifest().ids == full.test_manifest().ids
    assert cfg.val_manifest().ids == full.val_manifest().ids


# ---------------------------------------------------------------- checkpoints


def _trained(spec, seed=0):
    return TrainedModel(spec, build_model(spec, seed=seed), {"cnn": True}, {"seed": seed})


def test_checkpoint_roundtrip(tmp_path):
    spec = ModelSpec("A", Architecture.CONVMAXPOOL)
    original = _trained(spec, seed=5)
    save_checkpoint(original, tmp_path / "ck")
    meta = read_metadata(tmp_path / "ck")
    assert meta["schema_version"] == 1 and meta["config_hash"] == config_hash(spec)
    loaded = load_checkpoint(tmp_path / "ck", spec)
    a, b = original.model.state_dict(), loaded.model.state_dict()
    assert a.keys() == b.keys()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert loaded.freezing_map == {"cnn": True} and loaded.provenance == {"seed": 5}
    assert not loaded.model.training


def test_checkpoint_hash_mismatch(tmp_path):
    save_checkpoint(_trained(ModelSpec("A", Architecture.CONVMAXPOOL)), tmp_path / "ck")
    with pytest.raises(CheckpointError, match="hash mismatch"):
        load_checkpoint(tmp_path / "ck", ModelSpec("A", Architecture.CONVMAXPOOL, train_set="other"))
    with pytest.raises(CheckpointError):
        read_metadata(tmp_path / "missing")


def test_config_hash_stable_and_sensitive():
    a = ModelSpec("A", Architecture.NISQA)
    assert config_hash(a) == config_hash(ModelSpec("A", Architecture.NISQA))
    assert config_hash(a) != config_hash(ModelSpec("B", Architecture.NISQA))
