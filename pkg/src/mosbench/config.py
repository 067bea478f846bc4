"""Run configuration document (YAML or JSON) and its validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .data import Manifest, Split, UnlabeledManifest, load_manifest, load_unlabeled_manifest, subsample_matched
from .errors import ConfigError
from .features import MelConfig
from .models import Architecture, BackboneConfig, ModelSpec, NisqaHeadConfig
from .models.layers import FramewiseCnnConfig
from .training import AePretrainConfig, TrainConfig

SCHEMA_VERSION = 1
DEFAULT_SEEDS = tuple(range(10))
SUBSETS = {"all": None, "tts": ("BC", "ESPNET"), "vc": ("VCC",)}


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    manifest: Path | None = None
    unlabeled: Path | None = None
    note: str = ""
    subsample: dict[str, Any] | None = None


@dataclass(frozen=True)
class ModelEntry:
    spec: ModelSpec
    train: dict[str, Any] = field(default_factory=dict)


@dataclass
class RunConfig:
    path: Path
    output_dir: Path
    seeds: tuple[int, ...]
    datasets: dict[str, DatasetEntry]
    models: list[ModelEntry]
    validation: tuple[str, Split] = ("voicemos", Split.VAL)
    test: tuple[str, Split] = ("voicemos", Split.TEST)
    mel: MelConfig = field(default_factory=MelConfig)
    cache_dir: Path | None = None
    training: dict[str, Any] = field(default_factory=dict)
    autoencoder: dict[str, Any] = field(default_factory=dict)
    evaluation: dict[str, Any] = field(default_factory=dict)
    _manifests: dict[str, Manifest] = field(default_factory=dict, repr=False)

    # ------------------------------------------------------------ lookups

    def model(self, model_id: str) -> ModelEntry:
        for m in self.models:
            if m.spec.model_id == model_id:
                return m
        raise ConfigError(f"unknown model id {model_id!r}; known: {[m.spec.model_id for m in self.models]}")

    def manifest(self, name: str) -> Manifest:
        if name not in self._manifests:
            entry = self.datasets.get(name)
            if entry is None or entry.manifest is None:
                raise ConfigError(f"dataset {name!r} has no labeled manifest")
            m = load_manifest(entry.manifest, name=name, label_scale_note=entry.note)
            if entry.subsample:
                sub = dict(entry.subsample)
                train_part = m.split(Split.TRAIN)
                picked = subsample_matched(
                    train_part,
                    int(sub["target_size"]),
                    float(sub.get("bin_width", 0.25)),
                    int(sub.get("seed", 0)),
                )
                keep = set(picked.ids)
                m = m.subset([u for u in m.utterances if u.split is not Split.TRAIN or u.utterance_id in keep], name)
            self._manifests[name] = m
        return self._manifests[name]

    def unlabeled(self, name: str) -> UnlabeledManifest:
        entry = self.datasets.get(name)
        if entry is None or entry.unlabeled is None:
            raise ConfigError(f"dataset {name!r} has no unlabeled manifest")
        return load_unlabeled_manifest(entry.unlabeled, name=name)

    def train_manifest(self, spec: ModelSpec) -> Manifest:
        return self.manifest(spec.train_set).split(Split.TRAIN)

    def val_manifest(self) -> Manifest:
        return self.manifest(self.validation[0]).split(self.validation[1])

    def test_manifest(self) -> Manifest:
        return self.manifest(self.test[0]).split(self.test[1])

    def train_config(self, spec: ModelSpec) -> TrainConfig:
        overrides = {**self.training, **self.model(spec.model_id).train}
        return TrainConfig.for_architecture(spec.architecture, **overrides)

    def ae_config(self) -> AePretrainConfig:
        opts = {k: v for k, v in self.autoencoder.items() if k != "dataset"}
        return AePretrainConfig(**opts, cnn=self.models[0].spec.cnn if self.models else FramewiseCnnConfig())

    @property
    def alpha(self) -> float:
        return float(self.evaluation.get("alpha", 0.05))

    @property
    def partitions(self) -> dict[str, list[str]]:
        return self.evaluation.get("partitions") or {"tts": ["BC", "ESPNET"], "vc": ["VCC"]}


def _read_document(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}", path=path) from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _only(d: dict, allowed: set[str], where: str) -> dict:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    return d


def _dataclass_keys(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _resolve(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else (base / q)


def _split_ref(value, default: tuple[str, Split], where: str) -> tuple[str, Split]:
    if value is None:
        return default
    if isinstance(value, str):
        return value, default[1]
    try:
        return value["dataset"], Split(str(value.get("split", default[1].value)).upper())
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{where}: expected {{dataset, split}}") from exc


def _model_spec(entry: dict, cnn: FramewiseCnnConfig, nisqa: NisqaHeadConfig, backbone: BackboneConfig) -> ModelEntry:
    _only(entry, {"id", "architecture", "train_set", "pretrain", "base_model", "train", "backbone"}, "models[]")
    if "id" not in entry or "architecture" not in entry:
        raise ConfigError("every model needs 'id' and 'architecture'")
    try:
        arch = Architecture(str(entry["architecture"]).lower())
    except ValueError:
        raise ConfigError(
            f"model {entry['id']}: unknown architecture {entry['architecture']!r} "
            f"(choose from {[a.value for a in Architecture]})"
        ) from None
    bb = backbone
    if entry.get("backbone"):
        bb = BackboneConfig(**{**backbone.__dict__, **entry["backbone"]})
    if entry.get("pretrain") not in (None, "ae"):
        raise ConfigError(f"model {entry['id']}: pretrain must be 'ae' or omitted")
    spec = ModelSpec(
        model_id=str(entry["id"]),
        architecture=arch,
        train_set=str(entry.get("train_set", "voicemos")),
        cnn=cnn,
        nisqa=nisqa,
        backbone=bb,
        pretrain=entry.get("pretrain"),
        base_model=entry.get("base_model"),
    )
    train = dict(entry.get("train") or {})
    _only(train, {f.name for f in fields(TrainConfig)} - {"seed"}, f"models[{spec.model_id}].train")
    return ModelEntry(spec, train)


def load_config(path: str | Path, output_dir: str | Path | None = None, seeds=None) -> RunConfig:
    """Load and validate a run configuration; every referenced file must exist."""
    try:
        return _load_config(Path(path), output_dir, seeds)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}", path=path) from exc


def _load_config(path: Path, output_dir, seeds) -> RunConfig:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", path=path)
    doc = _read_document(path)
    _only(
        doc,
        {
            "schema_version", "output_dir", "seeds", "features", "datasets", "validation", "test",
            "training", "autoencoder", "backbone", "cnn", "nisqa_head", "models", "evaluation",
        },
        str(path),
    )
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    base = path.parent

    datasets = {}
    for name, d in (doc.get("datasets") or {}).items():
        d = _only(dict(d or {}), {"manifest", "unlabeled", "note", "subsample"}, f"datasets.{name}")
        entry = DatasetEntry(
            name=name,
            manifest=_resolve(base, d.get("manifest")),
            unlabeled=_resolve(base, d.get("unlabeled")),
            note=str(d.get("note", "")),
            subsample=d.get("subsample"),
        )
        for p in (entry.manifest, entry.unlabeled):
            if p is not None and not p.is_file():
                raise ConfigError(f"datasets.{name}: file not found: {p}", path=p)
        datasets[name] = entry

    features = dict(doc.get("features") or {})
    cache_dir = _resolve(base, features.pop("cache_dir", None))
    mel = MelConfig(**_only(features, _dataclass_keys(MelConfig), "features"))
    cnn_doc = dict(doc.get("cnn") or {})
    cnn = FramewiseCnnConfig(**_only(cnn_doc, _dataclass_keys(FramewiseCnnConfig), "cnn"))
    nisqa = NisqaHeadConfig(**_only(dict(doc.get("nisqa_head") or {}), _dataclass_keys(NisqaHeadConfig), "nisqa_head"))
    backbone = BackboneConfig(**_only(dict(doc.get("backbone") or {}), _dataclass_keys(BackboneConfig), "backbone"))

    models = [_model_spec(dict(m), cnn, nisqa, backbone) for m in doc.get("models") or []]
    if not models:
        raise ConfigError("config defines no models")
    ids = [m.spec.model_id for m in models]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate model ids")
    for m in models:
        if m.spec.train_set not in datasets:
            raise ConfigError(f"model {m.spec.model_id}: unknown train_set {m.spec.train_set!r}")
        if m.spec.architecture in (Architecture.FUSION1, Architecture.FUSION2):
            base_id = m.spec.base_model
            if base_id not in ids or next(x for x in models if x.spec.model_id == base_id).spec.architecture is not Architecture.W2VMOS:
                raise ConfigError(f"model {m.spec.model_id}: base_model must name a w2vmos model")

    training = dict(doc.get("training") or {})
    _only(training, {f.name for f in fields(TrainConfig)} - {"seed"}, "training")
    autoencoder = dict(doc.get("autoencoder") or {})
    _only(autoencoder, _dataclass_keys(AePretrainConfig) - {"cnn"} | {"dataset"}, "autoencoder")

    raw_seeds = seeds if seeds is not None else doc.get("seeds", DEFAULT_SEEDS)
    cfg = RunConfig(
        path=path,
        output_dir=Path(output_dir) if output_dir is not None else (_resolve(base, doc.get("output_dir")) or base / "out"),
        seeds=tuple(int(s) for s in raw_seeds),
        datasets=datasets,
        models=models,
        validation=_split_ref(doc.get("validation"), ("voicemos", Split.VAL), "validation"),
        test=_split_ref(doc.get("test"), ("voicemos", Split.TEST), "test"),
        mel=mel,
        cache_dir=cache_dir,
        training=training,
        autoencoder=autoencoder,
        evaluation=dict(doc.get("evaluation") or {}),
    )
    for ref, where in ((cfg.validation, "validation"), (cfg.test, "test")):
        if ref[0] not in datasets or datasets[ref[0]].manifest is None:
            raise ConfigError(f"{where}: dataset {ref[0]!r} has no labeled manifest")
    if any(m.spec.pretrain == "ae" for m in models):
        ae_ds = autoencoder.get("dataset")
        if ae_ds is None or ae_ds not in datasets or datasets[ae_ds].unlabeled is None:
            raise ConfigError("autoencoder.dataset must name a dataset with an unlabeled manifest")
    return cfg


def example_config(manifest: str, unlabeled: str | None = None, seeds=DEFAULT_SEEDS) -> dict:
    """The eight-model table as a config document over a single labeled corpus."""
    models = [
        {"id": "ConvMaxPool", "architecture": "convmaxpool", "train_set": "voicemos"},
        {"id": "ConvMaxPool*", "architecture": "convmaxpool", "train_set": "voicemos", "pretrain": "ae"},
        {"id": "NISQA", "architecture": "nisqa", "train_set": "voicemos"},
        {"id": "w2v_VoiceMOS", "architecture": "w2vmos", "train_set": "voicemos"},
        {"id": "w2v_NISQA", "architecture": "w2vmos", "train_set": "nisqa"},
        {"id": "w2v_PSTN", "architecture": "w2vmos", "train_set": "pstn"},
        {"id": "Fusion1", "architecture": "fusion1", "train_set": "voicemos", "pretrain": "ae", "base_model": "w2v_VoiceMOS"},
        {"id": "Fusion2", "architecture": "fusion2", "train_set": "voicemos", "pretrain": "ae", "base_model": "w2v_VoiceMOS"},
    ]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "output_dir": "out",
        "seeds": list(seeds),
        "datasets": {
            "voicemos": {"manifest": manifest},
            "nisqa": {"manifest": manifest},
            "pstn": {"manifest": manifest},
        },
        "validation": {"dataset": "voicemos", "split": "VAL"},
        "test": {"dataset": "voicemos", "split": "TEST"},
        "training": {"patience_epochs": 20},
        "backbone": {"provider": "toy"},
        "models": models,
        "evaluation": {"alpha": 0.05},
    }
    if unlabeled:
        doc["datasets"]["librispeech100"] = {"unlabeled": unlabeled}
        doc["autoencoder"] = {"dataset": "librispeech100", "epochs": 10}
    return doc
