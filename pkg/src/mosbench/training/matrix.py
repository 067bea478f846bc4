"""Model x seed experiment matrix with per-run failure isolation."""

from __future__ import annotations

import copy
import logging
import traceback
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

from ..data import Manifest
from ..evaluation import PredictionSet, join_predictions
from ..features import MelConfig, PatchCache
from ..models import Architecture, ModelSpec, build_model
from .autoencoder import PretrainedEncoder, load_encoder
from .dataset import PreparedSet, prepare
from .loop import RunRecord, TrainConfig, TrainedModel, predict, train

log = logging.getLogger(__name__)

FUSIONS = {Architecture.FUSION1, Architecture.FUSION2}


@dataclass
class RunFailure:
    model_id: str
    seed: int
    error: str
    traceback: str = ""


@dataclass
class MatrixResult:
    records: list[RunRecord] = field(default_factory=list)
    predictions: list[PredictionSet] = field(default_factory=list)
    failures: list[RunFailure] = field(default_factory=list)
    models: dict[tuple[str, int], TrainedModel] = field(default_factory=dict)


def order_specs(specs: Sequence[ModelSpec]) -> list[ModelSpec]:
    """Place every fusion model after the w2vMOS model it wraps."""
    plain = [s for s in specs if s.architecture not in FUSIONS]
    fused = [s for s in specs if s.architecture in FUSIONS]
    return plain + fused


class _PreparedCache:
    def __init__(self, mel_cfg: MelConfig, cache: PatchCache | None):
        self.mel_cfg = mel_cfg
        self.cache = cache
        self._store: dict[tuple[str, bool, bool], PreparedSet] = {}

    def get(self, manifest: Manifest, patches: bool, audio: bool) -> PreparedSet:
        key = (manifest.name, patches, audio)
        if key not in self._store:
            self._store[key] = prepare(manifest, self.mel_cfg, patches, audio, self.cache)
        return self._store[key]


def build_for_run(
    spec: ModelSpec,
    seed: int,
    trained: Mapping[tuple[str, int], TrainedModel],
    encoder: PretrainedEncoder | None,
):
    w2v = None
    if spec.architecture in FUSIONS:
        if not spec.base_model:
            raise ValueError(f"fusion model {spec.model_id} needs base_model")
        base = trained.get((spec.base_model, seed))
        if base is None:
            raise RuntimeError(f"base model {spec.base_model} seed {seed} unavailable")
        w2v = copy.deepcopy(base.model)
    model = build_model(spec, seed, w2v=w2v)
    if spec.pretrain == "ae":
        if encoder is None:
            raise RuntimeError(f"{spec.model_id} requires autoencoder-pretrained encoder weights")
        load_encoder(model, encoder)
    return model


def run_matrix(
    specs: Sequence[ModelSpec],
    seeds: Sequence[int],
    train_sets: Mapping[str, Manifest],
    val_manifest: Manifest,
    test_manifest: Manifest,
    train_config: Callable[[ModelSpec], TrainConfig] = lambda s: TrainConfig.for_architecture(s.architecture),
    *,
    mel_cfg: MelConfig = MelConfig(),
    encoder: PretrainedEncoder | None = None,
    cache: PatchCache | None = None,
    on_run: Callable[[TrainedModel, RunRecord, PredictionSet], None] | None = None,
    keep_models: bool = True,
    base_models: Mapping[tuple[str, int], TrainedModel] | None = None,
) -> MatrixResult:
    """Train every spec once per seed and predict the test split.

    A failing run is recorded in ``failures`` and the matrix continues.
    ``base_models`` supplies already-trained w2vMOS instances that fusion
    specs may wrap when their base is not part of this matrix.
    """
    result = MatrixResult()
    available: dict[tuple[str, int], TrainedModel] = dict(base_models or {})
    data = _PreparedCache(mel_cfg, cache)
    for spec in order_specs(specs):
        for seed in seeds:
            try:
                if spec.train_set not in train_sets:
                    raise KeyError(f"unknown train set {spec.train_set!r}")
                model = build_for_run(spec, seed, available, encoder)
                cfg = replace(train_config(spec), seed=seed)
                needs = (model.needs_patches, model.needs_audio)
                trained, record = train(
                    spec,
                    data.get(train_sets[spec.train_set], *needs),
                    data.get(val_manifest, *needs),
                    cfg,
                    model=model,
                )
                test = data.get(test_manifest, *needs)
                preds = predict(trained.model, test)
                pset = join_predictions(test_manifest, spec.model_id, seed, dict(zip(test.ids, preds.tolist())))
            except Exception as exc:  # isolate the failure, keep the matrix going
                log.warning("run %s seed=%s failed: %s", spec.model_id, seed, exc)
                result.failures.append(RunFailure(spec.model_id, seed, repr(exc), traceback.format_exc()))
                continue
            result.records.append(record)
            result.predictions.append(pset)
            if any(s.base_model == spec.model_id for s in specs):
                available[(spec.model_id, seed)] = trained
            if keep_models:
                result.models[(spec.model_id, seed)] = trained
            if on_run is not None:
                on_run(trained, record, pset)
    return result
