from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import torch
import torch.nn as nn

from .base import Architecture, MosPredictor
from .convmaxpool import ConvMaxPool, ConvMaxPoolConfig
from .fusion import Fusion, FusionConfig, FusionVariant
from .layers import FramewiseCnnConfig
from .nisqa import Nisqa, NisqaHeadConfig
from .ssl import BackboneConfig, W2vMos


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choice plus hyperparameters; one row of the model table.

    ``base_model`` names the trained w2vMOS model a fusion variant wraps;
    ``pretrain='ae'`` initialises the CNN trunk from autoencoder weights.
    """

    model_id: str
    architecture: Architecture
    train_set: str = "voicemos"
    cnn: FramewiseCnnConfig = field(default_factory=FramewiseCnnConfig)
    nisqa: NisqaHeadConfig = field(default_factory=NisqaHeadConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    pretrain: str | None = None
    base_model: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "architecture", Architecture(self.architecture))

    @property
    def uses_ssl(self) -> bool:
        return self.architecture is Architecture.W2VMOS

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["architecture"] = self.architecture.value
        d["backbone"]["provider"] = self.backbone.provider.value
        return d


def build_model(spec: ModelSpec, seed: int = 0, w2v: W2vMos | None = None) -> MosPredictor:
    """Construct a freshly initialised model; all randomness comes from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        arch = spec.architecture
        if arch is Architecture.NISQA:
            model: MosPredictor = Nisqa(spec.cnn, spec.nisqa)
        elif arch is Architecture.CONVMAXPOOL:
            model = ConvMaxPool(ConvMaxPoolConfig(spec.cnn))
        elif arch is Architecture.W2VMOS:
            model = W2vMos(spec.backbone)
        else:
            cfg = FusionConfig(FusionVariant(arch.value), spec.cnn, spec.backbone)
            model = Fusion(cfg, w2v=w2v)
    return model


@dataclass(frozen=True)
class ParameterCount:
    total: int
    trainable: int
    frozen: int
    groups: dict[str, tuple[int, bool]]


def count_parameters(model: nn.Module) -> ParameterCount:
    """Exact parameter count with a per-group (count, trainable) breakdown."""
    groups: dict[str, tuple[int, bool]] = {}
    group_of = model.parameter_group if isinstance(model, MosPredictor) else (lambda n: n.split(".", 1)[0])
    trainable = frozen = 0
    for name, p in model.named_parameters():
        n = p.numel()
        g = group_of(name)
        count, flag = groups.get(g, (0, False))
        groups[g] = (count + n, flag or p.requires_grad)
        if p.requires_grad:
            trainable += n
        else:
            frozen += n
    return ParameterCount(trainable + frozen, trainable, frozen, groups)
