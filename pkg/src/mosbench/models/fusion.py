"""Fusion of ConvMaxPool features with a frozen, MOS-finetuned w2vMOS."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn as nn

from .base import Architecture, Batch, MosPredictor
from .convmaxpool import ConvMaxPoolTrunk
from .layers import FramewiseCnnConfig, range_head
from .ssl import BackboneConfig, W2vMos


class FusionVariant(str, Enum):
    FUSION1 = "fusion1"  # [ConvMaxPool embedding, w2vMOS prediction]
    FUSION2 = "fusion2"  # [ConvMaxPool embedding, w2vMOS prediction, w2vMOS pooled features]


@dataclass(frozen=True)
class FusionConfig:
    variant: FusionVariant = FusionVariant.FUSION1
    cnn: FramewiseCnnConfig = field(default_factory=FramewiseCnnConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", FusionVariant(self.variant))

    @property
    def fc_in_dim(self) -> int:
        d = self.cnn.channels[-1] + 1
        if self.variant is FusionVariant.FUSION2:
            d += self.backbone.embed_dim
        return d

    def trainability(self) -> dict[str, bool]:
        return {"trunk": True, "fc": True, "w2v": False}


class Fusion(MosPredictor):
    needs_patches = True
    needs_audio = True

    def __init__(self, cfg: FusionConfig = FusionConfig(), w2v: W2vMos | None = None):
        super().__init__()
        self.cfg = cfg
        self.architecture = Architecture(cfg.variant.value)
        self.trunk = ConvMaxPoolTrunk(cfg.cnn)
        self.w2v = w2v if w2v is not None else W2vMos(cfg.backbone)
        self.fc = nn.Linear(cfg.fc_in_dim, 1)
        self.w2v.requires_grad_(False)
        self.w2v.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        self.w2v.eval()
        return self

    def fused_features(self, batch: Batch) -> torch.Tensor:
        emb = self.trunk(batch.patches, batch.n_patches)
        with torch.no_grad():
            w2v_pred, w2v_emb = self.w2v(batch)
        parts = [emb, w2v_pred.unsqueeze(-1).to(emb.dtype)]
        if self.cfg.variant is FusionVariant.FUSION2:
            parts.append(w2v_emb.to(emb.dtype))
        return torch.cat(parts, dim=-1)

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        x = self.fused_features(batch)
        return range_head(self.fc(x).squeeze(-1)), x
