"""ConvMaxPool: framewise CNN, per-patch GAP, temporal max-pooling and one FC layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .base import Architecture, Batch, MosPredictor
from .layers import FramewiseCnn, FramewiseCnnConfig, gap, masked_max, patch_mask, range_head, run_framewise


@dataclass(frozen=True)
class ConvMaxPoolConfig:
    cnn: FramewiseCnnConfig = field(default_factory=FramewiseCnnConfig)

    @property
    def embed_dim(self) -> int:
        return self.cnn.channels[-1]


class ConvMaxPoolTrunk(nn.Module):
    """CNN + GAP + temporal max-pool; yields one embedding per utterance."""

    def __init__(self, cnn_cfg: FramewiseCnnConfig):
        super().__init__()
        self.cnn = FramewiseCnn(cnn_cfg)

    def patch_embeddings(self, patches: torch.Tensor, n_patches: torch.Tensor) -> torch.Tensor:
        return gap(run_framewise(self.cnn, patches, n_patches))

    def forward(self, patches: torch.Tensor, n_patches: torch.Tensor) -> torch.Tensor:
        per_patch = self.patch_embeddings(patches, n_patches)
        return masked_max(per_patch, patch_mask(n_patches, per_patch.shape[1]))


class ConvMaxPool(MosPredictor):
    architecture = Architecture.CONVMAXPOOL
    needs_patches = True

    def __init__(self, cfg: ConvMaxPoolConfig = ConvMaxPoolConfig()):
        super().__init__()
        self.trunk = ConvMaxPoolTrunk(cfg.cnn)
        self.fc = nn.Linear(cfg.embed_dim, 1)

    @property
    def cnn(self) -> FramewiseCnn:
        return self.trunk.cnn

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        emb = self.trunk(batch.patches, batch.n_patches)
        return range_head(self.fc(emb).squeeze(-1)), emb
