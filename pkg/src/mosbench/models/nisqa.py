"""NISQA-style predictor: framewise CNN, self-attention over patches, attention pooling."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .base import Architecture, Batch, MosPredictor
from .layers import (
    AttentionPooling,
    FramewiseCnn,
    FramewiseCnnConfig,
    SinusoidalPositions,
    patch_mask,
    range_head,
    run_framewise,
)


@dataclass(frozen=True)
class NisqaHeadConfig:
    d_model: int = 48
    n_heads: int = 1
    n_layers: int = 1
    ff_dim: int = 96
    dropout: float = 0.0
    pool_hidden: int = 64


class Nisqa(MosPredictor):
    architecture = Architecture.NISQA
    needs_patches = True

    def __init__(self, cnn_cfg: FramewiseCnnConfig = FramewiseCnnConfig(), head: NisqaHeadConfig = NisqaHeadConfig()):
        super().__init__()
        self.cnn = FramewiseCnn(cnn_cfg)
        self.proj = nn.Linear(cnn_cfg.flat_dim, head.d_model)
        self.positions = SinusoidalPositions(head.d_model)
        layer = nn.TransformerEncoderLayer(
            head.d_model,
            head.n_heads,
            dim_feedforward=head.ff_dim,
            dropout=head.dropout,
            batch_first=True,
        )
        self.attention = nn.TransformerEncoder(layer, head.n_layers, enable_nested_tensor=False)
        self.pool = AttentionPooling(head.d_model, head.pool_hidden)

    def encode(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        maps = run_framewise(self.cnn, batch.patches, batch.n_patches)
        mask = patch_mask(batch.n_patches, maps.shape[1])
        x = self.proj(maps.flatten(start_dim=2))
        x = self.positions(x)
        x = self.attention(x, src_key_padding_mask=~mask)
        return x, mask

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        x, mask = self.encode(batch)
        z, pooled, _ = self.pool(x, mask)
        return range_head(z), pooled

    def attention_weights(self, batch: Batch) -> torch.Tensor:
        x, mask = self.encode(batch)
        return self.pool.weights(x, mask)
