"""SSL backbones (pluggable external provider or a deterministic toy) and the w2vMOS head."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np
import torch
import torch.nn as nn

from ..errors import SslProviderUnavailable
from .base import Architecture, Batch, MosPredictor
from .layers import masked_mean, patch_mask, range_head


class BackboneProvider(str, Enum):
    EXTERNAL_SSL = "external_ssl"
    TOY = "toy"


@dataclass(frozen=True)
class BackboneConfig:
    provider: BackboneProvider = BackboneProvider.TOY
    name: str | None = None  # registry key for EXTERNAL_SSL
    embed_dim: int = 768
    num_layers: int = 12
    stride_samples: int = 320
    seed: int = 1234
    finetune: bool = True
    options: dict[str, Any] = field(default_factory=dict, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "provider", BackboneProvider(self.provider))


class Backbone(nn.Module):
    """``forward(audio (B, L), lengths (B,)) -> (frames (B, T', D), frame_lengths (B,))``."""

    embed_dim: int


class ToyBackbone(Backbone):
    """Strided random projection of the waveform followed by tanh.

    Its weights come from a private generator seeded by ``cfg.seed`` so every
    instance is identical regardless of the global RNG state. ``num_layers`` is
    carried as metadata only.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.embed_dim = cfg.embed_dim
        self.stride = cfg.stride_samples
        self.proj = nn.Conv1d(1, cfg.embed_dim, kernel_size=cfg.stride_samples, stride=cfg.stride_samples)
        gen = torch.Generator().manual_seed(cfg.seed)
        bound = 3.0 / cfg.stride_samples**0.5
        with torch.no_grad():
            self.proj.weight.copy_((torch.rand(self.proj.weight.shape, generator=gen) * 2 - 1) * bound)
            self.proj.bias.copy_((torch.rand(self.proj.bias.shape, generator=gen) * 2 - 1) * 0.1)

    def forward(self, audio: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        frames = torch.tanh(self.proj(audio.unsqueeze(1))).transpose(1, 2)
        return frames, torch.div(lengths, self.stride, rounding_mode="floor").clamp_min(1)


class HuggingFaceWav2Vec2(Backbone):
    """Adapter for a local ``transformers`` Wav2Vec2 checkpoint (``options['path']``)."""

    def __init__(self, cfg: BackboneConfig, model: nn.Module | None = None):
        super().__init__()
        if model is None:
            path = cfg.options.get("path")
            if not path:
                raise SslProviderUnavailable(
                    "the 'wav2vec2-hf' provider needs backbone.options.path pointing to a "
                    "local wav2vec 2.0 checkpoint directory"
                )
            try:
                from transformers import Wav2Vec2Model
            except ImportError as exc:
                raise SslProviderUnavailable(
                    "the 'wav2vec2-hf' provider needs the optional 'transformers' package "
                    "(pip install mosbench[ssl])"
                ) from exc
            model = Wav2Vec2Model.from_pretrained(path)
        self.model = model
        self.embed_dim = int(model.config.hidden_size)

    def forward(self, audio, lengths):
        out = self.model(audio).last_hidden_state
        frame_lengths = self.model._get_feat_extract_output_lengths(lengths).clamp(1, out.shape[1])
        return out, frame_lengths


SSL_PROVIDERS: dict[str, Callable[[BackboneConfig], Backbone]] = {
    "wav2vec2-hf": HuggingFaceWav2Vec2,
}


def register_ssl_provider(name: str, factory: Callable[[BackboneConfig], Backbone]) -> None:
    SSL_PROVIDERS[name] = factory


def build_backbone(cfg: BackboneConfig) -> Backbone:
    if cfg.provider is BackboneProvider.TOY:
        return ToyBackbone(cfg)
    if not cfg.name or cfg.name not in SSL_PROVIDERS:
        known = ", ".join(sorted(SSL_PROVIDERS)) or "none"
        raise SslProviderUnavailable(
            f"external SSL provider {cfg.name!r} is not registered (known: {known}). "
            "Register one with mosbench.models.register_ssl_provider(name, factory) or set "
            "backbone.name in the run configuration; use provider 'toy' only for testing."
        )
    backbone = SSL_PROVIDERS[cfg.name](cfg)
    if backbone.embed_dim != cfg.embed_dim:
        raise SslProviderUnavailable(
            f"provider {cfg.name!r} emits {backbone.embed_dim}-dim frames, config expects {cfg.embed_dim}"
        )
    return backbone


def backbone_embed(audio: np.ndarray, cfg: BackboneConfig, backbone: Backbone | None = None) -> np.ndarray:
    """Frame embeddings (T', D) for one 16 kHz mono waveform."""
    backbone = backbone if backbone is not None else build_backbone(cfg)
    x = torch.as_tensor(np.asarray(audio), dtype=torch.float32)[None]
    with torch.no_grad():
        frames, n = backbone.eval()(x, torch.tensor([x.shape[1]]))
    return frames[0, : int(n[0])].double().numpy()


class W2vMos(MosPredictor):
    """Backbone frames, time-mean pooled, one affine layer and the 1-5 range head."""

    architecture = Architecture.W2VMOS
    needs_audio = True

    def __init__(self, cfg: BackboneConfig = BackboneConfig(), backbone: Backbone | None = None):
        super().__init__()
        self.backbone = backbone if backbone is not None else build_backbone(cfg)
        self.fc = nn.Linear(self.backbone.embed_dim, 1)
        if not cfg.finetune:
            self.backbone.requires_grad_(False)

    def pooled(self, audio: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        frames, n = self.backbone(audio, lengths)
        return masked_mean(frames, patch_mask(n, frames.shape[1]))

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        emb = self.pooled(batch.audio, batch.audio_lengths)
        return range_head(self.fc(emb).squeeze(-1)), emb
