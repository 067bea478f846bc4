from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn as nn


class Architecture(str, Enum):
    NISQA = "nisqa"
    CONVMAXPOOL = "convmaxpool"
    W2VMOS = "w2vmos"
    FUSION1 = "fusion1"
    FUSION2 = "fusion2"


@dataclass
class Batch:
    """A padded mini-batch. Fields a model does not consume may be None."""

    ids: list[str]
    patches: torch.Tensor | None = None  # (B, N, n_mels, frames)
    n_patches: torch.Tensor | None = None  # (B,)
    audio: torch.Tensor | None = None  # (B, L)
    audio_lengths: torch.Tensor | None = None  # (B,)
    target: torch.Tensor | None = None  # (B,)

    def __len__(self) -> int:
        return len(self.ids)

    def to(self, dtype: torch.dtype) -> "Batch":
        conv = lambda t: None if t is None else t.to(dtype)
        return Batch(
            ids=self.ids,
            patches=conv(self.patches),
            n_patches=self.n_patches,
            audio=conv(self.audio),
            audio_lengths=self.audio_lengths,
            target=conv(self.target),
        )


class MosPredictor(nn.Module):
    """Common contract: ``forward(batch) -> (mos (B,), embedding (B, D))``.

    ``freezing_map`` names every top-level parameter group and whether the
    optimizer may update it.
    """

    architecture: Architecture
    needs_patches = False
    needs_audio = False

    def parameter_group(self, name: str) -> str:
        return name.split(".", 1)[0]

    def freezing_map(self) -> dict[str, bool]:
        groups: dict[str, bool] = {}
        for name, p in self.named_parameters():
            g = self.parameter_group(name)
            groups[g] = groups.get(g, False) or p.requires_grad
        return groups

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]
