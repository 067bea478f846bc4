"""Building blocks shared by the MOS predictors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import EmptySequenceError, ShapeError

MOS_LOW = 1.0
MOS_SPAN = 4.0


def range_head(z: torch.Tensor) -> torch.Tensor:
    """Shifted and scaled sigmoid onto the open interval (1, 5).

    The sigmoid saturates to exactly 0 or 1 in floating point for large
    logits, so the result is clamped one ulp inside the bounds.
    """
    out = MOS_LOW + MOS_SPAN * torch.sigmoid(z)
    lo = torch.nextafter(torch.tensor(MOS_LOW, dtype=out.dtype), torch.tensor(math.inf, dtype=out.dtype))
    hi = torch.nextafter(torch.tensor(MOS_LOW + MOS_SPAN, dtype=out.dtype), torch.tensor(-math.inf, dtype=out.dtype))
    return out.clamp(lo.item(), hi.item())


@dataclass(frozen=True)
class FramewiseCnnConfig:
    """Six 3x3 conv blocks; adaptive max-pools after blocks 2, 4 and 5 and an
    unpadded-width final conv take a 48x15 patch to 64 x 6 x 1.
    """

    in_shape: tuple[int, int] = (48, 15)
    channels: tuple[int, ...] = (16, 16, 32, 32, 64, 64)
    kernel_size: int = 3
    pools: tuple[tuple[int, tuple[int, int]], ...] = ((1, (24, 7)), (3, (12, 5)), (4, (6, 3)))
    last_padding: tuple[int, int] = (1, 0)
    batch_norm: bool = True
    dropout: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "in_shape", tuple(self.in_shape))
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "pools", tuple((int(i), tuple(s)) for i, s in self.pools))
        object.__setattr__(self, "last_padding", tuple(self.last_padding))

    @property
    def out_shape(self) -> tuple[int, int, int]:
        """(channels, height, width) of the per-patch feature map."""
        h, w = self.in_shape
        for i in range(len(self.channels)):
            pad = self.last_padding if i == len(self.channels) - 1 else (self.kernel_size // 2,) * 2
            h = h + 2 * pad[0] - self.kernel_size + 1
            w = w + 2 * pad[1] - self.kernel_size + 1
            for idx, size in self.pools:
                if idx == i:
                    h, w = size
        return self.channels[-1], h, w

    @property
    def flat_dim(self) -> int:
        c, h, w = self.out_shape
        return c * h * w


class FramewiseCnn(nn.Module):
    """Maps (P, 1, n_mels, frames) patches to (P, C, H, W) feature maps."""

    def __init__(self, cfg: FramewiseCnnConfig = FramewiseCnnConfig()):
        super().__init__()
        self.cfg = cfg
        pools = dict(cfg.pools)
        blocks = []
        c_in = 1
        n = len(cfg.channels)
        for i, c_out in enumerate(cfg.channels):
            pad = cfg.last_padding if i == n - 1 else (cfg.kernel_size // 2,) * 2
            layers: list[nn.Module] = [nn.Conv2d(c_in, c_out, cfg.kernel_size, padding=pad)]
            if cfg.batch_norm:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.ReLU())
            if i in pools:
                layers.append(nn.AdaptiveMaxPool2d(pools[i]))
            if cfg.dropout > 0 and i < n - 1:
                layers.append(nn.Dropout(cfg.dropout))
            blocks.append(nn.Sequential(*layers))
            c_in = c_out
        self.blocks = nn.Sequential(*blocks)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if tuple(x.shape[-2:]) != self.cfg.in_shape:
            raise ShapeError("framewise CNN input", self.cfg.in_shape, tuple(x.shape[-2:]))
        return self.blocks(x)


def gap(feature_maps: torch.Tensor) -> torch.Tensor:
    """Global average pooling over the spatial axes of (..., C, H, W) maps."""
    return feature_maps.mean(dim=(-2, -1))


def patch_mask(n_patches: torch.Tensor, max_len: int) -> torch.Tensor:
    """Boolean (B, max_len) mask, True on real patches."""
    return torch.arange(max_len, device=n_patches.device)[None, :] < n_patches[:, None]


def run_framewise(cnn: FramewiseCnn, patches: torch.Tensor, n_patches: torch.Tensor) -> torch.Tensor:
    """Apply the CNN to the valid patches of a padded (B, N, M, F) batch.

    Returns (B, N, C, H, W); padded slots are zero.
    """
    if patches.dim() != 4:
        raise ShapeError("patch batch", "(B, N, n_mels, frames)", tuple(patches.shape))
    if (n_patches < 1).any():
        raise EmptySequenceError("every utterance needs at least one patch")
    b, n = patches.shape[:2]
    mask = patch_mask(n_patches, n)
    valid = patches[mask]
    maps = cnn(valid)
    out = maps.new_zeros((b, n) + tuple(maps.shape[1:]))
    out[mask] = maps
    return out


def masked_max(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Max over dim 1 of (B, N, D), ignoring positions where mask is False."""
    fill = torch.finfo(x.dtype).min
    return x.masked_fill(~mask[..., None], fill).max(dim=1).values


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    w = mask.to(x.dtype)[..., None]
    return (x * w).sum(dim=1) / w.sum(dim=1).clamp_min(1.0)


class SinusoidalPositions(nn.Module):
    def __init__(self, dim: int, max_len: int = 4096):
        super().__init__()
        pos = torch.arange(max_len, dtype=torch.float64)[:, None]
        div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
        pe = torch.zeros(max_len, dim, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div[: dim // 2])
        self.register_buffer("pe", pe.float(), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.pe[: x.shape[1]].to(x.dtype)[None]


class AttentionPooling(nn.Module):
    """Masked softmax attention over time followed by a scalar value head."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.score = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))
        self.value = nn.Linear(dim, 1)

    def weights(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        s = self.score(x).squeeze(-1)
        s = s.masked_fill(~mask, float("-inf"))
        return torch.softmax(s, dim=1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        w = self.weights(x, mask)
        pooled = torch.bmm(w.unsqueeze(1), x).squeeze(1)
        return self.value(pooled).squeeze(-1), pooled, w


def l1_loss_t(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.l1_loss(pred, target)
