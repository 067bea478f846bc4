"""Autoencoder pretraining of the framewise CNN on unlabeled speech."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from ..data import UnlabeledManifest
from ..errors import ShapeError
from ..features import MelConfig, PatchCache, extract_patches
from ..models.layers import FramewiseCnn, FramewiseCnnConfig
from .dataset import load_audio


@dataclass(frozen=True)
class AePretrainConfig:
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    max_patches: int | None = None
    cnn: FramewiseCnnConfig = field(default_factory=FramewiseCnnConfig)


class MirroredDecoder(nn.Module):
    """Reverses the encoder: per block, upsample to the block's input size then conv back."""

    def __init__(self, cfg: FramewiseCnnConfig):
        super().__init__()
        sizes = [cfg.in_shape]
        h, w = cfg.in_shape
        pools = dict(cfg.pools)
        for i in range(len(cfg.channels) - 1):
            if i in pools:
                h, w = pools[i]
            sizes.append((h, w))
        c_in = [1] + list(cfg.channels[:-1])
        layers: list[nn.Module] = []
        current = cfg.out_shape[1:]
        for i in reversed(range(len(cfg.channels))):
            if sizes[i] != current:
                layers.append(nn.Upsample(size=sizes[i], mode="nearest"))
                current = sizes[i]
            layers.append(nn.Conv2d(cfg.channels[i], c_in[i], cfg.kernel_size, padding=cfg.kernel_size // 2))
            if i > 0:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class PatchAutoencoder(nn.Module):
    def __init__(self, cfg: FramewiseCnnConfig = FramewiseCnnConfig()):
        super().__init__()
        self.encoder = FramewiseCnn(cfg)
        self.decoder = MirroredDecoder(cfg)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x.unsqueeze(1))).squeeze(1)


@dataclass
class PretrainedEncoder:
    cnn: FramewiseCnnConfig
    state_dict: dict
    losses: list[float]


def collect_patches(unlabeled: UnlabeledManifest, mel_cfg: MelConfig, cache: PatchCache | None = None) -> np.ndarray:
    out = []
    for path in unlabeled.audio_paths:
        wav = load_audio(path, mel_cfg.sample_rate_hz)
        seq = cache.get(wav, mel_cfg.sample_rate_hz, mel_cfg) if cache else extract_patches(wav, mel_cfg.sample_rate_hz, mel_cfg)
        out.append(seq.patches)
    return np.concatenate(out).astype(np.float32)


def pretrain_autoencoder(
    unlabeled: UnlabeledManifest | np.ndarray,
    cfg: AePretrainConfig = AePretrainConfig(),
    mel_cfg: MelConfig = MelConfig(),
    cache: PatchCache | None = None,
) -> PretrainedEncoder:
    """Fit the encoder/mirrored-decoder pair with MSE reconstruction of mel patches."""
    patches = unlabeled if isinstance(unlabeled, np.ndarray) else collect_patches(unlabeled, mel_cfg, cache)
    if patches.shape[0] == 0:
        raise ValueError("no patches to pretrain on")
    rng = np.random.default_rng(cfg.seed)
    if cfg.max_patches is not None and patches.shape[0] > cfg.max_patches:
        patches = patches[np.sort(rng.choice(patches.shape[0], cfg.max_patches, replace=False))]
    data = torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32))
    losses = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        ae = PatchAutoencoder(cfg.cnn)
        opt = torch.optim.Adam(ae.parameters(), lr=cfg.learning_rate)
        ae.train()
        for _ in range(cfg.epochs):
            total = 0.0
            for idx in np.array_split(rng.permutation(len(data)), max(1, -(-len(data) // cfg.batch_size))):
                x = data[idx]
                opt.zero_grad()
                loss = torch.mean((ae(x) - x) ** 2)
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(idx)
            losses.append(total / len(data))
    return PretrainedEncoder(cfg.cnn, {k: v.clone() for k, v in ae.encoder.state_dict().items()}, losses)


def load_encoder(model: nn.Module, encoder: PretrainedEncoder) -> nn.Module:
    """Copy pretrained encoder weights into the CNN trunk of a ConvMaxPool, NISQA or fusion model."""
    cnn = getattr(model, "cnn", None)
    if cnn is None and hasattr(model, "trunk"):
        cnn = model.trunk.cnn
    if not isinstance(cnn, FramewiseCnn):
        raise TypeError(f"{type(model).__name__} has no framewise CNN trunk")
    if cnn.cfg != encoder.cnn:
        raise ShapeError("encoder configuration", encoder.cnn, cnn.cfg)
    own = cnn.state_dict()
    for k, v in encoder.state_dict.items():
        if k not in own or own[k].shape != v.shape:
            raise ShapeError(f"encoder tensor {k}", tuple(own[k].shape) if k in own else None, tuple(v.shape))
    cnn.load_state_dict(encoder.state_dict)
    return model
