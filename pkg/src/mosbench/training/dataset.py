"""Feature preparation and mini-batch assembly for training and inference."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from ..data import Manifest
from ..features import MelConfig, PatchCache, extract_patches, read_wav, resample
from ..models.base import Batch


@dataclass
class PreparedSet:
    """Per-utterance model inputs held in memory, aligned with ``ids``."""

    ids: list[str]
    targets: np.ndarray
    patches: list[np.ndarray] | None
    audio: list[np.ndarray] | None

    def __len__(self) -> int:
        return len(self.ids)


def load_audio(path: Path, sample_rate: int) -> np.ndarray:
    audio, sr = read_wav(path)
    return resample(audio, sr, sample_rate)


def prepare(
    manifest: Manifest,
    mel_cfg: MelConfig = MelConfig(),
    need_patches: bool = True,
    need_audio: bool = False,
    cache: PatchCache | None = None,
) -> PreparedSet:
    patches = [] if need_patches else None
    audio = [] if need_audio else None
    for utt in manifest.utterances:
        wav = load_audio(utt.audio_path, mel_cfg.sample_rate_hz)
        if need_patches:
            if cache is not None:
                seq = cache.get(wav, mel_cfg.sample_rate_hz, mel_cfg, utt.utterance_id)
            else:
                seq = extract_patches(wav, mel_cfg.sample_rate_hz, mel_cfg, utt.utterance_id)
            patches.append(seq.patches.astype(np.float32))
        if need_audio:
            audio.append(wav.astype(np.float32))
    return PreparedSet(manifest.ids, manifest.mos.astype(np.float32), patches, audio)


def collate(data: PreparedSet, index: Sequence[int]) -> Batch:
    index = list(index)
    batch = Batch(ids=[data.ids[i] for i in index], target=torch.from_numpy(data.targets[index]))
    if data.patches is not None:
        seqs = [data.patches[i] for i in index]
        n = max(s.shape[0] for s in seqs)
        out = np.zeros((len(seqs), n) + seqs[0].shape[1:], dtype=np.float32)
        for j, s in enumerate(seqs):
            out[j, : s.shape[0]] = s
        batch.patches = torch.from_numpy(out)
        batch.n_patches = torch.tensor([s.shape[0] for s in seqs])
    if data.audio is not None:
        waves = [data.audio[i] for i in index]
        n = max(w.shape[0] for w in waves)
        out = np.zeros((len(waves), n), dtype=np.float32)
        for j, w in enumerate(waves):
            out[j, : w.shape[0]] = w
        batch.audio = torch.from_numpy(out)
        batch.audio_lengths = torch.tensor([w.shape[0] for w in waves])
    return batch


def iter_batches(
    data: PreparedSet, batch_size: int, rng: np.random.Generator | None = None
) -> Iterator[Batch]:
    """Yield batches in order, or shuffled by ``rng`` when given."""
    order = np.arange(len(data)) if rng is None else rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        yield collate(data, order[start : start + batch_size])
