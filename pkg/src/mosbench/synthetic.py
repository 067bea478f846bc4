"""Synthetic corpora for smoke tests and desk-scale runs.

Utterances are harmonic, amplitude-modulated tones with additive white noise.
Each synthetic system has a characteristic noise level and the MOS label is a
decreasing affine function of the utterance's log noise level plus small
label noise, so quality is learnable from the spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Manifest, Split, SystemType, Utterance, write_manifest, write_unlabeled_manifest
from .features import write_wav

DEFAULT_TYPES = (
    SystemType.BC, SystemType.VCC, SystemType.BC, SystemType.ESPNET,
    SystemType.VCC, SystemType.BC, SystemType.NATURAL, SystemType.VCC,
    SystemType.BC, SystemType.ESPNET, SystemType.VCC, SystemType.BC,
)


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_utterances: int = 600
    n_systems: int = 12
    sample_rate: int = 16000
    min_seconds: float = 0.5
    max_seconds: float = 0.8
    log10_noise_range: tuple[float, float] = (-3.0, -0.6)
    system_jitter: float = 0.12
    label_noise: float = 0.08
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0


def speech_like(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    f0 = rng.uniform(100.0, 240.0) * (1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(3, 6) * t))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    sig = np.zeros(n)
    for h in range(1, 16):
        if h * f0.max() >= sr / 2:
            break
        formant = np.exp(-(((h * f0.mean()) - rng.uniform(400, 900)) / 700.0) ** 2) + 0.25
        sig += formant / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    sig *= envelope
    return 0.3 * sig / np.max(np.abs(sig))


def mos_from_noise(log10_noise: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affine map from log noise level to MOS: lo -> 4.7, hi -> 1.3."""
    frac = (np.asarray(log10_noise) - lo) / (hi - lo)
    return 4.7 - 3.4 * frac


def generate_corpus(root: str | Path, cfg: SyntheticCorpusConfig = SyntheticCorpusConfig(), name: str = "synthetic") -> Manifest:
    """Write WAV files and ``manifest.csv`` under ``root`` and return the manifest."""
    root = Path(root)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.log10_noise_range
    system_levels = np.linspace(lo + 0.1, hi - 0.1, cfg.n_systems)
    system_order = rng.permutation(cfg.n_systems)
    types = [DEFAULT_TYPES[i % len(DEFAULT_TYPES)] for i in range(cfg.n_systems)]
    per_system = np.full(cfg.n_systems, cfg.n_utterances // cfg.n_systems)
    per_system[: cfg.n_utterances % cfg.n_systems] += 1
    utterances = []
    for s in range(cfg.n_systems):
        level = system_levels[system_order[s]]
        n_s = int(per_system[s])
        n_train = int(round(cfg.split_fractions[0] * n_s))
        n_val = int(round(cfg.split_fractions[1] * n_s))
        for j in range(n_s):
            split = Split.TRAIN if j < n_train else Split.VAL if j < n_train + n_val else Split.TEST
            n = int(rng.uniform(cfg.min_seconds, cfg.max_seconds) * cfg.sample_rate)
            lvl = float(np.clip(level + rng.normal(0.0, cfg.system_jitter), lo, hi))
            clean = speech_like(rng, n, cfg.sample_rate)
            audio = clean + (10.0**lvl) * rng.standard_normal(n)
            mos = float(np.clip(mos_from_noise(lvl, lo, hi) + rng.normal(0.0, cfg.label_noise), 1.0, 5.0))
            uid = f"sys{s:02d}_utt{j:03d}"
            rel = Path("wav") / f"{uid}.wav"
            write_wav(root / rel, np.clip(audio, -1.0, 1.0), cfg.sample_rate)
            utterances.append(
                Utterance(uid, root / rel, f"sys{s:02d}", types[s], round(mos, 4), split, 8)
            )
    manifest = Manifest(name, tuple(utterances), label_scale_note="synthetic: MOS affine in log noise level")
    write_manifest(manifest, root / "manifest.csv", relative_to=root)
    return manifest


def generate_unlabeled(root: str | Path, n: int = 40, sample_rate: int = 16000, seed: int = 1) -> Path:
    """Write ``n`` unlabeled clips and an ``audio_path`` manifest; return the manifest path."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        length = int(rng.uniform(0.5, 1.0) * sample_rate)
        audio = speech_like(rng, length, sample_rate) + 10 ** rng.uniform(-3.5, -1.5) * rng.standard_normal(length)
        rel = Path("wav") / f"clip{i:04d}.wav"
        write_wav(root / rel, np.clip(audio, -1, 1), sample_rate)
        paths.append(rel)
    write_unlabeled_manifest(paths, root / "unlabeled.csv")
    return root / "unlabeled.csv"
