"""Log-mel front end and patch extraction for the CNN-family models."""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioTooShortError, MosBenchError


@dataclass(frozen=True)
class MelConfig:
    sample_rate_hz: int = 16000
    window_ms: float = 32.0
    hop_ms: float = 10.0
    n_mels: int = 48
    patch_frames: int = 15
    patch_hop_frames: int = 4
    f_min_hz: float = 0.0
    f_max_hz: float | None = None
    log_floor: float = 1e-7
    normalize: bool = False

    def __post_init__(self) -> None:
        if self.sample_rate_hz <= 0 or self.n_mels < 1 or self.patch_frames < 1:
            raise ValueError("sample rate, n_mels and patch_frames must be positive")
        if self.window_ms <= 0 or self.hop_ms <= 0 or self.hop_ms > self.window_ms:
            raise ValueError("need 0 < hop_ms <= window_ms")
        if self.patch_hop_frames < 1:
            raise ValueError("patch_hop_frames must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))

    @property
    def upper_hz(self) -> float:
        return self.f_max_hz if self.f_max_hz is not None else self.sample_rate_hz / 2.0

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class MelPatchSequence:
    utterance_id: str
    patches: np.ndarray  # (N, n_mels, patch_frames)
    config: MelConfig
    padded: bool = False
    n_frames: int = field(default=0)

    def __post_init__(self) -> None:
        p = np.asarray(self.patches)
        expected = (self.config.n_mels, self.config.patch_frames)
        if p.ndim != 3 or p.shape[1:] != expected:
            raise MosBenchError(f"patches must be (N, {expected[0]}, {expected[1]}), got {p.shape}")

    def __len__(self) -> int:
        return int(self.patches.shape[0])


def hz_to_mel(f):
    """Slaney-style mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    lin = f / f_sp
    log = min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep
    return np.where(f >= min_log_hz, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    lin = f_sp * m
    log = min_log_hz * np.exp(logstep * (m - min_log_mel))
    return np.where(m >= min_log_mel, log, lin)


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Triangular, area-normalised mel filters of shape (n_mels, n_fft // 2 + 1)."""
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fft_freqs[None, :]
    weights = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lower = -ramps[i] / fdiff[i]
        upper = ramps[i + 2] / fdiff[i + 1]
        weights[i] = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (hz_pts[2 : n_mels + 2] - hz_pts[:n_mels]))[:, None]
    weights.flags.writeable = False
    return weights


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a PCM (int16/int32/uint8) or float WAV as mono float64 in [-1, 1]."""
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        audio = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        audio = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        audio = (data.astype(np.float64) - 128.0) / 128.0
    else:
        audio = data.astype(np.float64)
    if audio.ndim == 2:
        audio = audio.mean(axis=1)
    return audio, int(sr)


def write_wav(path: str | Path, audio: np.ndarray, sample_rate: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(np.asarray(audio) * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), sample_rate, pcm)


def resample(audio: np.ndarray, orig_sr: int, target_sr: int) -> np.ndarray:
    if orig_sr == target_sr:
        return np.asarray(audio, dtype=np.float64)
    g = math.gcd(orig_sr, target_sr)
    return resample_poly(np.asarray(audio, dtype=np.float64), target_sr // g, orig_sr // g)


def frame_count(n_samples: int, config: MelConfig) -> int:
    return 1 + (n_samples - config.window_samples) // config.hop_samples


def compute_mel(audio: np.ndarray, sample_rate: int, config: MelConfig = MelConfig()) -> np.ndarray:
    """Log mel energies of shape (n_mels, T), with T = 1 + (L - window) // hop.

    Frames are not centred or padded. Power spectra use a periodic Hann window
    of ``window_samples`` points as the FFT size.
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise MosBenchError("audio must be a non-empty mono waveform")
    audio = resample(audio, sample_rate, config.sample_rate_hz)
    win = config.window_samples
    hop = config.hop_samples
    if audio.size < win:
        raise AudioTooShortError(
            f"audio has {audio.size} samples, shorter than one {win}-sample window"
        )
    n_frames = frame_count(audio.size, config)
    frames = np.lib.stride_tricks.sliding_window_view(audio, win)[::hop][:n_frames]
    window = np.hanning(win + 1)[:-1]
    power = np.abs(np.fft.rfft(frames * window, n=win, axis=1)) ** 2
    fb = mel_filterbank(config.sample_rate_hz, win, config.n_mels, config.f_min_hz, config.upper_hz)
    mel = fb @ power.T
    out = np.log(np.maximum(mel, config.log_floor))
    if config.normalize:
        std = out.std()
        out = (out - out.mean()) / (std if std > 0 else 1.0)
    return out


def make_patches(mel: np.ndarray, config: MelConfig = MelConfig(), utterance_id: str = "") -> MelPatchSequence:
    """Cut a (n_mels, T) spectrogram into overlapping (n_mels, patch_frames) patches.

    Inputs shorter than one patch are right-padded with the log floor and flagged.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] != config.n_mels:
        raise MosBenchError(f"mel must be ({config.n_mels}, T), got {mel.shape}")
    n_frames = mel.shape[1]
    padded = False
    if n_frames < config.patch_frames:
        pad = np.full((config.n_mels, config.patch_frames - n_frames), math.log(config.log_floor))
        mel = np.concatenate([mel, pad], axis=1)
        padded = True
    width = config.patch_frames
    view = np.lib.stride_tricks.sliding_window_view(mel, width, axis=1)[:, :: config.patch_hop_frames]
    patches = np.ascontiguousarray(view.transpose(1, 0, 2))
    return MelPatchSequence(
        utterance_id=utterance_id, patches=patches, config=config, padded=padded, n_frames=n_frames
    )


def patch_count(n_frames: int, config: MelConfig) -> int:
    if n_frames < config.patch_frames:
        return 1
    return 1 + (n_frames - config.patch_frames) // config.patch_hop_frames


def extract_patches(audio: np.ndarray, sample_rate: int, config: MelConfig = MelConfig(), utterance_id: str = "") -> MelPatchSequence:
    return make_patches(compute_mel(audio, sample_rate, config), config, utterance_id)


class PatchCache:
    """On-disk patch cache keyed by audio content hash and config hash.

    Entries are ``.npy`` files written atomically, so concurrent readers never
    observe a partial file.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(audio: np.ndarray, sample_rate: int, config: MelConfig) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(audio, dtype=np.float64).tobytes())
        h.update(str(sample_rate).encode())
        return f"{h.hexdigest()[:24]}_{config.digest()}"

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.npy"

    def get(self, audio, sample_rate, config, utterance_id="") -> MelPatchSequence:
        key = self.key(audio, sample_rate, config)
        path = self._path(key)
        if path.exists():
            arr = np.load(path, allow_pickle=False)
            n_frames = int(arr[0, 0, 0])
            padded = bool(arr[0, 0, 1])
            return MelPatchSequence(utterance_id, np.ascontiguousarray(arr[1:]), config, padded, n_frames)
        seq = extract_patches(audio, sample_rate, config, utterance_id)
        header = np.zeros((1,) + seq.patches.shape[1:])
        header[0, 0, 0] = seq.n_frames
        header[0, 0, 1] = float(seq.padded)
        tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
        with open(tmp, "wb") as fh:
            np.save(fh, np.concatenate([header, seq.patches]), allow_pickle=False)
        tmp.replace(path)
        return seq
