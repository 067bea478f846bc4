"""Single-utterance convenience wrappers around the predictor modules (eval mode, no grad)."""

from __future__ import annotations

import numpy as np
import torch

from ..errors import EmptySequenceError, ShapeError
from ..features import MelPatchSequence
from .base import Batch
from .convmaxpool import ConvMaxPool
from .fusion import Fusion
from .layers import FramewiseCnn
from .nisqa import Nisqa
from .ssl import W2vMos


def _patch_tensor(patches: MelPatchSequence | np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    arr = patches.patches if isinstance(patches, MelPatchSequence) else np.asarray(patches)
    if arr.ndim != 3:
        raise ShapeError("patch sequence", "(N, n_mels, frames)", arr.shape)
    if arr.shape[0] == 0:
        raise EmptySequenceError("patch sequence is empty")
    return torch.as_tensor(arr, dtype=dtype)


def _dtype(model: torch.nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def single_batch(patches=None, audio=None, dtype: torch.dtype = torch.float32) -> Batch:
    batch = Batch(ids=["0"])
    if patches is not None:
        p = _patch_tensor(patches, dtype)
        batch.patches = p[None]
        batch.n_patches = torch.tensor([p.shape[0]])
    if audio is not None:
        a = torch.as_tensor(np.asarray(audio), dtype=dtype)
        batch.audio = a[None]
        batch.audio_lengths = torch.tensor([a.shape[0]])
    return batch


def framewise_cnn_forward(cnn: FramewiseCnn, patches) -> np.ndarray:
    """Per-patch feature maps laid out as (N, H, W, C), i.e. (N, 6, 1, 64) by default."""
    x = _patch_tensor(patches, _dtype(cnn))
    expected = cnn.cfg.in_shape
    if tuple(x.shape[1:]) != expected:
        raise ShapeError("patch", expected, tuple(x.shape[1:]))
    with torch.no_grad():
        maps = cnn.eval()(x)
    return maps.permute(0, 2, 3, 1).double().numpy()


def gap(feature_map: np.ndarray) -> np.ndarray:
    """Mean over the spatial (H, W) extent of an (H, W, C) map."""
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 3:
        raise ShapeError("feature map", "(H, W, C)", fm.shape)
    return fm.mean(axis=(0, 1))


def nisqa_forward(model: Nisqa, patches) -> float:
    with torch.no_grad():
        pred, _ = model.eval()(single_batch(patches, dtype=_dtype(model)))
    return float(pred[0])


def convmaxpool_forward(model: ConvMaxPool, patches) -> tuple[float, np.ndarray]:
    with torch.no_grad():
        pred, emb = model.eval()(single_batch(patches, dtype=_dtype(model)))
    return float(pred[0]), emb[0].double().numpy()


def w2vmos_forward(model: W2vMos, audio: np.ndarray) -> tuple[float, np.ndarray]:
    with torch.no_grad():
        pred, emb = model.eval()(single_batch(audio=audio, dtype=_dtype(model)))
    return float(pred[0]), emb[0].double().numpy()


def fusion_forward(model: Fusion, audio: np.ndarray, patches) -> float:
    with torch.no_grad():
        pred, _ = model.eval()(single_batch(patches, audio, dtype=_dtype(model)))
    return float(pred[0])
