"""Optimisation loop: L1 loss, Adam/SGD, patience-based early stopping, best-epoch restore."""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import torch

from ..data import Manifest
from ..errors import TrainingDiverged
from ..features import MelConfig, PatchCache
from ..models import Architecture, ModelSpec, MosPredictor, build_model
from .dataset import PreparedSet, iter_batches, prepare


class Optimizer(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


DEFAULT_LR = {Optimizer.ADAM: 1e-3, Optimizer.SGD: 1e-4}
SSL_ARCHITECTURES = {Architecture.W2VMOS}


class StopReason(str, Enum):
    PATIENCE = "PATIENCE"
    MAX_EPOCHS = "MAX_EPOCHS"


@dataclass(frozen=True)
class TrainConfig:
    optimizer: Optimizer = Optimizer.ADAM
    learning_rate: float | None = None
    patience_epochs: int = 20
    max_epochs: int = 10_000
    batch_size: int = 32
    seed: int = 0
    min_delta: float = 1e-6

    def __post_init__(self) -> None:
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", DEFAULT_LR[self.optimizer])
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience_epochs < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience_epochs, max_epochs and batch_size must be >= 1")

    @classmethod
    def for_architecture(cls, arch: Architecture | str, **overrides) -> "TrainConfig":
        """Adam at 1e-3 with batch 32 for CNN-family models; SGD at 1e-4 with batch 8 for w2vMOS."""
        arch = Architecture(arch)
        if arch in SSL_ARCHITECTURES:
            base = dict(optimizer=Optimizer.SGD, batch_size=8)
        else:
            base = dict(optimizer=Optimizer.ADAM, batch_size=32)
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass
class RunRecord:
    model_id: str
    seed: int
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stop_reason: StopReason | None = None
    seconds: float = 0.0

    @property
    def best_val_loss(self) -> float:
        return self.val_losses[self.best_epoch - 1] if self.best_epoch else math.inf

    @property
    def epochs_run(self) -> int:
        return len(self.val_losses)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stop_reason"] = self.stop_reason.value if self.stop_reason else None
        d["best_val_loss"] = self.best_val_loss
        d["epochs_run"] = self.epochs_run
        return d


class EarlyStopping:
    """Tracks the best validation loss; improvement means a decrease of more than ``min_delta``."""

    def __init__(self, patience: int, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def run_epochs(
    train_epoch: Callable[[int], float],
    validate: Callable[[int], float],
    cfg: TrainConfig,
    on_improve: Callable[[int], None] = lambda epoch: None,
    record: RunRecord | None = None,
) -> RunRecord:
    """Drive epochs until patience runs out or ``max_epochs`` is reached."""
    record = record or RunRecord(model_id="", seed=cfg.seed)
    stopper = EarlyStopping(cfg.patience_epochs, cfg.min_delta)
    for epoch in range(1, cfg.max_epochs + 1):
        tr = float(train_epoch(epoch))
        if not math.isfinite(tr):
            raise TrainingDiverged(epoch, tr)
        va = float(validate(epoch))
        if not math.isfinite(va):
            raise TrainingDiverged(epoch, va)
        record.train_losses.append(tr)
        record.val_losses.append(va)
        if stopper.update(epoch, va):
            on_improve(epoch)
        if stopper.should_stop:
            record.stop_reason = StopReason.PATIENCE
            break
    else:
        record.stop_reason = StopReason.MAX_EPOCHS
    record.best_epoch = stopper.best_epoch
    return record


def l1_loss(pred, target) -> float:
    """Mean absolute error over samples."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.abs(p - t).mean())


@dataclass
class TrainedModel:
    spec: ModelSpec
    model: MosPredictor
    freezing_map: dict[str, bool]
    provenance: dict

    @property
    def architecture(self) -> Architecture:
        return self.spec.architecture


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer is Optimizer.ADAM:
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=0.0)


def predict(model: MosPredictor, data: PreparedSet, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for batch in iter_batches(data, batch_size):
            pred, _ = model(batch)
            out.append(pred.double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def _as_prepared(data, model: MosPredictor, mel_cfg: MelConfig, cache: PatchCache | None) -> PreparedSet:
    if isinstance(data, PreparedSet):
        return data
    return prepare(data, mel_cfg, model.needs_patches, model.needs_audio, cache)


def train_step(model: MosPredictor, optimizer: torch.optim.Optimizer, batch) -> float:
    model.train()
    optimizer.zero_grad()
    pred, _ = model(batch)
    loss = torch.nn.functional.l1_loss(pred, batch.target.to(pred.dtype))
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train(
    model_spec: ModelSpec,
    train_data: Manifest | PreparedSet,
    val_data: Manifest | PreparedSet,
    cfg: TrainConfig,
    *,
    model: MosPredictor | None = None,
    mel_cfg: MelConfig = MelConfig(),
    cache: PatchCache | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[TrainedModel, RunRecord]:
    """Train one model instance and return the parameters of its best validation epoch.

    ``model`` lets callers pass a pre-built instance (autoencoder-initialised
    trunk, fusion around a trained w2vMOS); otherwise one is built from the spec
    with ``cfg.seed``. Runs are deterministic given the seed.
    """
    start = time.perf_counter()
    if model is None:
        model = build_model(model_spec, cfg.seed)
    train_set = _as_prepared(train_data, model, mel_cfg, cache)
    val_set = _as_prepared(val_data, model, mel_cfg, cache)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    params = model.trainable_parameters()
    if not params:
        raise ValueError("model has no trainable parameters")
    record = RunRecord(model_id=model_spec.model_id, seed=cfg.seed)
    best_state = {"state": copy.deepcopy(model.state_dict())}

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        optimizer = make_optimizer(params, cfg)
        rng = np.random.default_rng(cfg.seed)

        def train_epoch(epoch: int) -> float:
            total, n = 0.0, 0
            for batch in iter_batches(train_set, cfg.batch_size, rng):
                total += train_step(model, optimizer, batch) * len(batch)
                n += len(batch)
            return total / n

        def validate(epoch: int) -> float:
            loss = l1_loss(predict(model, val_set), val_set.targets)
            if log:
                log(f"{model_spec.model_id} seed={cfg.seed} epoch={epoch} val_l1={loss:.5f}")
            return loss

        def on_improve(epoch: int) -> None:
            best_state["state"] = copy.deepcopy(model.state_dict())

        run_epochs(train_epoch, validate, cfg, on_improve, record)

    model.load_state_dict(best_state["state"])
    model.eval()
    record.seconds = time.perf_counter() - start
    provenance = {
        "train_set": model_spec.train_set,
        "seed": cfg.seed,
        "epochs_run": record.epochs_run,
        "best_epoch": record.best_epoch,
        "stop_reason": record.stop_reason.value,
        "optimizer": cfg.optimizer.value,
        "learning_rate": cfg.learning_rate,
    }
    return TrainedModel(model_spec, model, model.freezing_map(), provenance), record
