from .autoencoder import AePretrainConfig, PatchAutoencoder, PretrainedEncoder, load_encoder, pretrain_autoencoder
from .dataset import PreparedSet, collate, iter_batches, prepare
from .loop import (
    EarlyStopping,
    Optimizer,
    RunRecord,
    StopReason,
    TrainConfig,
    TrainedModel,
    l1_loss,
    predict,
    run_epochs,
    train,
    train_step,
)
from .matrix import MatrixResult, RunFailure, run_matrix

__all__ = [
    "AePretrainConfig",
    "EarlyStopping",
    "MatrixResult",
    "Optimizer",
    "PatchAutoencoder",
    "PreparedSet",
    "PretrainedEncoder",
    "RunFailure",
    "RunRecord",
    "StopReason",
    "TrainConfig",
    "TrainedModel",
    "collate",
    "iter_batches",
    "l1_loss",
    "load_encoder",
    "predict",
    "prepare",
    "pretrain_autoencoder",
    "run_epochs",
    "run_matrix",
    "train",
    "train_step",
]
