from .base import Architecture, Batch, MosPredictor
from .build import ModelSpec, ParameterCount, build_model, count_parameters
from .convmaxpool import ConvMaxPool, ConvMaxPoolConfig, ConvMaxPoolTrunk
from .fusion import Fusion, FusionConfig, FusionVariant
from .layers import FramewiseCnn, FramewiseCnnConfig, range_head
from .nisqa import Nisqa, NisqaHeadConfig
from .ops import (
    convmaxpool_forward,
    framewise_cnn_forward,
    fusion_forward,
    gap,
    nisqa_forward,
    single_batch,
    w2vmos_forward,
)
from .ssl import (
    Backbone,
    BackboneConfig,
    BackboneProvider,
    HuggingFaceWav2Vec2,
    ToyBackbone,
    W2vMos,
    backbone_embed,
    build_backbone,
    register_ssl_provider,
)

__all__ = [
    "Architecture",
    "Backbone",
    "BackboneConfig",
    "BackboneProvider",
    "Batch",
    "ConvMaxPool",
    "ConvMaxPoolConfig",
    "ConvMaxPoolTrunk",
    "FramewiseCnn",
    "FramewiseCnnConfig",
    "Fusion",
    "FusionConfig",
    "FusionVariant",
    "HuggingFaceWav2Vec2",
    "ModelSpec",
    "MosPredictor",
    "Nisqa",
    "NisqaHeadConfig",
    "ParameterCount",
    "ToyBackbone",
    "W2vMos",
    "backbone_embed",
    "build_backbone",
    "build_model",
    "convmaxpool_forward",
    "count_parameters",
    "framewise_cnn_forward",
    "fusion_forward",
    "gap",
    "nisqa_forward",
    "range_head",
    "register_ssl_provider",
    "single_batch",
]
