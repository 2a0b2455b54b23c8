"""Dual-hop refine-by-feedback classifier and its landmark pretraining head."""

from .landmarks import (
    LandmarkHead,
    LandmarkModel,
    LandmarkTargets,
    decode_landmarks,
    encode_landmarks,
)
from .model import (
    PRESETS,
    Aggregator,
    ArchConfig,
    HopPipeline,
    TapEncoder,
    aggregate,
    encoder_forward,
    hop_forward,
    widen_from,
)
from .training import TrainConfig, hop_loss, predict_proba, pretrain_landmarks, train_hop

__all__ = [
    "PRESETS", "Aggregator", "ArchConfig", "HopPipeline", "LandmarkHead", "LandmarkModel",
    "LandmarkTargets", "TapEncoder", "TrainConfig", "aggregate", "decode_landmarks",
    "encode_landmarks", "encoder_forward", "hop_forward", "hop_loss", "predict_proba",
    "pretrain_landmarks", "train_hop", "widen_from",
]
