"""The dehazing network, its trainer and its checkpoint format."""

from ._checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from ._network import (
    ARCHITECTURE_FINGERPRINT,
    LAYERS,
    PARAM_SHAPES,
    LayerSpec,
    ModelParams,
    TeacherModel,
    evaluate,
    forward,
    init_params,
    predict,
    zero_params,
)
from ._train import TrainConfig, TrainResult, sgd_step, train

__all__ = [
    "ARCHITECTURE_FINGERPRINT",
    "LAYERS",
    "PARAM_SHAPES",
    "LayerSpec",
    "ModelParams",
    "TeacherModel",
    "TrainConfig",
    "TrainResult",
    "dumps",
    "evaluate",
    "forward",
    "init_params",
    "load_checkpoint",
    "loads",
    "predict",
    "save_checkpoint",
    "sgd_step",
    "train",
    "zero_params",
]
