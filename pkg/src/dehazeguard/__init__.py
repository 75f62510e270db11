"""Adversarial attacks and adversarial training for a tiny dehazing network."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("dehazeguard")
except PackageNotFoundError:
    __version__ = "uninstalled"

from . import attack, autograd, data, defense, metrics, model
from ._dataset import HazeDataset, read_dataset, write_dataset
from ._errors import (
    ConfigError,
    ContractError,
    DivergenceError,
    FormatError,
    ShapeError,
)
from .attack import AttackConfig, AttackKind, AttackResult, run_attack
from .data import HazeParams, SceneSpec, apply_haze, gen_dataset, render_clear
from .defense import DefenseConfig, DefenseMode, DefenseResult, defend
from .metrics import Distance, MetricsReport, psnr, ssim
from .model import (
    ModelParams,
    TeacherModel,
    TrainConfig,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "AttackConfig",
    "AttackKind",
    "AttackResult",
    "ConfigError",
    "ContractError",
    "DefenseConfig",
    "DefenseMode",
    "DefenseResult",
    "Distance",
    "DivergenceError",
    "FormatError",
    "HazeDataset",
    "HazeParams",
    "MetricsReport",
    "ModelParams",
    "SceneSpec",
    "ShapeError",
    "TeacherModel",
    "TrainConfig",
    "apply_haze",
    "attack",
    "autograd",
    "data",
    "defend",
    "defense",
    "forward",
    "gen_dataset",
    "init_params",
    "load_checkpoint",
    "metrics",
    "model",
    "psnr",
    "read_dataset",
    "render_clear",
    "run_attack",
    "save_checkpoint",
    "ssim",
    "train",
    "write_dataset",
]
