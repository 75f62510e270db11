"""A five-layer dehazing network with a K-estimation output head.

The network predicts a per-pixel map ``K(I)`` and reconstructs the clear image as
``J_p = K * I - K + 1``. The output is left unclamped so gradients reach the
input everywhere; `predict` clamps it for metrics and export.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from dehazeguard import autograd as ag
from dehazeguard._errors import ContractError, ShapeError
from dehazeguard.metrics import DEFAULT_SSIM, MetricsReport
from dehazeguard.util import rng

if TYPE_CHECKING:
    from typing import Iterator, Mapping

    from dehazeguard._dataset import HazeDataset
    from dehazeguard.metrics import SsimConfig

__all__ = [
    "ARCHITECTURE_FINGERPRINT",
    "LAYERS",
    "PARAM_SHAPES",
    "LayerSpec",
    "ModelParams",
    "TeacherModel",
    "evaluate",
    "forward",
    "init_params",
    "predict",
    "zero_params",
]

logger = logging.getLogger(__name__)


class LayerSpec(NamedTuple):
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    # names of the feature maps concatenated (in order) to form the input
    inputs: tuple[str, ...]
    relu: bool = True


LAYERS: tuple[LayerSpec, ...] = (
    LayerSpec("conv1", 3, 8, 3, ("input",)),
    LayerSpec("conv2", 8, 8, 3, ("conv1",)),
    LayerSpec("conv3", 16, 8, 3, ("conv1", "conv2")),
    LayerSpec("conv4", 16, 8, 3, ("conv2", "conv3")),
    LayerSpec("conv5", 24, 3, 3, ("conv2", "conv3", "conv4"), relu=False),
)

# 16 bytes identifying the layer layout, stored in every checkpoint
ARCHITECTURE_FINGERPRINT = hashlib.sha256(
    ";".join(
        f"{s.name}:{s.in_channels}:{s.out_channels}:{s.kernel}:"
        f"{','.join(s.inputs)}:{int(s.relu)}"
        for s in LAYERS
    ).encode()
).digest()[:16]


def _expected_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for s in LAYERS:
        shapes[f"{s.name}.weight"] = (s.out_channels, s.in_channels, s.kernel, s.kernel)
        shapes[f"{s.name}.bias"] = (s.out_channels,)
    return shapes


PARAM_SHAPES = _expected_shapes()


@dataclass
class ModelParams:
    """Named float32 weight and bias arrays for every layer in `LAYERS`."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if list(self.arrays) != list(PARAM_SHAPES):
            # keep the canonical order regardless of how the mapping was built
            if set(self.arrays) != set(PARAM_SHAPES):
                missing = sorted(set(PARAM_SHAPES) - set(self.arrays))
                extra = sorted(set(self.arrays) - set(PARAM_SHAPES))
                raise ShapeError(f"parameter names differ: {missing=}, {extra=}")
            self.arrays = {k: self.arrays[k] for k in PARAM_SHAPES}
        for name, expected in PARAM_SHAPES.items():
            arr = self.arrays[name]
            if arr.shape != expected:
                raise ShapeError(f"{name} must have shape {expected}, got {arr.shape}")
            if arr.dtype != np.float32:
                self.arrays[name] = arr.astype(np.float32)

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.arrays.items()

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> ModelParams:
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def tensors(self, requires_grad: bool = False) -> dict[str, ag.Tensor]:
        """Wrap copies of the arrays as tensors (leaves of a new graph)."""
        return {
            k: ag.Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()
        }

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, ag.Tensor]) -> ModelParams:
        return cls({k: t.numpy() for k, t in tensors.items()})

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(a).all()) for a in self.arrays.values())

    def equals(self, other: ModelParams) -> bool:
        """Bitwise equality of every parameter."""
        return all(
            a.tobytes() == other.arrays[k].tobytes() for k, a in self.arrays.items()
        )

    def checksum(self) -> str:
        """SHA-256 hex digest of the serialized checkpoint bytes."""
        from ._checkpoint import dumps

        return hashlib.sha256(dumps(self)).hexdigest()


def zero_params() -> ModelParams:
    """All-zero parameters: ``K == 0``, so the network outputs 1 everywhere."""
    return ModelParams(
        {k: np.zeros(s, dtype=np.float32) for k, s in PARAM_SHAPES.items()}
    )


def init_params(seed: int = 0) -> ModelParams:
    """He-normal weights, zero biases, and a last layer that starts near ``K = 1``.

    With ``K == 1`` the output equals the input, so an untrained network is close
    to the identity map.
    """
    arrays: dict[str, np.ndarray] = {}
    last = LAYERS[-1].name
    for i, spec in enumerate(LAYERS):
        gen = rng(seed, "init", i)
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        shape = PARAM_SHAPES[f"{spec.name}.weight"]
        weight = gen.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        bias = np.zeros(spec.out_channels)
        if spec.name == last:
            weight *= 0.1
            bias += 1.0
        arrays[f"{spec.name}.weight"] = weight.astype(np.float32)
        arrays[f"{spec.name}.bias"] = bias.astype(np.float32)
    return ModelParams(arrays)


def _weights(params: ModelParams | Mapping[str, ag.Tensor]) -> Mapping[str, ag.Tensor]:
    if isinstance(params, ModelParams):
        return params.tensors()
    return params


def forward(
    params: ModelParams | Mapping[str, ag.Tensor], hazy: ag.Tensor | np.ndarray
) -> ag.Tensor:
    """Raw (unclamped) prediction ``J_p = K * I - K + 1`` for a ``(N, 3, H, W)`` batch.

    Parameters
    ----------
    params : ModelParams | Mapping[str, Tensor]
        Either parameter arrays (wrapped without gradients) or tensors, which may
        require gradients when training.
    hazy : Tensor | np.ndarray
        Batch of hazy images in [0, 1].
    """
    x = ag.as_tensor(hazy)
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"forward expects a (N, 3, H, W) batch, got {x.shape}")
    weights = _weights(params)
    features: dict[str, ag.Tensor] = {"input": x}
    for spec in LAYERS:
        sources = [features[name] for name in spec.inputs]
        inp = sources[0] if len(sources) == 1 else ag.concat_channels(*sources)
        out = ag.conv2d(
            inp,
            weights[f"{spec.name}.weight"],
            weights[f"{spec.name}.bias"],
            padding=spec.kernel // 2,
        )
        features[spec.name] = ag.relu(out) if spec.relu else out
    k = features[LAYERS[-1].name]
    return k * x - k + 1.0


def _as_batch(hazy: np.ndarray) -> tuple[np.ndarray, bool]:
    hazy = np.asarray(hazy, dtype=np.float32)
    if hazy.ndim == 3:
        return hazy[None], True
    return hazy, False


def predict(
    params: ModelParams | Mapping[str, ag.Tensor],
    hazy: np.ndarray,
    batch_size: int = 32,
    *,
    clamp: bool = True,
) -> np.ndarray:
    """Batched inference without recording a graph.

    Accepts a single ``(3, H, W)`` image or a ``(N, 3, H, W)`` batch and returns an
    array of the same shape, clamped to [0, 1] unless `clamp` is False.
    """
    batch, single = _as_batch(hazy)
    weights = {k: t.detach() for k, t in _weights(params).items()}
    chunks = [
        forward(weights, batch[i : i + batch_size]).data
        for i in range(0, len(batch), max(1, batch_size))
    ]
    out = np.concatenate(chunks) if chunks else np.empty_like(batch)
    if clamp:
        out = np.clip(out, 0, 1)
    return out[0] if single else out


def evaluate(
    params: ModelParams,
    dataset: HazeDataset,
    cfg: SsimConfig = DEFAULT_SSIM,
    batch_size: int = 32,
) -> MetricsReport:
    """Per-image clean PSNR / SSIM / MSE of the clamped prediction against ``J``."""
    predictions = predict(params, dataset.hazy, batch_size)
    report = MetricsReport.from_pairs(
        range(len(dataset)),
        predictions,
        dataset.clear,
        cfg,
        {"checksum": params.checksum()},
    )
    logger.debug(f"evaluated {len(dataset)} images: {report.aggregate()['psnr_db']}")
    return report


@dataclass(frozen=True)
class TeacherModel:
    """A read-only snapshot of parameters used to produce pseudo-labels."""

    params: ModelParams
    checksum: str = ""

    @classmethod
    def freeze(cls, params: ModelParams) -> TeacherModel:
        snapshot = params.copy()
        for arr in snapshot.arrays.values():
            arr.flags.writeable = False
        return cls(snapshot, snapshot.checksum())

    def __call__(self, hazy: np.ndarray) -> np.ndarray:
        """Raw teacher prediction ``J_p^T`` (unclamped)."""
        return predict(self.params, hazy, clamp=False)

    def verify(self) -> None:
        """Raise if the snapshot no longer matches the checksum taken at freeze time."""
        if self.params.checksum() != self.checksum:
            raise ContractError("teacher parameters changed after being frozen")
