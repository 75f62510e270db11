"""Tensor and tape: the data structures behind reverse-mode differentiation."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from dehazeguard._errors import ContractError

if TYPE_CHECKING:
    from typing import Any, Callable, Sequence

    import numpy.typing as npt

    # maps the upstream gradient to one gradient (or None) per parent
    BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

logger = logging.getLogger(__name__)


class _Counter:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._value = 0

    def increment(self) -> None:
        with self._lock:
            self._value += 1

    @property
    def value(self) -> int:
        return self._value


_BACKWARD_CALLS = _Counter()


def backward_calls() -> int:
    """Return the number of backward passes run in this process so far."""
    return _BACKWARD_CALLS.value


@dataclass(frozen=True)
class _Node:
    name: str
    parents: tuple[Tensor, ...]
    rule: BackwardRule


class Tensor:
    """A dense array that can take part in reverse-mode differentiation.

    Images are laid out as ``(N, C, H, W)``. Reductions (losses) produce 0-d tensors.

    Parameters
    ----------
    data : array_like
        Values to copy into the tensor.
    requires_grad : bool
        Whether `backward` should populate `grad` for this tensor when it is a leaf.
    dtype : DTypeLike
        Floating point type of the stored values. Model math uses float32; gradient
        checks use float64.
    """

    __slots__ = ("_node", "data", "grad", "requires_grad")

    def __init__(
        self,
        data: npt.ArrayLike,
        *,
        requires_grad: bool = False,
        dtype: npt.DTypeLike = np.float32,
    ) -> None:
        self.data: np.ndarray = np.array(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: tuple[Tensor, ...],
        rule: BackwardRule,
        name: str,
    ) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        # nothing upstream needs a gradient: don't keep the graph alive
        out._node = _Node(name, parents, rule) if out.requires_grad else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs one element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def detach(self) -> Tensor:
        """Return a leaf tensor sharing no graph with this one."""
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar, implemented in _ops

    def __add__(self, other: Tensor | float) -> Tensor:
        from ._ops import add, add_scalar

        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other: Tensor | float) -> Tensor:
        from ._ops import add_scalar, sub

        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other: float) -> Tensor:
        from ._ops import add_scalar, scale

        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other: Tensor | float) -> Tensor:
        from ._ops import mul, scale

        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Tensor | float) -> Tensor:
        from ._ops import div, scale

        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        from ._ops import scale

        return scale(self, -1.0)


@dataclass
class Tape:
    """Operations recorded between the leaves and a loss, in topological order.

    Every tensor appears after all of its parents. Build one with `Tape.from_loss`.
    """

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; deep graphs would overflow the recursion limit
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for parent in reversed(tensor._node.parents):
                    if parent.requires_grad and id(parent) not in seen:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(node) from `loss` down to every leaf on the tape."""
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for tensor in reversed(self.nodes):
            upstream = grads.pop(id(tensor), None)
            if upstream is None:
                continue
            node = tensor._node
            if node is None:
                if tensor.requires_grad:
                    tensor.grad = (
                        upstream if tensor.grad is None else tensor.grad + upstream
                    )
                continue
            for parent, grad in zip(node.parents, node.rule(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                grad = grad.astype(parent.data.dtype, copy=False)
                if (prev := grads.get(id(parent))) is not None:
                    grads[id(parent)] = prev + grad
                else:
                    grads[id(parent)] = grad
        self.nodes.clear()


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf that `loss` depends on.

    Raises
    ------
    ContractError
        If `loss` is not a single element, or nothing it depends on requires a
        gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    tape = Tape.from_loss(loss)
    logger.debug(f"backward over {len(tape)} recorded tensors")
    _BACKWARD_CALLS.increment()
    tape.backward(loss)


def as_tensor(value: Any, dtype: npt.DTypeLike = np.float32) -> Tensor:
    """Return `value` unchanged if it is a Tensor, otherwise wrap it (no grad)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)
