"""
Tensor - dense array with reverse-mode automatic differentiation.
"""

from __future__ import annotations

import contextlib
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import GraphError, NumericalError

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]

_default_dtype: np.dtype = np.dtype(np.float32)


def set_default_dtype(dtype: Any) -> None:
    """
    Set the floating dtype used for new tensors.

    Args:
        dtype: np.float32 (default) or np.float64 (verification mode)
    """
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported tensor dtype {dtype}")
    _default_dtype = dtype


def get_default_dtype() -> np.dtype:
    """Get the floating dtype used for new tensors."""
    return _default_dtype


@contextlib.contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """
    Temporarily switch the default tensor dtype.

    Example:
        with precision(np.float64):
            assert gradcheck(fn, inputs)
    """
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement forward() on raw arrays and backward() returning one
    gradient array (or None) per input tensor.
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors
        self.consumed = False

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        """
        Run the forward pass and wrap the result in a graph node.

        Args:
            *tensors: Input tensors
            **kwargs: Operation options passed to forward()

        Returns:
            Output tensor; it records this function when any input requires grad

        Raises:
            NumericalError: Finite inputs produced a NaN or inf
        """
        func = cls(*tensors)
        out = func.forward(*(t.data for t in tensors), **kwargs)
        out = np.asarray(out)
        if not np.all(np.isfinite(out)) and all(np.all(np.isfinite(t.data)) for t in tensors):
            raise NumericalError(f"{cls.__name__} produced a non-finite value from finite inputs")
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor._from_op(out, func if requires_grad else None, requires_grad)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """
        Sum out broadcast dimensions so grad matches shape.

        Args:
            grad: Gradient with the broadcast (output) shape
            shape: Shape of the original input

        Returns:
            Gradient reduced to shape
        """
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Graph:
    """
    Topologically ordered record of the ops that produced a root tensor.

    Nodes are listed so every tensor appears after all of its inputs;
    run() walks them in reverse, visiting each node exactly once.
    """

    def __init__(self, nodes: List["Tensor"]):
        self._nodes = nodes

    @classmethod
    def from_root(cls, root: "Tensor") -> "Graph":
        """Collect every tensor reachable from root (iterative DFS)."""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in reversed(node.creator.tensors):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    @property
    def nodes(self) -> List["Tensor"]:
        """Tensors in topological order (inputs first)."""
        return self._nodes

    def run(self, seed: np.ndarray) -> None:
        """
        Propagate seed from the root back to every leaf.

        Leaf gradients accumulate into Tensor.grad; interior gradients are
        dropped once consumed. Each op is released after use.
        """
        root = self._nodes[-1]
        grads: Dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self._nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            func = node.creator
            if func is None:
                node._accumulate(grad)
                continue
            if func.consumed:
                raise GraphError(f"{type(func).__name__} was consumed by an earlier backward()")
            input_grads = func.backward(grad)
            for parent, g in zip(func.tensors, input_grads):
                if g is None or not parent.requires_grad:
                    continue
                g = Function.unbroadcast(np.asarray(g), parent.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
            func.consumed = True
            func.tensors = tuple(
                t if t.creator is None else t._detached_stub() for t in func.tensors
            )


class Tensor:
    """
    Dense n-dimensional array with optional gradient tracking.

    Feature maps are channels-last with a leading batch axis: [B, H, W, C].
    """

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype: Any = None):
        """
        Initialize a leaf tensor.

        Args:
            data: Array-like values; converted to the default dtype unless given
            requires_grad: Whether backward() should populate grad
            dtype: Explicit dtype override
        """
        self.data = np.array(data, dtype=_default_dtype if dtype is None else dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator: Optional[Function] = None
        self.name: Optional[str] = None

    @classmethod
    def _from_op(
        cls, data: np.ndarray, creator: Optional[Function], requires_grad: bool
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.creator = creator
        out.name = None
        return out

    def _detached_stub(self) -> "Tensor":
        return Tensor._from_op(self.data, None, False)

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = grad.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = np.array(grad, copy=True)
        else:
            self.grad = self.grad + grad

    # -------------------------------------------------------------------------
    # Autograd
    # -------------------------------------------------------------------------

    def backward(self) -> None:
        """
        Populate grad on every requires_grad leaf that feeds this scalar.

        Raises:
            GraphError: Tensor is not a scalar, or its graph was already consumed
        """
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self.creator is not None and self.creator.consumed:
            raise GraphError("graph already consumed by a previous backward()")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor that requires grad")
        Graph.from_root(self).run(np.ones_like(self.data))

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def detach(self) -> "Tensor":
        """Return a leaf sharing data but cut from the graph."""
        return Tensor._from_op(self.data, None, False)

    # -------------------------------------------------------------------------
    # Properties
    # -------------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        """Extents of each axis."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of axes."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Total element count."""
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        """Element dtype."""
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        """True when the tensor was not produced by a recorded op."""
        return self.creator is None

    def numpy(self) -> np.ndarray:
        """Underlying array (no copy)."""
        return self.data

    def item(self) -> float:
        """Value of a one-element tensor as a Python float."""
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -------------------------------------------------------------------------
    # Operator sugar (implemented in ops)
    # -------------------------------------------------------------------------

    def __add__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        from . import ops
        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        from . import ops
        return ops.slice_(self, index)

    def reshape(self, *shape: Any) -> "Tensor":
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.reduce("sum", self, axis, keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.reduce("mean", self, axis, keepdims)

    def max(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.reduce("max", self, axis, keepdims)


def as_tensor(value: Any, like: Optional[Tensor] = None) -> Tensor:
    """
    Wrap a constant as a tensor.

    Constants take the dtype of `like` so mixing a scalar with a 32-bit tensor
    does not promote the result to 64 bits.
    """
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False, dtype=dtype)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Create a trainable leaf tensor (arrays already in the default dtype are not copied)."""
    t = Tensor._from_op(np.asarray(data, dtype=_default_dtype), None, True)
    t.name = name
    return t
