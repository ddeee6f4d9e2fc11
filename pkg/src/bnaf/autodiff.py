"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor requiring gradients records its inputs
and a backward closure on the output. ``backward(root)`` walks the recorded
graph in reverse topological order and leaves ``.grad`` on every leaf that
requires gradients. Graphs are built per forward pass and released after
backward.

Broadcasting is deliberately absent: binary operations accept either equal
shapes or one scalar-shaped (``()``) operand. Anything else must be tiled with
:func:`broadcast_to` first.
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, DomainError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
Axis = Union[None, int, Tuple[int, ...]]


class Tensor:
    """An immutable float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "__weakref__")
    # make numpy scalars defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: Tuple["Tensor", ...] = (), backward: Optional[Callable] = None,
                 copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=copy or None)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents = parents
        self._backward = backward

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    # Only record the tape when some input needs gradients.
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, op=op, parents=parents, backward=backward, copy=False)
    return Tensor(data, op=op, copy=False)


# ---------------------------------------------------------------------------
# elementwise binary ops (equal shapes or scalar-with-tensor)


def _check_binary(a: Tensor, b: Tensor, name: str) -> Tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if a.shape == ():
        return b.shape
    if b.shape == ():
        return a.shape
    raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ and neither is scalar")


def _fit(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # Undo the scalar-with-tensor expansion.
    return grad.sum() if shape == () and grad.shape != () else grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")

    def backward(g):
        return _fit(g, a.shape), _fit(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")

    def backward(g):
        return _fit(g, a.shape), _fit(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")

    def backward(g):
        return _fit(g * b.data, a.shape), _fit(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def backward(g):
        return _fit(g / b.data, a.shape), _fit(-g * out / b.data, b.shape)

    return _node(out, (a, b), backward, "div")


def logaddexp(a: ArrayLike, b: ArrayLike) -> Tensor:
    """``log(exp(a) + exp(b))`` without overflow."""
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "logaddexp")
    out = np.logaddexp(a.data, b.data)

    def backward(g):
        return _fit(g * np.exp(a.data - out), a.shape), _fit(g * np.exp(b.data - out), b.shape)

    return _node(out, (a, b), backward, "logaddexp")


# ---------------------------------------------------------------------------
# elementwise unary ops


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: input has non-positive entries")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt: input has negative entries")
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise ContractError("power: exponent must be a Python number")
    p = float(exponent)
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sin(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _node(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


# ---------------------------------------------------------------------------
# linear algebra and shape plumbing


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: ArrayLike) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose: need at least 2 dims, got shape {a.shape}")
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def index_select(a: ArrayLike, index) -> Tensor:
    """Basic or advanced numpy indexing; the backward pass scatter-adds."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        raise ContractError("index_select: index must be an int, slice or integer array")
    out = a.data[index]

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _node(out, (a,), backward, "index")


def broadcast_to(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style tiling; the only way to combine unequal shapes."""
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: cannot tile {a.shape} to {shape}") from exc
    lead = len(shape) - a.ndim
    stretched = tuple(i + lead for i, n in enumerate(a.shape) if n == 1 and shape[i + lead] != 1)

    def backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        if stretched:
            g = g.sum(axis=tuple(i - lead for i in stretched), keepdims=True)
        return (g,)

    return _node(out, (a,), backward, "broadcast")


def concatenate(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concatenate: incompatible shapes {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(ts), backward, "concatenate")


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} is out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def _expand(g: np.ndarray, axes: Tuple[int, ...], keepdims: bool) -> np.ndarray:
    return g if keepdims else np.expand_dims(g, axes)


def reduce_sum(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes):
        raise DomainError(f"sum: empty reduction axis in shape {a.shape}")

    def backward(g):
        return (np.broadcast_to(_expand(g, axes, keepdims), a.shape).copy(),)

    return _node(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def reduce_mean(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes):
        raise DomainError(f"mean: empty reduction axis in shape {a.shape}")
    count = int(np.prod([a.shape[ax] for ax in axes]))

    def backward(g):
        return (np.broadcast_to(_expand(g, axes, keepdims) / count, a.shape).copy(),)

    return _node(a.data.mean(axis=axes, keepdims=keepdims), (a,), backward, "mean")


def logsumexp(a: ArrayLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    """``log(sum(exp(a)))`` along ``axis``, shifted by the slice maximum."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes):
        raise DomainError(f"logsumexp: empty reduction axis in shape {a.shape}")
    shift = a.data.max(axis=axes, keepdims=True)
    kept = shift + np.log(np.exp(a.data - shift).sum(axis=axes, keepdims=True))
    out = kept if keepdims else np.squeeze(kept, axis=axes)

    def backward(g):
        return (_expand(g, axes, keepdims) * np.exp(a.data - kept),)

    return _node(out, (a,), backward, "logsumexp")


# ---------------------------------------------------------------------------
# reverse pass


class Graph:
    """The recorded computation reachable from ``root``, in topological order.

    ``nodes[i]`` only depends on nodes with smaller indices; ``adjoints`` is
    filled by :meth:`backward` and keyed by node position.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = _toposort(root)
        self.index = {id(n): i for i, n in enumerate(self.nodes)}
        self.adjoints: dict = {}

    def inputs(self, i: int) -> list:
        return [self.index[id(p)] for p in self.nodes[i]._parents]

    def leaves(self) -> list:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def backward(self, free: bool = True) -> dict:
        """Propagate adjoints from the root; returns ``{leaf: gradient}``."""
        if self.root.shape != ():
            raise ContractError(f"backward needs a scalar root, got shape {self.root.shape}")
        adj = self.adjoints
        adj.clear()
        adj[len(self.nodes) - 1] = np.ones(())
        for i in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[i]
            g = adj.get(i)
            if g is None or node.is_leaf:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                j = self.index[id(parent)]
                adj[j] = adj[j] + pg if j in adj else np.asarray(pg, dtype=np.float64)
        grads = {}
        for i, node in enumerate(self.nodes):
            if node.is_leaf and node.requires_grad:
                g = adj.get(i, np.zeros(node.shape))
                node.grad = np.array(g, dtype=np.float64).reshape(node.shape)
                grads[node] = node.grad
        if free:
            for node in self.nodes:
                if not node.is_leaf:
                    node._parents, node._backward = (), None
        return grads


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict:
    """Populate ``.grad`` on every leaf reachable from the scalar ``root``."""
    if not isinstance(root, Tensor):
        raise ContractError("backward expects a Tensor")
    if root.shape != ():
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    return Graph(root).backward()


def grad(root: Tensor, leaves: Iterable[Tensor]) -> list:
    """Gradients of ``root`` with respect to ``leaves`` (zeros if unreachable)."""
    leaves = list(leaves)
    found = backward(root)
    return [found.get(leaf, np.zeros(leaf.shape)) for leaf in leaves]
