"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable value is a :class:`Tensor` wrapping a numpy array.  An
operation on tensors that require gradients records its parents and a local
gradient rule; :func:`backward` walks the recorded graph once in reverse
topological order and accumulates gradients into the leaves.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_recording = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording a graph (inference only)."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class Tensor:
    """An n-dimensional real array that can take part in a recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: GradFn | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf tensor with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    # Python scalars adopt the dtype of the tensor operand.
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn: GradFn, op: str) -> Tensor:
    out = Tensor(data)
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    out.op = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "add")

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "sub")

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "mul")

    def grad_fn(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a, b, "div")

    def grad_fn(g):
        return (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(a.data / b.data, (a, b), grad_fn, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a constant scalar."""
    f = a.dtype.type(factor)
    return _make(a.data * f, (a,), lambda g: (g * f,), "scale")


def power(a: Tensor, exponent: float) -> Tensor:
    p = a.dtype.type(exponent)

    def grad_fn(g):
        return (g * p * a.data ** (p - 1),)

    return _make(a.data**p, (a,), grad_fn, "power")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g * 0.5 / y,), "sqrt")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


# ----------------------------------------------------------------------------
# activations


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def tanh_act(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


tanh = tanh_act


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), grad_fn, "softmax")


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a matrix, stabilised by per-row max subtraction."""
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
    return softmax(x, axis=-1)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)

    def grad_fn(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), grad_fn, "log_softmax")


# ----------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching rules for leading dimensions."""
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None

    def grad_fn(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), grad_fn, "matmul")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, grad_fn, "concat")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take(a: Tensor, idx) -> Tensor:
    """Indexing (``a[idx]``); gradients scatter back, summing repeated positions."""
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), grad_fn, "slice")


slice_ = take


def pad_last(a: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    if left == 0 and right == 0:
        return a
    widths = [(0, 0)] * (a.ndim - 1) + [(left, right)]
    n = a.shape[-1]
    return _make(np.pad(a.data, widths), (a,), lambda g: (g[..., left : left + n],), "pad")


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), grad_fn, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(reduce_sum(a, axis, keepdims), 1.0 / count)


def reduce_max(a: Tensor, axis: int = -1) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    arg = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (a,), grad_fn, "max")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Broadcast-add a bias vector along the last axis of ``x``."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[-1]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not match rows of width {x.shape[-1]}")
    return add(x, bias)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(labels.shape[0]), labels] = 1
    return scale(reduce_sum(mul(log_softmax(logits), Tensor(onehot))), -1.0 / labels.shape[0])


# ----------------------------------------------------------------------------
# reverse pass


class Tape:
    """The recorded operations behind one output, in topological order.

    ``nodes`` lists every tensor reachable from the output that requires a
    gradient; each node appears after all of its inputs.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = _toposort(output)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor | None = None) -> list[Tensor]:
        """Accumulate d(output)/d(leaf) into every leaf; return the visit order."""
        if loss is not None and loss is not self.output:
            raise ContractError("loss was not produced on this tape")
        out = self.output
        if out.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {out.shape}")
        visited: list[Tensor] = []
        if not out.requires_grad:
            return visited
        grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            visited.append(node)
            if g is None:
                continue
            if node._grad_fn is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return visited


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; recursion would overflow on long unrolled sequences
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, tape: Tape | None = None) -> Tape:
    """Back-propagate from a scalar ``loss`` into every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = Tape(loss)
    tape.backward(loss)
    return tape


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
