"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` set records its
operands and a vector-Jacobian rule on the result.  :func:`backward` sorts
the recorded operations topologically and replays the rules once each, in
reverse order.  Only what the MLPs in this package need is supported:
matrix products, bias broadcasting, ReLU, feature concatenation, row
selection, softmax cross-entropy and gradient reversal.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, LabelError, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """An n-dimensional float64 array that can take part in a graph."""

    __array_priority__ = 100  # keep ndarray @ Tensor from hijacking dispatch

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = ""

    # -- construction helpers -------------------------------------------
    @classmethod
    def _result(cls, data, parents: tuple, vjp, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basic properties -----------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Return a graph-free tensor sharing this tensor's values."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self) -> "Tensor":
        return relu(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def rows(self, index) -> "Tensor":
        return take_rows(self, index)

    def backward(self) -> None:
        backward(self)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_scalar(value) -> float:
    if isinstance(value, Tensor) or np.ndim(value) != 0:
        raise DimensionError("scale factor must be a plain scalar")
    return float(value)


# -- operations -------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._result(a.data @ b.data, (a, b), vjp, "matmul")


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a row vector broadcast over rows."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        c = float(b)
        return Tensor._result(a.data + c, (a,), lambda g: (g,), "add_scalar")
    b = _as_tensor(b)
    if a.shape == b.shape:
        return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:

        def vjp(g):
            return g, (g.sum(axis=0) if b.requires_grad else None)

        return Tensor._result(a.data + b.data, (a, b), vjp, "add_bias")
    raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add(a, -float(b))
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}")
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(a: Tensor, c) -> Tensor:
    a = _as_tensor(a)
    c = _check_scalar(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of equal-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def vjp(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return Tensor._result(a.data * b.data, (a, b), vjp, "mul")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return Tensor._result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Join tensors along the last (feature) axis."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    lead = tensors[0].shape[:-1]
    for t in tensors:
        if t.ndim != tensors[0].ndim or t.shape[:-1] != lead:
            raise DimensionError(
                "concat shapes disagree off the feature axis: "
                + ", ".join(str(u.shape) for u in tensors))
    widths = [t.shape[-1] for t in tensors]
    edges = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[..., edges[i]:edges[i + 1]] if t.requires_grad else None
                     for i, t in enumerate(tensors))

    data = np.concatenate([t.data for t in tensors], axis=-1)
    return Tensor._result(data, tensors, vjp, "concat")


def take_rows(x: Tensor, index) -> Tensor:
    """Select rows of a matrix; the backward pass scatters gradients back."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.intp)

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(x.data[index], (x,), vjp, "take_rows")


def tensor_sum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return Tensor._result(np.asarray(x.data.sum()), (x,),
                          lambda g: (np.full(shape, float(g)),), "sum")


def mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.size == 0:
        raise DimensionError("mean of an empty tensor")
    return scale(tensor_sum(x), 1.0 / x.size)


def gradient_reversal(x: Tensor) -> Tensor:
    """Identity on the way forward, negated gradient on the way back."""
    x = _as_tensor(x)
    return Tensor._result(x.data, (x,), lambda g: (-g,), "grad_reverse")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[i, labels[i]]``."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be n x C, got shape {logits.shape}")
    n, n_classes = logits.shape
    if n < 1:
        raise DimensionError("softmax_cross_entropy needs at least one row")
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} logit rows")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise LabelError("labels must be integers")
        labels = labels.astype(np.intp)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("non-finite logits")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(log_norm - shifted[rows, labels])

    def vjp(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (float(g) / n),)

    return Tensor._result(np.asarray(loss), (logits,), vjp, "softmax_xent")


# -- differentiation --------------------------------------------------------
def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every grad leaf.

    Intermediate gradients live only for the duration of the call, so two
    calls without clearing leaf gradients add up exactly.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
