"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every :class:`Tensor` wraps a float array (float32 unless a float64 array is
passed in explicitly, which the gradient-check oracles use). Operations on
tensors record their parents and a backward closure; :meth:`Tensor.backward`
walks the recorded graph in reverse topological order.

Gradients are accumulated into ``.grad`` of *leaf* tensors only (tensors that
were not produced by an op). Intermediate gradients live in a temporary table
for the duration of one backward pass, so calling ``backward`` twice on the
same graph adds the same contribution twice.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def record_relu_patterns(sink: list):
    """Append the ``x > 0`` pattern of every relu input evaluated in this thread.

    Finite-difference checks use it to spot perturbations that cross a kink.
    """
    prev = getattr(_state, "relu_sink", None)
    _state.relu_sink = sink
    try:
        yield sink
    finally:
        _state.relu_sink = prev


class ShapeError(ValueError):
    pass


class EmptyLossError(ValueError):
    pass


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, (np.ndarray, np.generic)) and dtype is None and data.dtype in (np.float32, np.float64):
        return np.asarray(data)  # numpy scalars from 0-d arithmetic keep their precision
    return np.asarray(data, dtype=dtype or DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
        out = Tensor(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- elementwise arithmetic -----------------------------------------------

    def __add__(self, other) -> Tensor:
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> Tensor:
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

        return Tensor._make(self.data - other.data, (self, other), backward)

    def __rsub__(self, other) -> Tensor:
        return Tensor(other, dtype=self.dtype) - self

    def __mul__(self, other) -> Tensor:
        if not isinstance(other, Tensor):
            c = other
            return Tensor._make(self.data * c, (self,), lambda g: (g * c,))
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._make(a * b, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if not isinstance(other, Tensor):
            return self * (1.0 / other)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._make(a / b, (self, other), backward)

    def __pow__(self, exponent: float) -> Tensor:
        a = self.data

        def backward(g):
            return (g * exponent * a ** (exponent - 1),)

        return Tensor._make(a**exponent, (self,), backward)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    # -- unary functions ------------------------------------------------------

    def exp(self) -> Tensor:
        y = np.exp(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y,))

    def log(self) -> Tensor:
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def relu(self) -> Tensor:
        x = self.data
        sink = getattr(_state, "relu_sink", None)
        if sink is not None:
            sink.append(x > 0)
        return Tensor._make(np.maximum(x, 0), (self,), lambda g: (g * (x > 0),))

    # -- reductions and shape ops ---------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    @property
    def T(self) -> Tensor:
        return self.transpose()

    def __getitem__(self, index) -> Tensor:
        shape, dtype = self.shape, self.dtype

        def backward(g):
            out = np.zeros(shape, dtype=dtype)
            np.add.at(out, index, g)
            return (out,)

        return Tensor._make(self.data[index], (self,), backward)

    def masked_fill(self, mask: np.ndarray, value: float) -> Tensor:
        """Replace entries where ``mask`` is true; those entries get zero gradient."""
        mask = np.broadcast_to(mask, self.shape)
        keep = ~mask

        return Tensor._make(np.where(mask, value, self.data).astype(self.dtype), (self,), lambda g: (g * keep,))

    # -- autodiff -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topological_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, every node after all of its inputs."""
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
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


# -- functional ops ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, w = a.data, b.data

    def backward(g):
        if w.ndim == 2 and x.ndim > 2:
            # shared weight: fold batch dims instead of materialising per-batch grads
            gx = g @ w.T
            gw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return gx, gw
        gx = _unbroadcast(g @ np.swapaxes(w, -1, -2), x.shape)
        gw = _unbroadcast(np.swapaxes(x, -1, -2) @ g, w.shape)
        return gx, gw

    return Tensor._make(x @ w, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(y, (x,), backward)


def cross_entropy(
    logits: Tensor,
    targets,
    ignore_index: int = -100,
    label_smoothing: float = 0.0,
) -> Tensor:
    """Mean negative log-likelihood over rows whose target is not ``ignore_index``.

    ``logits`` is ``[n, V]`` (leading dims are flattened). With label smoothing
    ``eps`` the target distribution is ``(1 - eps)`` on the gold class plus
    ``eps / V`` spread uniformly.
    """
    v = logits.shape[-1]
    flat = logits.reshape(-1, v) if logits.ndim != 2 else logits
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise ShapeError(f"{t.shape[0]} targets for {flat.shape[0]} logit rows")
    keep = t != ignore_index
    n = int(keep.sum())
    if n == 0:
        raise EmptyLossError("every target row is ignore_index; loss is undefined")
    if np.any(t[keep] < 0) or np.any(t[keep] >= v):
        raise ValueError(f"target id out of range for {v} classes")

    x = flat.data
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.nonzero(keep)[0]
    q = np.zeros_like(x)
    q[rows] = label_smoothing / v
    q[rows, t[rows]] += 1.0 - label_smoothing
    loss = -(q * logp).sum() / n

    def backward(g):
        p = np.exp(logp)
        grad = (p * keep[:, None] - q) * (g / n)
        return (grad.astype(x.dtype, copy=False),)

    return Tensor._make(np.asarray(loss, dtype=x.dtype), (flat,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm affine shape {gain.shape}/{bias.shape} vs input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    w = gain.data
    out = xhat * w + bias.data

    def backward(g):
        gh = g * w
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._make(out, (x, gain, bias), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]``; gradients scatter-add into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    w = weight.data

    def backward(g):
        out = np.zeros_like(w)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, w.shape[1]))
        return (out,)

    return Tensor._make(w[ids], (weight,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)`` at train time."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))
