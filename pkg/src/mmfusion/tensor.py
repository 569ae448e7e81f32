"""Dense float64 tensors with reverse-mode gradients and a finite-difference checker.

Every tensor wraps a float64 ndarray.  Ops never mutate their inputs; when an
input was created with ``requires_grad=True`` (or depends on one that was),
the op records a closure that maps the output gradient back onto that input.
Calling :meth:`Tensor.backward` on a scalar result fills ``.grad`` on every
reachable gradient-requiring tensor.

All arithmetic runs in float64.  Narrower dtypes appear only in file storage,
never here.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError

Array = np.ndarray

ACTIVATION_KINDS = ("sigmoid", "relu", "relu6", "hswish")


def as_tensor(value) -> "Tensor":
    """Wrap ``value`` in a Tensor; pass existing tensors through untouched."""
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_links")

    # keep numpy from consuming us in mixed expressions; reflected ops run instead
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, _links: Sequence = ()):
        if isinstance(data, Tensor):
            data = data.data
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self._links = tuple(_links)
        self.requires_grad = bool(requires_grad) or bool(self._links)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        """Backpropagate from a scalar, accumulating into ``.grad`` of the leaves."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._links:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, pull in node._links:
                piece = pull(g)
                parent.grad = piece if parent.grad is None else parent.grad + piece

    # arithmetic sugar

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    # shape ops

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.data.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {src} to {shape}") from exc
        if not self.requires_grad:
            return Tensor(data)
        return Tensor(data, _links=[(self, lambda g: g.reshape(src))])

    def transpose_last(self) -> "Tensor":
        """Swap the last two axes."""
        if self.ndim < 2:
            raise ShapeError(f"transpose_last needs rank >= 2, got {self.shape}")
        data = np.swapaxes(self.data, -1, -2)
        if not self.requires_grad:
            return Tensor(data)
        return Tensor(data, _links=[(self, lambda g: np.swapaxes(g, -1, -2))])

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        if not self.requires_grad:
            return Tensor(data)
        src = self.data.shape

        def pull(g: Array) -> Array:
            if axis is None:
                return np.broadcast_to(g, src)
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(a % len(src) for a in axes)
            gg = g
            if not keepdims:
                for a in sorted(axes):
                    gg = np.expand_dims(gg, a)
            return np.broadcast_to(gg, src)

        return Tensor(data, _links=[(self, pull)])

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for a in axes:
                count *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(
        i for i, (gdim, sdim) in enumerate(zip(grad.shape, shape)) if sdim == 1 and gdim != 1
    )
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    if grad.shape != tuple(shape):
        grad = np.asarray(grad).reshape(shape)
    return grad


def _binary(a, b, forward, pull_a, pull_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = forward(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}") from exc
    links = []
    if a.requires_grad:
        links.append((a, lambda g: _unbroadcast(pull_a(g, a.data, b.data), a.data.shape)))
    if b.requires_grad:
        links.append((b, lambda g: _unbroadcast(pull_b(g, a.data, b.data), b.data.shape)))
    return Tensor(data, _links=links)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a,
        b,
        np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def matmul(a, b) -> Tensor:
    """Matrix product; rank >= 2 on both sides, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul cannot broadcast {a.shape} with {b.shape}") from exc
    links = []
    if a.requires_grad:
        links.append(
            (a, lambda g: _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        )
    if b.requires_grad:
        links.append(
            (b, lambda g: _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))
        )
    return Tensor(data, _links=links)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    """Concatenate tensors along ``axis``."""
    ts = [as_tensor(p) for p in parts]
    if not ts:
        raise ShapeError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat got mismatched shapes {[t.shape for t in ts]}") from exc
    ax = axis % data.ndim
    links = []
    start = 0
    for t in ts:
        width = t.data.shape[ax]
        if t.requires_grad:
            window = [slice(None)] * data.ndim
            window[ax] = slice(start, start + width)
            links.append((t, lambda g, w=tuple(window): g[w]))
        start += width
    return Tensor(data, _links=links)


def _elementwise(x: Tensor, out: Array, deriv: Callable[[], Array]) -> Tensor:
    if not x.requires_grad:
        return Tensor(out)
    local = deriv()
    return Tensor(out, _links=[(x, lambda g: g * local)])


def relu(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _elementwise(x, np.maximum(d, 0.0), lambda: (d > 0.0).astype(np.float64))


def relu6(x) -> Tensor:
    """min(max(x, 0), 6): relu clipped at 6."""
    x = as_tensor(x)
    d = x.data
    return _elementwise(
        x,
        np.clip(d, 0.0, 6.0),
        lambda: ((d > 0.0) & (d < 6.0)).astype(np.float64),
    )


def _sigmoid_values(d: Array) -> Array:
    # branch on sign so exp never overflows
    out = np.empty_like(d)
    pos = d >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid_values(x.data)
    return _elementwise(x, s, lambda: s * (1.0 - s))


def hswish(x) -> Tensor:
    """x * relu6(x + 3) / 6: zero below -3, identity above +3."""
    x = as_tensor(x)
    d = x.data
    gate = np.clip(d + 3.0, 0.0, 6.0)
    out = d * gate / 6.0

    def deriv() -> Array:
        inner = ((d > -3.0) & (d < 3.0)).astype(np.float64)
        return gate / 6.0 + d * inner / 6.0

    return _elementwise(x, out, deriv)


_ACTIVATIONS = {"sigmoid": sigmoid, "relu": relu, "relu6": relu6, "hswish": hswish}


def activation(kind: str, x) -> Tensor:
    """Apply one of the named element-wise nonlinearities."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise DomainError(f"unknown activation {kind!r}, expected one of {ACTIVATION_KINDS}")
    return fn(x)


def softmax_rows(m) -> Tensor:
    """Row-wise softmax along the last axis, stabilised by the row max."""
    t = as_tensor(m)
    if t.ndim < 2:
        raise ShapeError(f"softmax_rows needs rank >= 2, got {t.shape}")
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    if not t.requires_grad:
        return Tensor(s)

    def pull(g: Array) -> Array:
        return (g - (g * s).sum(axis=-1, keepdims=True)) * s

    return Tensor(s, _links=[(t, pull)])


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit population variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps < 0.0:
        raise DomainError(f"layer_norm eps must be >= 0, got {eps}")
    d = x.shape[-1] if x.ndim else 0
    if d < 2:
        raise ShapeError(f"layer_norm needs a last axis of size >= 2, got shape {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gain.data * xhat + bias.data
    links = []
    if x.requires_grad:

        def pull_x(g: Array) -> Array:
            dxhat = g * gain.data
            return (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            ) * inv

        links.append((x, pull_x))
    lead = tuple(range(out.ndim - 1))
    if gain.requires_grad:
        links.append((gain, lambda g: (g * xhat).sum(axis=lead) if lead else g * xhat))
    if bias.requires_grad:
        links.append((bias, lambda g: g.sum(axis=lead) if lead else g))
    return Tensor(out, _links=links)


def make_scalar_node(value: float, links: Sequence) -> Tensor:
    """Build a scalar graph node from a precomputed value and pull closures.

    Escape hatch for losses whose stable forward and gradient are easier to
    write directly than to compose from primitives.
    """
    return Tensor(np.float64(value), _links=links)


def grad_check(f, x, h: float = 1e-5, coords: Sequence[int] | None = None) -> float:
    """Compare the analytic gradient of scalar ``f`` at ``x`` against central differences.

    Returns the max over checked coordinates of ``|a - n| / max(1e-8, |a| + |n|)``.
    ``coords`` limits the sweep to a subset of flat indices; by default every
    coordinate is probed.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ShapeError("grad_check needs f to return a scalar tensor")
    center = float(out.data)
    if not np.isfinite(center):
        raise NumericError(f"f(x) is not finite at the evaluation point: {center}")
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    def probe(values: Array) -> float:
        result = f(Tensor(values))
        value = float(result.data)
        if not np.isfinite(value):
            raise NumericError("f(x) is not finite at a perturbed point")
        return value

    flat = x0.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in indices:
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        fp = probe(bumped.reshape(x0.shape))
        bumped[i] = flat[i] - h
        fm = probe(bumped.reshape(x0.shape))
        numeric = (fp - fm) / (2.0 * h)
        a = float(analytic.reshape(-1)[i])
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        if err > worst:
            worst = err
    return worst
