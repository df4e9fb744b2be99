"""Dense float64 tensors with a dynamically recorded reverse-mode tape.

Spatial tensors use a channels-last ``H x W x C`` layout. Every op below
builds its output eagerly and, when gradients are enabled and any input
requires them, records a closure mapping the output gradient to input
gradients.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from ordnet.errors import ArgumentError, DimensionError, PartitionError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ArgumentError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)

        order = _topo_order(self)
        grads = {id(self): grad}
        for node in order:
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

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ArgumentError("only division by a Python scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topo_order(root: Tensor) -> list:
    seen = set()
    post: list = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    post.reverse()
    return post


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_broadcast(a: tuple, b: tuple) -> None:
    # equal shapes, scalars, trailing singleton channel (H x W x 1), or suffix (bias)
    if a == b or a == () or b == ():
        return
    if len(a) == len(b) and a[:-1] == b[:-1] and (a[-1] == 1 or b[-1] == 1):
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise DimensionError(f"shapes {a} and {b} are not broadcast-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast numpy-style."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(ad @ bd, (a, b), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (a,), backward)


def mean(a: Tensor) -> Tensor:
    return scale(sum_(a), 1.0 / a.size)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _result(out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    # materialised so later reductions see the same memory order as an explicit copy
    return _result(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def take(a: Tensor, indices) -> Tensor:
    """Gather ``a.flat[indices]``; repeated indices accumulate on backward."""
    idx = np.asarray(indices, dtype=np.int64)
    shape = a.shape

    def backward(g):
        full = np.zeros(int(np.prod(shape)), dtype=np.float64)
        np.add.at(full, idx, g)
        return (full.reshape(shape),)

    return _result(a.data.reshape(-1)[idx], (a,), backward)


# -------------------------------------------------------------- nonlinearity


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "softmax_over_axis": softmax,
    "scale": scale,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
    "log": log,
}


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Named dispatch over the elementwise family (``elementwise("sigmoid", x)``)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ArgumentError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------- spatial


def conv1x1(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Per-position affine map of an ``H x W x C_in`` tensor."""
    if x.ndim != 3 or w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"conv1x1 channel mismatch: input {x.shape}, weight {w.shape}")
    h, wd, _ = x.shape
    y = matmul(reshape(x, (h * wd, x.shape[-1])), w)
    if b is not None:
        y = add(y, b)
    return reshape(y, (h, wd, w.shape[1]))


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the two spatial axes of an ``H x W x C`` tensor."""
    h, w, _ = x.shape
    out = np.pad(x.data, ((top, bottom), (left, right), (0, 0)))
    return _result(out, (x,), lambda g: (g[top:top + h, left:left + w],))


def crop(x: Tensor, h: int, w: int, top: int = 0, left: int = 0) -> Tensor:
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[top:top + h, left:left + w] = g
        return (full,)

    return _result(x.data[top:top + h, left:left + w].copy(), (x,), backward)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; weight layout ``kh x kw x C_in x C_out``.

    Computed as a sum of ``kh*kw`` shifted matmuls, which keeps the backward
    pass to the same number of strided slice-adds.
    """
    if x.ndim != 3 or w.ndim != 4 or x.shape[-1] != w.shape[2]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    kh, kw, cin, cout = w.shape
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    hp, wp, _ = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d input {x.shape} too small for kernel {kh}x{kw}")
    wd = w.data
    out = np.zeros((ho, wo, cout))
    for di in range(kh):
        for dj in range(kw):
            patch = xp[di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride]
            out += patch @ wd[di, dj]
    if b is not None:
        out += b.data
    h, wi = x.shape[:2]

    def backward(g):
        gx = np.zeros_like(xp)
        gw = np.empty_like(wd)
        g2 = g.reshape(ho * wo, cout)
        for di in range(kh):
            for dj in range(kw):
                sl = (slice(di, di + stride * (ho - 1) + 1, stride), slice(dj, dj + stride * (wo - 1) + 1, stride))
                gx[sl] += g @ wd[di, dj].T
                gw[di, dj] = xp[sl].reshape(ho * wo, cin).T @ g2
        gx = gx[padding:padding + h, padding:padding + wi] if padding else gx
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward)


def partition_patches(x: Tensor, p: int, mode: str = "strict") -> Tensor:
    """Split ``H x W x C`` into ``P^2 x H/P x W/P x C``, patches ordered by rows.

    ``mode="pad"`` zero-pads bottom/right up to a multiple of ``p`` first.
    """
    if p < 1:
        raise ArgumentError(f"patch grid must be >= 1, got {p}")
    h, w, c = x.shape
    if h % p or w % p:
        if mode == "strict":
            raise PartitionError(f"extents {h}x{w} are not divisible by patch grid {p}")
        if mode != "pad":
            raise ArgumentError(f"unknown padding mode {mode!r}")
        x = pad2d(x, 0, (-h) % p, 0, (-w) % p)
        h, w = x.shape[:2]
    ph, pw = h // p, w // p
    y = reshape(x, (p, ph, p, pw, c))
    y = transpose(y, (0, 2, 1, 3, 4))
    return reshape(y, (p * p, ph, pw, c))


def reassemble_patches(yp: Tensor, p: int, out_hw: Optional[tuple] = None) -> Tensor:
    """Inverse of :func:`partition_patches`; ``out_hw`` crops away padding."""
    if yp.ndim != 4 or yp.shape[0] != p * p:
        raise PartitionError(f"first extent must be P^2 = {p * p}, got shape {yp.shape}")
    _, ph, pw, c = yp.shape
    y = reshape(yp, (p, p, ph, pw, c))
    y = transpose(y, (0, 2, 1, 3, 4))
    y = reshape(y, (p * ph, p * pw, c))
    if out_hw is not None and tuple(out_hw) != (p * ph, p * pw):
        y = crop(y, out_hw[0], out_hw[1])
    return y


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-center linear interpolation weights, shape ``n_out x n_in``."""
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        lo = min(int(np.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of an ``H x W x C`` tensor (align_corners=False)."""
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"target size must be positive, got {out_h}x{out_w}")
    h, w, _ = x.shape
    if (h, w) == (out_h, out_w):
        return x
    rh = interp_matrix(h, out_h)
    rw = interp_matrix(w, out_w)
    out = np.einsum("ih,hwc,jw->ijc", rh, x.data, rw, optimize=True)
    return _result(out, (x,), lambda g: (np.einsum("ih,ijc,jw->hwc", rh, g, rw, optimize=True),))


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ArgumentError(f"upsampling factor must be >= 1, got {factor}")
    h, w, _ = x.shape
    return resize_bilinear(x, h * factor, w * factor)
