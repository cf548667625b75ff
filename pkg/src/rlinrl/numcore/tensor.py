"""Dense float tensors with tape-based reverse-mode differentiation."""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float32

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording for the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = np.asarray(data, dtype=dtype or DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- backward -------------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` of every leaf on the tape that requires grad."""
        if self.data.size != 1:
            raise TapeError(f"backward needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise TapeError("backward called on a tensor with no recorded tape")
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.data.dtype)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.data.dtype)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.data.dtype)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return Tensor._result(ad * bd, (a, b),
                          lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)), "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.data.dtype)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g / bd, sa), _unbroadcast(-g * ad / (bd * bd), sb)

    return Tensor._result(ad / bd, (a, b), back, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    out = ad ** exponent
    return Tensor._result(out, (a,), lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._result(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def tabs(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split on sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    active = a.data > 0
    return Tensor._result(np.where(active, a.data, 0).astype(a.data.dtype), (a,),
                          lambda g: (g * active,), "relu")


def thresholded_relu(a: Tensor, beta: float) -> Tensor:
    """max(0, (x - beta) / (1 - beta)); beta must lie in [0, 1)."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"thresholded_relu needs beta in [0, 1), got {beta}")
    scale = 1.0 / (1.0 - beta)
    active = a.data > beta
    out = np.where(active, (a.data - beta) * scale, 0).astype(a.data.dtype)
    return Tensor._result(out, (a,), lambda g: (g * active * scale,), "thresholded_relu")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    sa, sb = a.shape, b.shape
    return Tensor._result(np.minimum(a.data, b.data), (a, b),
                          lambda g: (_unbroadcast(g * pick_a, sa), _unbroadcast(g * ~pick_a, sb)),
                          "minimum")


# -- reductions and shape ops ------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return Tensor._result(np.transpose(a.data, axes), (a,),
                          lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        out = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return out

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis),
                          tuple(tensors), back, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    return Tensor._result(ad @ bd, (a, b),
                          lambda g: (g @ bd.T if a.requires_grad else None,
                                     ad.T @ g if b.requires_grad else None), "matmul")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def back(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (a,), back, "log_softmax")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))


# -- spatial ops (NCHW) ------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(w, k, stride, pad)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    # (n, c, ho, wo, k, k) -> (n, ho, wo, c, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding. x: (N,C,H,W), weight: (O,C,k,k)."""
    n, c, h, w = x.shape
    o, ci, k, _ = weight.shape
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = weight.data.reshape(o, ci * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    xdtype = x.data.dtype

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k)
            hp, wp = h + 2 * padding, w + 2 * padding
            gpad = np.zeros((n, c, hp, wp), dtype=xdtype)
            for i in range(k):
                for j in range(k):
                    gpad[:, :, i: i + (ho - 1) * stride + 1: stride,
                         j: j + (wo - 1) * stride + 1: stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gpad[:, :, padding: padding + h, padding: padding + w] if padding else gpad
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return Tensor._result(out, parents, lambda g: back(g)[:2], "conv2d")
    return Tensor._result(out, parents, back, "conv2d")


def upsample2d(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour integer upsampling of an (N,C,H,W) tensor."""
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def back(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor._result(out, (x,), back, "upsample2d")
