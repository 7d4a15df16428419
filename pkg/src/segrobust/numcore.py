"""Dense float64 tensors with reverse-mode autodiff, plus the two optimizers.

Everything downstream (model, attacks, training) is built on the primitives in
this module. All arithmetic is float64 end to end and every primitive checks
its result for NaN/Inf, so numerical failures surface at the op that produced
them instead of propagating silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_CLAMP = 1e-12  # keeps cross-entropy finite on saturated softmax


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested primitive."""


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite result in op '{op}'")
    return arr


class Tensor:
    """A float64 array node in an implicitly recorded backward graph.

    Tensors are immutable by convention: no op mutates ``data`` in place.
    A tensor participates in gradient recording iff ``requires_grad`` is set
    on it or on any ancestor; constant subtrees carry no backward closures,
    so discarding a graph leaves values bit-identical to plain evaluation.
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, _prev=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = _prev
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    # -- operator sugar -----------------------------------------------------
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

    def backward(self):
        """Reverse-accumulate gradients from this scalar root to every leaf.

        Visits nodes in exact reverse topological order, accumulates exactly
        one gradient per leaf (into ``.grad``), then drops the graph edges so
        the tape cannot be replayed.
        """
        if self.data.size != 1:
            raise ShapeError("backward root must be scalar")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._backward = None
            node._prev = ()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def grad_of(root: Tensor, leaves: list[Tensor]) -> list[np.ndarray]:
    """Run backward from ``root`` and return each leaf's gradient."""
    for leaf in leaves:
        if not leaf.requires_grad:
            raise ValueError("gradient requested for a detached leaf")
        leaf.grad = None
    root.backward()
    out = []
    for leaf in leaves:
        out.append(leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _node(data, op, parents, backward):
    data = _check_finite(np.asarray(data, dtype=np.float64), op)
    tracked = tuple(p for p in parents if p.requires_grad or p._prev)
    if not tracked:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _prev=tracked, _backward=backward)


def _binary_check(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shapes {a.data.shape} vs {b.data.shape}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    # scalar operand broadcast against an array one
    if g.shape != tuple(shape):
        return np.sum(g).reshape(shape)
    return g


# -- elementwise primitives -------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "add")

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    return _node(a.data + b.data, "add", (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "sub")

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(-g, b.data.shape))

    return _node(a.data - b.data, "sub", (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "mul")

    def backward(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    return _node(a.data * b.data, "mul", (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_check(a, b, "div")

    def backward(g):
        _accum(a, _reduce_to(g / b.data, a.data.shape))
        _accum(b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(a.data / b.data, "div", (a, b), backward)


def neg(a):
    a = as_tensor(a)

    def backward(g):
        _accum(a, -g)

    return _node(-a.data, "neg", (a,), backward)


def log(a):
    """Natural log with the input clamped at LOG_CLAMP."""
    a = as_tensor(a)
    clamped = np.maximum(a.data, LOG_CLAMP)

    def backward(g):
        _accum(a, np.where(a.data > LOG_CLAMP, g / clamped, 0.0))

    return _node(np.log(clamped), "log", (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        _accum(a, g / (2.0 * np.maximum(out, 1e-300)))

    return _node(out, "sqrt", (a,), backward)


def relu(a):
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _node(np.maximum(a.data, 0.0), "relu", (a,), backward)


def sign(a):
    """Elementwise sign; gradient is zero everywhere."""
    a = as_tensor(a)

    def backward(g):
        _accum(a, np.zeros_like(a.data))

    return _node(np.sign(a.data), "sign", (a,), backward)


def clamp(a, lo: float, hi: float):
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        _accum(a, g * inside)

    return _node(np.clip(a.data, lo, hi), "clamp", (a,), backward)


# -- reductions and vector ops ----------------------------------------------

def tsum(a):
    a = as_tensor(a)

    def backward(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _node(np.sum(a.data), "sum", (a,), backward)


def tmean(a):
    a = as_tensor(a)
    n = a.data.size

    def backward(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _node(np.mean(a.data), "mean", (a,), backward)


def dot(a, b):
    """Dot product of the flattened operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.size != b.data.size:
        raise ShapeError(f"dot: sizes {a.data.size} vs {b.data.size}")
    af, bf = a.data.ravel(), b.data.ravel()

    def backward(g):
        _accum(a, (float(g) * bf).reshape(a.data.shape))
        _accum(b, (float(g) * af).reshape(b.data.shape))

    return _node(float(af @ bf), "dot", (a, b), backward)


def l2_norm(a):
    a = as_tensor(a)
    out = float(np.sqrt(np.sum(a.data * a.data)))

    def backward(g):
        _accum(a, float(g) * a.data / max(out, 1e-300))

    return _node(out, "l2_norm", (a,), backward)


# -- spatial primitives ------------------------------------------------------

def _col_view(xp: np.ndarray, ho: int, wo: int, kh: int, kw: int, stride: int):
    s = xp.strides
    shape = (ho, wo, kh, kw, xp.shape[2])
    strides = (s[0] * stride, s[1] * stride, s[0], s[1], s[2])
    return np.lib.stride_tricks.as_strided(xp, shape, strides)


def conv2d(x, w, b, stride: int = 1, padding: int = 0):
    """2-D convolution, channel-last: x (H,W,Cin), w (kh,kw,Cin,Cout), b (Cout,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError("conv2d expects x (H,W,Cin) and w (kh,kw,Cin,Cout)")
    h, wd, cin = x.data.shape
    kh, kw, cin_w, cout = w.data.shape
    if cin != cin_w or b.data.shape != (cout,):
        raise ShapeError(f"conv2d: x channels {cin}, kernel {cin_w}, bias {b.data.shape}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    cols = _col_view(xp, ho, wo, kh, kw, stride).reshape(ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat + b.data).reshape(ho, wo, cout)

    def backward(g):
        g2 = g.reshape(ho * wo, cout)
        _accum(w, (cols.T @ g2).reshape(w.data.shape))
        _accum(b, g2.sum(axis=0))
        gcols = (g2 @ wmat.T).reshape(ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[i:i + ho * stride:stride, j:j + wo * stride:stride, :] += gcols[:, :, i, j, :]
        _accum(x, gxp[padding:padding + h, padding:padding + wd, :])

    return _node(out, "conv2d", (x, w, b), backward)


def upsample_nearest(x, factor: int = 2):
    """Nearest-neighbor upsampling of a (H,W,C) tensor by an integer factor."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError("upsample_nearest expects (H,W,C)")
    h, w, c = x.data.shape
    out = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)

    def backward(g):
        _accum(x, g.reshape(h, factor, w, factor, c).sum(axis=(1, 3)))

    return _node(out, "upsample_nearest", (x,), backward)


def channel_softmax(x):
    """Softmax over the last (channel) axis of a (H,W,C) tensor."""
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        _accum(x, s * (g - np.sum(g * s, axis=-1, keepdims=True)))

    return _node(s, "channel_softmax", (x,), backward)


def concat_channels(a, b):
    """Concatenate two (H,W,*) tensors along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[:2] != b.data.shape[:2]:
        raise ShapeError(f"concat_channels: {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[2]

    def backward(g):
        _accum(a, g[:, :, :ca])
        _accum(b, g[:, :, ca:])

    return _node(np.concatenate([a.data, b.data], axis=2), "concat_channels", (a, b), backward)


# -- optimizers --------------------------------------------------------------

@dataclass
class AdamState:
    """Adam with bias correction; defaults are the usual ones."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One Adam descent update; returns new params, advances the state."""
    if params.shape != grad.shape:
        raise ShapeError(f"adam_step: {params.shape} vs {grad.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mhat = state.m / (1 - state.beta1 ** state.step)
    vhat = state.v / (1 - state.beta2 ** state.step)
    return params - state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class SgdMomentumState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: np.ndarray | None = None


def sgd_momentum_step(state: SgdMomentumState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """velocity <- m*velocity + grad + wd*params; params <- params - lr*velocity."""
    if params.shape != grad.shape:
        raise ShapeError(f"sgd_momentum_step: {params.shape} vs {grad.shape}")
    if state.velocity is None:
        state.velocity = np.zeros_like(params)
    state.velocity = state.momentum * state.velocity + grad + state.weight_decay * params
    return params - state.lr * state.velocity
