"""Dense-tensor engine with reverse-mode differentiation.

Supplies exactly the operators the localization network needs: conv2d,
relu, sigmoid, elementwise arithmetic with broadcasting, 2x2 max pooling,
2x nearest-neighbor upsampling, exp/sum/reshape/concat for the soft-argmax
decoder, and the Wing loss. Arrays are float32 by default; building a model
in float64 flows 64-bit through every op (used by the gradient checks).

The graph is recorded dynamically: each op closes over its parents and a
backward function, and ``backward()`` on a scalar walks the nodes once in
reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

from .errors import OddSpatialSize, ShapeMismatch, UnrecordedTensor

_grad_enabled = True
_nan_checks = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_nan_checks(enabled: bool) -> None:
    """Debug hook: verify every forward result is finite."""
    global _nan_checks
    _nan_checks = bool(enabled)


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """An N-d array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar.

        Visits every recorded node exactly once in reverse topological
        order; gradients land in ``.grad`` of tensors with
        ``requires_grad=True``.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if not self._parents:
            raise UnrecordedTensor("tensor was not produced by recorded operations")

        topo: list[Tensor] = []
        visited: set[int] = set()
        in_stack: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                in_stack.discard(id(node))
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            if id(node) in in_stack:
                raise AssertionError("cycle detected in autodiff graph")
            visited.add(id(node))
            in_stack.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if id(parent) in grads:
                    grads[id(parent)] += pg
                else:
                    grads[id(parent)] = pg

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
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=like.data.dtype if like is not None else np.float32)
    return Tensor(arr)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    """Build a result node, recording the backward closure when needed."""
    if _nan_checks and not np.all(np.isfinite(data)):
        raise ArithmeticError("non-finite values produced by a forward op")
    out = Tensor(data)
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = False
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to a broadcast operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data - b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data / b.data

    def backward(g):
        return (
            (a, _unbroadcast(g / b.data, a.data.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        )

    return _make(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def backward(g):
        return ((x, g * (x.data > 0)),)

    return _make(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    v = x.data
    data = np.empty_like(v)
    pos = v >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    data[~pos] = ev / (1.0 + ev)

    def backward(g):
        return ((x, g * data * (1.0 - data)),)

    return _make(data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def backward(g):
        return ((x, g * data),)

    return _make(data, (x,), backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return ((x, np.broadcast_to(g, x.data.shape).copy()),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(gg, x.data.shape).copy()),)

    return _make(np.asarray(data), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        return ((x, g.reshape(x.data.shape)),)

    return _make(data, (x,), backward)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append((t, g[tuple(idx)]))
        return tuple(out)

    return _make(data, tensors, backward)


# Scratch buffers reused across conv calls: repeated large allocations fault
# in fresh pages every iteration and dominate the runtime otherwise. The
# engine is single-threaded per graph, so one buffer per (tag, shape) is safe.
_scratch_pool: dict = {}


def _scratch(tag: str, shape: tuple[int, ...], dtype) -> np.ndarray:
    key = (tag, shape, np.dtype(dtype).str)
    buf = _scratch_pool.get(key)
    if buf is None:
        buf = np.empty(shape, dtype)
        _scratch_pool[key] = buf
    return buf


def _fill_cols(x4: np.ndarray, kh: int, kw: int, ph: int, pw: int, tag: str):
    """Channel-major flat layout plus the k*k shifted copies for the GEMM.

    Returns (mat, lf, hp, wp) with mat of shape (C*kh*kw, lf) such that
    mat[(c,u,v), (b,i,j)] = padded_x[b, c, i+u, j+v] for flat (b,i,j).
    """
    b, c, h, w = x4.shape
    hp, wp = h + 2 * ph, w + 2 * pw
    lf = b * hp * wp
    tail = (kh - 1) * wp + (kw - 1)
    xc = _scratch(tag + ".xc", (c, lf + tail), x4.dtype)
    if tail:
        xc[:, lf:] = 0
    xcv = xc[:, :lf].reshape(c, b, hp, wp)
    if ph or pw:
        xcv[:] = 0
        xcv[:, :, ph : ph + h, pw : pw + w] = x4.transpose(1, 0, 2, 3)
    else:
        xcv[:] = x4.transpose(1, 0, 2, 3)
    if kh == 1 and kw == 1:
        return xc[:, :lf], lf, hp, wp
    cols = _scratch(tag + ".cols", (c * kh * kw, lf), x4.dtype)
    colsv = cols.reshape(c, kh * kw, lf)
    for q in range(kh * kw):
        off = (q // kw) * wp + (q % kw)
        colsv[:, q, :] = xc[:, off : off + lf]
    return cols, lf, hp, wp


def _conv_gemm(x4: np.ndarray, w4: np.ndarray, stride: int, ph: int, pw: int, tag: str) -> np.ndarray:
    """Cross-correlation via one GEMM on flat-offset columns."""
    b = x4.shape[0]
    f, _, kh, kw = w4.shape
    mat, lf, hp, wp = _fill_cols(x4, kh, kw, ph, pw, tag)
    acc = _scratch(tag + ".acc", (f, lf), x4.dtype)
    np.matmul(w4.reshape(f, -1), mat, out=acc)
    full = acc.reshape(f, b, hp, wp)
    sl = full[:, :, : hp - kh + 1 : stride, : wp - kw + 1 : stride]
    # Explicit copy: the result must own its memory (the transpose of the
    # scratch-backed slice can be a contiguous view when B == 1 or F == 1,
    # and ascontiguousarray would alias the reusable buffer).
    out = np.empty((b, f, sl.shape[2], sl.shape[3]), x4.dtype)
    np.copyto(out, sl.transpose(1, 0, 2, 3))
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a (B,C,H,W) input with an (F,C,kh,kw) kernel.

    Output spatial size is floor((H + 2*padding - k) / stride) + 1.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-d input and weight")
    b_, c, h, w_ = x.data.shape
    f, cw, kh, kw = weight.data.shape
    if cw != c:
        raise ShapeMismatch(f"input has {c} channels but weight expects {cw}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if h + 2 * padding < kh or w_ + 2 * padding < kw:
        raise ShapeMismatch("kernel does not fit the padded input")
    if bias is not None and bias.data.shape != (f,):
        raise ShapeMismatch(f"bias must have shape ({f},)")

    out = _conv_gemm(x.data, weight.data, stride, padding, padding, "conv")
    if bias is not None:
        out += bias.data[None, :, None, None]
    ho, wo = out.shape[2], out.shape[3]

    def backward(g):
        g = np.ascontiguousarray(g)
        hp, wp = h + 2 * padding, w_ + 2 * padding
        grads = []
        if weight.requires_grad or weight._parents:
            # dW: GEMM of the scattered output gradient against the columns.
            mat, lf, _, _ = _fill_cols(x.data, kh, kw, padding, padding, "conv")
            gf = _scratch("conv.gflat", (f, lf), g.dtype)
            gfv = gf.reshape(f, b_, hp, wp)
            gfv[:] = 0
            gfv[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride] = g.transpose(1, 0, 2, 3)
            grads.append((weight, (gf @ mat.T).reshape(f, c, kh, kw)))
        if x.requires_grad or x._parents:
            # dx: full correlation of the (dilated) output gradient with the
            # flipped, channel-swapped kernel.
            if stride > 1:
                gd = _scratch("conv.gdil", (b_, f, (ho - 1) * stride + 1, (wo - 1) * stride + 1), g.dtype)
                gd[:] = 0
                gd[:, :, ::stride, ::stride] = g
            else:
                gd = g
            wflip = np.ascontiguousarray(weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            dxp = _conv_gemm(gd, wflip, 1, kh - 1, kw - 1, "conv.dx")
            # Rows/cols of the padded input never covered by a window get zero
            # gradient; then strip the padding.
            dx = np.zeros((b_, c, hp, wp), dtype=g.dtype)
            dx[:, :, : dxp.shape[2], : dxp.shape[3]] = dxp
            if padding:
                dx = np.ascontiguousarray(dx[:, :, padding : padding + h, padding : padding + w_])
            grads.append((x, dx))
        if bias is not None and (bias.requires_grad or bias._parents):
            grads.append((bias, g.sum(axis=(0, 2, 3))))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; records the argmax for backward."""
    if x.data.ndim != 4:
        raise ShapeMismatch("maxpool2 expects a 4-d tensor")
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise OddSpatialSize(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        db = np.zeros((b, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(db, idx[..., None], g[..., None], axis=-1)
        dx = db.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return ((x, dx),)

    return _make(out, (x,), backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Double H and W by nearest-neighbor replication."""
    if x.data.ndim != 4:
        raise ShapeMismatch("upsample_nearest2 expects a 4-d tensor")
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    b, c, h, w = x.data.shape

    def backward(g):
        return ((x, g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))),)

    return _make(data, (x,), backward)


def wing_loss(pred: Tensor, target: Tensor, w: float = 10.0, eps: float = 2.0) -> Tensor:
    """Mean Wing loss over all elements of pred - target.

    Logarithmic for |x| < w, linear beyond: w*ln(1 + |x|/eps) vs |x| - C
    with C = w - w*ln(1 + w/eps), continuous at |x| = w.
    """
    if pred.data.shape != target.data.shape:
        raise ShapeMismatch(f"wing_loss shapes differ: {pred.data.shape} vs {target.data.shape}")
    if w <= 0 or eps <= 0:
        raise ValueError("wing_loss needs w > 0 and eps > 0")
    x = pred.data - target.data
    absx = np.abs(x)
    c = w - w * np.log1p(w / eps)
    small = absx < w
    elem = np.where(small, w * np.log1p(absx / eps), absx - c)
    n = x.size
    data = np.asarray(elem.mean(), dtype=x.dtype)

    def backward(g):
        d = np.where(small, w / (eps + absx), 1.0) * np.sign(x) * (g / n)
        d = d.astype(x.dtype)
        return ((pred, d), (target, -d))

    return _make(data, (pred, target), backward)
