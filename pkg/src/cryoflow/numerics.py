"""Reverse-mode differentiation engine and the tensor kernels the pipeline needs.

Everything is float64 and CPU-only. A ``Tape`` records executed kernels while
it is active (``with Tape() as tape: ...``); ``backward(tape, loss)`` replays
the record once, in reverse execution order, accumulating ``.grad`` arrays on
every tensor that requires gradients. Kernels are pure functions of their
inputs; evaluating them with no active tape simply skips recording.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, InputError, TapeConsumedError

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed kernels for one backward pass."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._nodes)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._nodes.append((out, backward_fn))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # backward functions hand over freshly built arrays (or broadcast views,
    # which later additions materialize), so storing without copy is safe
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce an upstream gradient back to a broadcast operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate gradients from a scalar loss through the tape, once."""
    if loss.data.size != 1:
        raise InputError(f"loss must be scalar, got shape {loss.data.shape}")
    if tape._consumed:
        raise TapeConsumedError("tape already consumed by a previous backward()")
    tape._consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, backward_fn in reversed(tape._nodes):
        if out.grad is not None:
            backward_fn(out.grad)


# ---------------------------------------------------------------------------
# elementwise / arithmetic kernels
# ---------------------------------------------------------------------------


def _binary(a, b, fwd, bwd_a, bwd_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(fwd(a.data, b.data), a.requires_grad or b.requires_grad)

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(bwd_a(g, a.data, b.data), a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(bwd_b(g, a.data, b.data), b.data.shape))

    _record(out, backward_fn)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def _unary(a, fwd, bwd) -> Tensor:
    a = as_tensor(a)
    y = fwd(a.data)
    out = Tensor(y, a.requires_grad)

    def backward_fn(g):
        _accumulate(a, bwd(g, a.data, y))

    _record(out, backward_fn)
    return out


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda g, x, y: g * y)


def sin(a) -> Tensor:
    return _unary(a, np.sin, lambda g, x, y: g * np.cos(x))


def cos(a) -> Tensor:
    return _unary(a, np.cos, lambda g, x, y: -g * np.sin(x))


def log(a) -> Tensor:
    return _unary(a, np.log, lambda g, x, y: g / x)


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda g, x, y: g * 0.5 / y)


def power(a, p: float) -> Tensor:
    p = float(p)
    return _unary(a, lambda x: x**p, lambda g, x, y: g * p * x ** (p - 1.0))


def absolute(a) -> Tensor:
    return _unary(a, np.abs, lambda g, x, y: g * np.sign(x))


def relu(a) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda g, x, y: g * (x > 0.0))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for x << 0 saturates to inf and 1/inf == 0, the right limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a) -> Tensor:
    return _unary(a, _stable_sigmoid, lambda g, x, y: g * y * (1.0 - y))


def silu(a) -> Tensor:
    """x * sigmoid(x), the smooth activation used throughout the networks."""

    def fwd(x):
        return x * _stable_sigmoid(x)

    def bwd(g, x, y):
        s = _stable_sigmoid(x)
        return g * (s + x * s * (1.0 - s))

    return _unary(a, fwd, bwd)


def atan2(y, x) -> Tensor:
    return _binary(
        y,
        x,
        np.arctan2,
        lambda g, yy, xx: g * xx / (xx * xx + yy * yy),
        lambda g, yy, xx: -g * yy / (xx * xx + yy * yy),
    )


# ---------------------------------------------------------------------------
# shape / indexing kernels
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def backward_fn(g):
        _accumulate(a, g.reshape(old))

    _record(out, backward_fn)
    return out


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    ax = tuple(axes) if axes is not None else tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(ax)
    out = Tensor(a.data.transpose(ax), a.requires_grad)

    def backward_fn(g):
        _accumulate(a, g.transpose(inv))

    _record(out, backward_fn)
    return out


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), any(t.requires_grad for t in ts))
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    _record(out, backward_fn)
    return out


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx], a.requires_grad)

    def backward_fn(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accumulate(a, full)

    _record(out, backward_fn)
    return out


def take_rows(a, indices) -> Tensor:
    """Gather rows (axis 0); scatter-add on the way back."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx], a.requires_grad)

    def backward_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    _record(out, backward_fn)
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in ts], axis=axis), any(t.requires_grad for t in ts))

    def backward_fn(g):
        pieces = np.moveaxis(g, axis, 0)
        for t, piece in zip(ts, pieces):
            if t.requires_grad:
                _accumulate(t, piece)

    _record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def backward_fn(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape))

    _record(out, backward_fn)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def amin(a, axis: int = 0) -> Tensor:
    """Minimum along an axis; subgradient flows to the first argmin."""
    a = as_tensor(a)
    idx = np.argmin(a.data, axis=axis)
    out = Tensor(np.min(a.data, axis=axis), a.requires_grad)

    def backward_fn(g):
        full = np.zeros_like(a.data)
        grid = np.indices(out.data.shape)
        sel = list(grid)
        sel.insert(axis, idx)
        full[tuple(sel)] = g
        _accumulate(a, full)

    _record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# linear algebra kernels
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dims differ: {a.data.shape[1]} vs {b.data.shape[0]} (axis 1 of left operand)"
        )
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    _record(out, backward_fn)
    return out


def dense(x, weights, bias=None) -> Tensor:
    """Affine map: (N, F_in) x (F_out, F_in)^T + bias -> (N, F_out)."""
    x, w = as_tensor(x), as_tensor(weights)
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise DimensionError("dense expects 2-D input and weights")
    if x.data.shape[1] != w.data.shape[1]:
        raise DimensionError(
            f"dense feature dims differ: input has {x.data.shape[1]}, weights expect {w.data.shape[1]} (axis 1)"
        )
    y = x.data @ w.data.T
    b = as_tensor(bias) if bias is not None else None
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise DimensionError(
                f"dense bias shape {b.data.shape} does not match output width {w.data.shape[0]} (axis 0)"
            )
        y = y + b.data
    out = Tensor(y, x.requires_grad or w.requires_grad or (b is not None and b.requires_grad))

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data)
        if w.requires_grad:
            _accumulate(w, g.T @ x.data)
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    _record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# convolution kernels
# ---------------------------------------------------------------------------


def _conv3d_check(x: np.ndarray, k: np.ndarray, stride: int, padding: int, groups: int):
    if x.ndim != 4:
        raise DimensionError(f"conv3d input must be (C, D, H, W), got {x.shape}")
    if k.ndim != 5 or k.shape[2:] != (3, 3, 3):
        raise DimensionError(f"conv3d kernel must be (C_out, C_in/groups, 3, 3, 3), got {k.shape}")
    if stride not in (1, 2):
        raise InputError(f"conv3d stride must be 1 or 2, got {stride}")
    if padding != 1:
        raise InputError(f"conv3d padding must be 1, got {padding}")
    if groups == 1:
        if k.shape[1] != x.shape[0]:
            raise DimensionError(
                f"conv3d channel mismatch: input has {x.shape[0]} channels, kernel expects {k.shape[1]} (axis 1)"
            )
    elif groups == x.shape[0]:
        if k.shape[1] != 1 or k.shape[0] != x.shape[0]:
            raise DimensionError(
                f"depthwise conv3d kernel must be (C, 1, 3, 3, 3) for C={x.shape[0]}, got {k.shape}"
            )
    else:
        raise InputError(f"conv3d groups must be 1 or C_in={x.shape[0]}, got {groups}")


def _out_dim(n: int, padding: int, stride: int) -> int:
    return (n + 2 * padding - 3) // stride + 1


def _im2col(xp: np.ndarray, stride: int, od: int, oh: int, ow: int) -> np.ndarray:
    """(C, Dp, Hp, Wp) padded input -> (C*27, od*oh*ow) column matrix."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3, 3), axis=(1, 2, 3))
    win = win[:, ::stride, ::stride, ::stride]
    c = xp.shape[0]
    return win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c * 27, od * oh * ow)


def conv3d(x, kernel, stride: int = 1, padding: int = 1, groups: int = 1) -> Tensor:
    """3-D convolution with a 3x3x3 kernel.

    ``groups=1`` is a standard dense convolution; ``groups=C_in`` with a
    (C, 1, 3, 3, 3) kernel is the depthwise variant used by the
    ConvNeXt-style blocks.
    """
    x, k = as_tensor(x), as_tensor(kernel)
    _conv3d_check(x.data, k.data, stride, padding, groups)
    c_in, d, h, w = x.data.shape
    od, oh, ow = (_out_dim(n, padding, stride) for n in (d, h, w))
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (padding, padding)))

    if groups == 1:
        c_out = k.data.shape[0]
        cols = _im2col(xp, stride, od, oh, ow)
        y = (k.data.reshape(c_out, c_in * 27) @ cols).reshape(c_out, od, oh, ow)
    else:
        c_out = c_in
        y = np.zeros((c_out, od, oh, ow))
        for i in range(3):
            for j in range(3):
                for l in range(3):
                    sl = xp[
                        :,
                        i : i + stride * (od - 1) + 1 : stride,
                        j : j + stride * (oh - 1) + 1 : stride,
                        l : l + stride * (ow - 1) + 1 : stride,
                    ]
                    y += k.data[:, 0, i, j, l][:, None, None, None] * sl

    out = Tensor(y, x.requires_grad or k.requires_grad)

    def backward_fn(g):
        gflat = g.reshape(c_out, -1)
        if groups == 1:
            if k.requires_grad:
                cols = _im2col(xp, stride, od, oh, ow)
                _accumulate(k, (gflat @ cols.T).reshape(k.data.shape))
            if x.requires_grad:
                dcols = (k.data.reshape(c_out, c_in * 27).T @ gflat).reshape(
                    c_in, 3, 3, 3, od, oh, ow
                )
                dxp = np.zeros_like(xp)
                for i in range(3):
                    for j in range(3):
                        for l in range(3):
                            dxp[
                                :,
                                i : i + stride * (od - 1) + 1 : stride,
                                j : j + stride * (oh - 1) + 1 : stride,
                                l : l + stride * (ow - 1) + 1 : stride,
                            ] += dcols[:, i, j, l]
                _accumulate(x, dxp[:, padding : padding + d, padding : padding + h, padding : padding + w])
        else:
            if k.requires_grad:
                dk = np.zeros_like(k.data)
                for i in range(3):
                    for j in range(3):
                        for l in range(3):
                            sl = xp[
                                :,
                                i : i + stride * (od - 1) + 1 : stride,
                                j : j + stride * (oh - 1) + 1 : stride,
                                l : l + stride * (ow - 1) + 1 : stride,
                            ]
                            dk[:, 0, i, j, l] = np.einsum("cdhw,cdhw->c", g, sl)
                _accumulate(k, dk)
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for i in range(3):
                    for j in range(3):
                        for l in range(3):
                            dxp[
                                :,
                                i : i + stride * (od - 1) + 1 : stride,
                                j : j + stride * (oh - 1) + 1 : stride,
                                l : l + stride * (ow - 1) + 1 : stride,
                            ] += k.data[:, 0, i, j, l][:, None, None, None] * g
                _accumulate(x, dxp[:, padding : padding + d, padding : padding + h, padding : padding + w])

    _record(out, backward_fn)
    return out


def upsample2(a) -> Tensor:
    """Nearest-neighbour x2 upsampling of a (C, D, H, W) tensor."""
    a = as_tensor(a)
    if a.data.ndim != 4:
        raise DimensionError(f"upsample2 expects (C, D, H, W), got {a.data.shape}")
    y = a.data.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)
    out = Tensor(y, a.requires_grad)
    c, d, h, w = a.data.shape

    def backward_fn(g):
        _accumulate(a, g.reshape(c, d, 2, h, 2, w, 2).sum(axis=(2, 4, 6)))

    _record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# grid sampling
# ---------------------------------------------------------------------------


def trilinear_sample(grid, points) -> Tensor:
    """Sample a (C, D, H, W) grid at (N, 3) continuous index coordinates.

    Point order is (d, h, w). Coordinates are clamped to the valid range
    (border replication), so values and gradients stay defined for points
    slightly outside the grid; clamped axes get zero point-gradient.
    Returns (N, C).
    """
    grid, points = as_tensor(grid), as_tensor(points)
    if grid.data.ndim != 4:
        raise DimensionError(f"trilinear_sample grid must be (C, D, H, W), got {grid.data.shape}")
    if points.data.ndim != 2 or points.data.shape[1] != 3:
        raise DimensionError(f"trilinear_sample points must be (N, 3), got {points.data.shape}")
    if np.isnan(points.data).any():
        raise InputError("trilinear_sample points contain NaN")

    c, d, h, w = grid.data.shape
    dims = np.array([d, h, w], dtype=np.float64)
    p = np.clip(points.data, 0.0, dims - 1.0)
    inside = (points.data > 0.0) & (points.data < dims - 1.0)

    i0 = np.minimum(np.floor(p), dims - 2.0).astype(np.intp)
    i0 = np.maximum(i0, 0)
    f = p - i0  # fractional position in the cell, each in [0, 1]
    i1 = i0 + 1

    gflat = grid.data.reshape(c, d * h * w)

    def lin(ii):
        return (ii[:, 0] * h + ii[:, 1]) * w + ii[:, 2]

    corners = []
    weights = []
    for bd in (0, 1):
        for bh in (0, 1):
            for bw in (0, 1):
                ii = np.stack(
                    [i1[:, 0] if bd else i0[:, 0], i1[:, 1] if bh else i0[:, 1], i1[:, 2] if bw else i0[:, 2]],
                    axis=1,
                )
                wd = f[:, 0] if bd else 1.0 - f[:, 0]
                wh = f[:, 1] if bh else 1.0 - f[:, 1]
                ww = f[:, 2] if bw else 1.0 - f[:, 2]
                corners.append(lin(ii))
                weights.append(wd * wh * ww)

    vals = [gflat[:, idx] for idx in corners]  # each (C, N)
    y = sum(wt[None, :] * v for wt, v in zip(weights, vals)).T  # (N, C)
    out = Tensor(y, grid.requires_grad or points.requires_grad)

    def backward_fn(g):  # g is (N, C)
        if grid.requires_grad:
            dg = np.zeros((d * h * w, c))
            for wt, idx in zip(weights, corners):
                np.add.at(dg, idx, g * wt[:, None])
            _accumulate(grid, dg.T.reshape(grid.data.shape))
        if points.requires_grad:
            gv = [np.einsum("nc,cn->n", g, v) for v in vals]  # upstream . corner value
            # d(weight)/d(f_axis) for each corner, same ordering as above
            dp = np.zeros_like(points.data)
            k = 0
            for bd in (0, 1):
                for bh in (0, 1):
                    for bw in (0, 1):
                        wd = f[:, 0] if bd else 1.0 - f[:, 0]
                        wh = f[:, 1] if bh else 1.0 - f[:, 1]
                        ww = f[:, 2] if bw else 1.0 - f[:, 2]
                        sd = 1.0 if bd else -1.0
                        sh = 1.0 if bh else -1.0
                        sw = 1.0 if bw else -1.0
                        dp[:, 0] += gv[k] * sd * wh * ww
                        dp[:, 1] += gv[k] * wd * sh * ww
                        dp[:, 2] += gv[k] * wd * wh * sw
                        k += 1
            _accumulate(points, dp * inside)

    _record(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# time embedding
# ---------------------------------------------------------------------------


def sinusoidal_embed(t: float, dim: int, omega0: float = 2.0 * math.pi) -> Tensor:
    """Interleaved (sin, cos) pairs at geometrically spaced frequencies.

    omega_k = omega0 * 2**k for k = 0 .. dim/2 - 1; t is clamped to [0, 1].
    """
    if dim < 2 or dim % 2 != 0:
        raise InputError(f"embedding dim must be even and >= 2, got {dim}")
    t = min(max(float(t), 0.0), 1.0)
    k = np.arange(dim // 2, dtype=np.float64)
    omega = omega0 * np.exp2(k)
    emb = np.empty(dim, dtype=np.float64)
    emb[0::2] = np.sin(omega * t)
    emb[1::2] = np.cos(omega * t)
    return Tensor(emb)


def sinusoidal_embed_batch(ts: np.ndarray, dim: int, omega0: float = 2.0 * math.pi) -> np.ndarray:
    if dim < 2 or dim % 2 != 0:
        raise InputError(f"embedding dim must be even and >= 2, got {dim}")
    ts = np.clip(np.asarray(ts, dtype=np.float64), 0.0, 1.0)
    k = np.arange(dim // 2, dtype=np.float64)
    omega = omega0 * np.exp2(k)
    arg = ts[:, None] * omega[None, :]
    emb = np.empty((ts.shape[0], dim), dtype=np.float64)
    emb[:, 0::2] = np.sin(arg)
    emb[:, 1::2] = np.cos(arg)
    return emb


# ---------------------------------------------------------------------------
# vector helpers for geometry code
# ---------------------------------------------------------------------------


def cross3(a, b) -> Tensor:
    """Row-wise cross product of (N, 3) tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape or a.data.shape[-1] != 3:
        raise DimensionError(f"cross3 expects matching (N, 3) shapes, got {a.data.shape} and {b.data.shape}")
    out = Tensor(np.cross(a.data, b.data), a.requires_grad or b.requires_grad)

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, np.cross(b.data, g))
        if b.requires_grad:
            _accumulate(b, np.cross(g, a.data))

    _record(out, backward_fn)
    return out


def dot_rows(a, b) -> Tensor:
    return tsum(mul(a, b), axis=1)


_NORM_EPS = 1e-300  # keeps sqrt differentiable at exactly coincident points


def norm_rows(a) -> Tensor:
    return sqrt(add(tsum(mul(a, a), axis=1), _NORM_EPS))


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    n_probes: int = 100,
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
    probe_filter: Callable[[Tensor, int], bool] | None = None,
) -> float:
    """Max relative error between taped gradients of ``f`` and central differences.

    ``f`` must be a pure function of the ``params`` data (re-evaluated under
    perturbation). Relative error is |analytic - fd| / max(1, |fd|). An
    optional ``probe_filter(tensor, flat_index)`` can veto probe sites, e.g.
    coordinates sitting exactly on a kernel truncation boundary.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    max_rel = 0.0
    done = 0
    attempts = 0
    while done < n_probes and attempts < 20 * n_probes:
        attempts += 1
        flat = int(rng.integers(total))
        pi = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        local = flat - int(np.sum(sizes[:pi]))
        p = params[pi]
        if probe_filter is not None and not probe_filter(p, local):
            continue
        orig = p.data.flat[local]
        p.data.flat[local] = orig + h
        fp = float(f().data)
        p.data.flat[local] = orig - h
        fm = float(f().data)
        p.data.flat[local] = orig
        fd = (fp - fm) / (2.0 * h)
        rel = abs(analytic[pi].flat[local] - fd) / max(1.0, abs(fd))
        max_rel = max(max_rel, rel)
        done += 1
    if done < n_probes:
        raise InputError("probe filter rejected too many finite-difference sites")
    return max_rel
