"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps a contiguous float array (float32 for training, float64
for verification paths) and records backward closures as operations run.
Calling :func:`backward` on a scalar result walks the recorded graph in
reverse topological order and accumulates gradients additively, so a value
used twice receives the sum of both contributions.

Only the operations the affinity network needs are provided; there is no
GPU path and no graph optimization.
"""

from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GradientError",
    "no_grad",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "relu",
    "log",
    "absolute",
    "clip",
    "maximum",
    "tensor_sum",
    "reshape",
    "transpose",
    "concat",
    "conv2d",
    "maxpool2d",
    "batch_norm2d",
    "softmax_rows",
    "softmax_cols",
    "gather_pixels",
    "pair_tensor",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GradientError(RuntimeError):
    """Backward was invoked on an invalid target."""


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


class no_grad:
    """Context manager that suspends tape recording (inference paths)."""

    def __enter__(self) -> "no_grad":
        self._prev = _recording()
        _state.recording = False
        return self

    def __exit__(self, *exc) -> None:
        _state.recording = self._prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """A dense real array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __neg__(self):
        return mul(self, constant(np.asarray(-1.0, dtype=self.data.dtype)))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return constant(np.asarray(value, dtype=like.data.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out

def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that numpy broadcasting introduced."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor."""
    if loss.data.size != 1:
        raise GradientError(f"backward target must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and reduction operations


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def back(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out, (a, b), back)


def relu(x: Tensor) -> Tensor:
    """Rectifier with the symmetric subgradient (1/2) at exactly zero.

    Zero inputs occur structurally (dummy feature columns, dead cells
    behind zero biases), and a central finite difference at the kink
    measures the average of the one-sided slopes.
    """
    positive = x.data > 0
    out = np.where(positive, x.data, 0)
    weight = positive + 0.5 * (x.data == 0)

    def back(g):
        _accumulate(x, g * weight)

    return _make(out, (x,), back)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def back(g):
        _accumulate(x, g / x.data)

    return _make(out, (x,), back)


def absolute(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def back(g):
        _accumulate(x, g * np.sign(x.data))

    return _make(out, (x,), back)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def back(g):
        _accumulate(x, g * mask)

    return _make(out, (x,), back)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; exact ties split the gradient evenly.

    The even split is the symmetric subgradient and equals what a central
    finite difference measures at a tie, so gradient checks stay coherent
    even where the two operands coincide bitwise.
    """
    if a.shape != b.shape:
        raise ShapeError(f"maximum expects equal shapes, got {a.shape} vs {b.shape}")
    tie = a.data == b.data
    take_a = a.data > b.data
    out = np.where(take_a | tie, a.data, b.data)
    weight_a = take_a + 0.5 * tie
    weight_b = 1.0 - weight_a

    def back(g):
        _accumulate(a, g * weight_a)
        _accumulate(b, g * weight_b)

    return _make(out, (a, b), back)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(x, np.broadcast_to(gg, x.shape).copy())

    return _make(np.asarray(out, dtype=x.data.dtype), (x,), back)


# ---------------------------------------------------------------------------
# structural operations


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def back(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(out, (x,), back)


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else np.argsort(axes)

    def back(g):
        _accumulate(x, np.transpose(g, inverse))

    return _make(np.ascontiguousarray(out), (x,), back)


def _getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def back(g):
        full = np.zeros_like(x.data)
        full[idx] += g
        _accumulate(x, full)

    return _make(np.ascontiguousarray(out), (x,), back)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def back(g):
        offset = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            _accumulate(p, g[tuple(sl)])
            offset += size

    return _make(out, tuple(parts), back)


# ---------------------------------------------------------------------------
# convolution family


def _out_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - kernel) // stride + 1


def _window_cols(xp: np.ndarray, kh: int, kw: int, stride: int):
    """Strided (B, C, OH, OW, kh, kw) view over a padded input."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a (B, C, H, W) batch with (O, C, k, k) filters."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weights, got {x.shape}, {weight.shape}")
    batch, in_c, height, width = x.shape
    out_c, w_in_c, kh, kw = weight.shape
    if in_c != w_in_c:
        raise ShapeError(f"conv2d channel mismatch: input has {in_c}, weights expect {w_in_c}")
    if bias.shape != (out_c,):
        raise ShapeError(f"conv2d bias must have shape ({out_c},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    if height + 2 * padding < kh or width + 2 * padding < kw:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} exceeds padded input {height + 2 * padding}x{width + 2 * padding}"
        )
    oh = _out_extent(height, kh, stride, padding)
    ow = _out_extent(width, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _window_cols(xp, kh, kw, stride)  # (B, C, OH, OW, kh, kw)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(batch * oh * ow, in_c * kh * kw)
    w2 = weight.data.reshape(out_c, -1)
    out = (cols @ w2.T).reshape(batch, oh, ow, out_c).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out) + bias.data[None, :, None, None]

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(batch * oh * ow, out_c)
        if weight.requires_grad:
            _accumulate(weight, (g2.T @ cols).reshape(weight.shape))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(batch, oh, ow, in_c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += dcols[
                        :, :, :, :, ki, kj
                    ]
            if padding:
                dx = dxp[:, :, padding : padding + height, padding : padding + width]
            else:
                dx = dxp
            _accumulate(x, dx)

    return _make(out, (x, weight, bias), back)


def maxpool2d(x: Tensor, kernel: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max pooling; tied maxima inside a window share the gradient equally.

    Exact ties are routine over rectified zero plateaus, and the equal
    split matches a central finite difference there (tied cells shift
    together under any upstream perturbation).
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-D input, got {x.shape}")
    stride = kernel if stride is None else stride
    batch, chan, height, width = x.shape
    if height + 2 * padding < kernel or width + 2 * padding < kernel:
        raise ShapeError("maxpool2d kernel exceeds padded input")
    oh = _out_extent(height, kernel, stride, padding)
    ow = _out_extent(width, kernel, stride, padding)

    if padding == 0 and stride == kernel and height % kernel == 0 and width % kernel == 0:
        # non-overlapping windows reshape to a contiguous view
        tiles = x.data.reshape(batch, chan, oh, kernel, ow, kernel)
        out = tiles.max(axis=(3, 5))

        def back_tiled(g):
            tied = tiles == out[:, :, :, None, :, None]
            share = g / tied.sum(axis=(3, 5))
            dx = (share[:, :, :, None, :, None] * tied).reshape(x.shape)
            _accumulate(x, dx)

        return _make(np.ascontiguousarray(out), (x,), back_tiled)

    fill = np.asarray(-np.inf, dtype=x.data.dtype)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=fill)
    windows = _window_cols(xp, kernel, kernel, stride)  # (B, C, OH, OW, k, k) view
    out = windows.max(axis=(4, 5))

    def back(g):
        tied = windows == out[..., None, None]
        share = g / tied.sum(axis=(4, 5))
        dxp = np.zeros_like(xp)
        for ki in range(kernel):
            for kj in range(kernel):
                dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                    share * tied[:, :, :, :, ki, kj]
                )
        if padding:
            dx = dxp[:, :, padding : padding + height, padding : padding + width]
        else:
            dx = dxp
        _accumulate(x, dx)

    return _make(np.ascontiguousarray(out), (x,), back)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over the (B, H, W) axes.

    Training mode normalizes with biased batch statistics and folds them
    into the running buffers (``running = (1 - momentum) * running +
    momentum * batch``, variance stored unbiased). Inference mode
    normalizes with the running buffers.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects 4-D input, got {x.shape}")
    batch, chan, height, width = x.shape
    if gamma.shape != (chan,) or beta.shape != (chan,):
        raise ShapeError("batch_norm2d affine parameters must be per-channel vectors")
    n = batch * height * width
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            unbiased = var * (n / (n - 1)) if n > 1 else var
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mean = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def back(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            scale = inv_std[None, :, None, None]
            if training:
                sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (scale / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
            else:
                dx = dxhat * scale
            _accumulate(x, dx)

    return _make(out, (x, gamma, beta), back)


# ---------------------------------------------------------------------------
# softmax


def _softmax_2d(data: np.ndarray, axis: int) -> np.ndarray:
    shifted = data - data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_op(x: Tensor, axis: int) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"softmax expects a 2-D tensor, got {x.shape}")
    out = _softmax_2d(x.data, axis)

    def back(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(x, out * (g - inner))

    return _make(out, (x,), back)


def softmax_rows(x: Tensor) -> Tensor:
    """Stable softmax along each row (max-subtraction before exp)."""
    return _softmax_op(x, axis=1)


def softmax_cols(x: Tensor) -> Tensor:
    """Stable softmax along each column."""
    return _softmax_op(x, axis=0)


# ---------------------------------------------------------------------------
# network-specific structural ops


def gather_pixels(x: Tensor, batch_index: int, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Sample feature columns: out[:, i] = x[batch_index, :, rows[i], cols[i]].

    Returns a (C, n) tensor; the backward pass scatter-adds into the map.
    """
    if x.ndim != 4:
        raise ShapeError(f"gather_pixels expects a 4-D map, got {x.shape}")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    _, _, height, width = x.shape
    if rows.size and (rows.min() < 0 or rows.max() >= height or cols.min() < 0 or cols.max() >= width):
        raise ShapeError("gather_pixels index outside the feature map")
    out = x.data[batch_index][:, rows, cols]  # (C, n)

    def back(g):
        dx = np.zeros_like(x.data)
        view = dx[batch_index].transpose(1, 2, 0)  # (H, W, C) view
        np.add.at(view, (rows, cols), g.T)
        _accumulate(x, dx)

    return _make(np.ascontiguousarray(out), (x,), back)


def pair_tensor(f_prev: Tensor, f_cur: Tensor) -> Tensor:
    """All column pairings of two (D, N) feature matrices.

    out[:, i, j] stacks column i of ``f_prev`` over column j of ``f_cur``,
    giving a (2D, N, N) tensor.
    """
    if f_prev.ndim != 2 or f_cur.ndim != 2 or f_prev.shape != f_cur.shape:
        raise ShapeError(f"pair_tensor expects matching (D, N) matrices, got {f_prev.shape} and {f_cur.shape}")
    depth, count = f_prev.shape
    top = np.broadcast_to(f_prev.data[:, :, None], (depth, count, count))
    bottom = np.broadcast_to(f_cur.data[:, None, :], (depth, count, count))
    out = np.concatenate([top, bottom], axis=0)

    def back(g):
        _accumulate(f_prev, g[:depth].sum(axis=2))
        _accumulate(f_cur, g[depth:].sum(axis=1))

    return _make(out, (f_prev, f_cur), back)
