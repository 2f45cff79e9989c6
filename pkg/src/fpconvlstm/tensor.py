"""Dense tensor kernels: matrix product, 2-D convolution, max pooling,
activations and concatenation, each with the adjoint the backward pass
needs.

Tensors are plain numpy arrays in row-major order. Image-like tensors use
``[h, w, c]`` (or ``[n, h, w, c]`` for a batch); sequences prepend a time
axis. Operations preserve the dtype of their inputs; the package-wide
default precision only governs freshly created parameters and data.
"""
from contextlib import contextmanager

import numpy as np

from . import kernels

PADDINGS = ("valid", "same")
ACTIVATIONS = ("sigmoid", "tanh", "relu", "softmax")


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_default_dtype = np.dtype(np.float32)


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    """Select float32 (training) or float64 (gradient checking)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dtype}; use float32 or float64")
    _default_dtype = dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the default precision."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def as_tensor(x, dtype=None):
    return np.asarray(x, dtype=dtype or _default_dtype)


# -- matrix product -------------------------------------------------------------

def matmul(a, b):
    """``[m, k] @ [k, n] -> [m, n]``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


# -- convolution ----------------------------------------------------------------

def _pad_amounts(kh, kw, padding):
    if padding == "valid":
        return (0, 0), (0, 0)
    if padding == "same":
        top, left = (kh - 1) // 2, (kw - 1) // 2
        return (top, kh - 1 - top), (left, kw - 1 - left)
    raise ValueError(f"padding must be one of {PADDINGS}, got {padding!r}")


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [h, w, c] or [n, h, w, c], got shape {x.shape}")


def _check_conv(x, kernels_, bias, padding):
    if kernels_.ndim != 4:
        raise ShapeError(f"kernels must be [kh, kw, c_in, c_out], got {kernels_.shape}")
    kh, kw, cin, cout = kernels_.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernels expect {cin}")
    if bias is not None and np.shape(bias) != (cout,):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match c_out={cout}")
    (pt, pb), (pl, pr) = _pad_amounts(kh, kw, padding)
    h, w = x.shape[1], x.shape[2]
    if kh > h + pt + pb or kw > w + pl + pr:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than {padding}-padded input {h}x{w}"
        )
    return (pt, pb), (pl, pr)


def _pad(x, pads):
    (pt, pb), (pl, pr) = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))


def conv2d(x, kernels_, bias=None, padding="valid"):
    """Stride-1 cross-correlation of ``x`` ([h, w, c_in] or batched) with
    ``kernels_`` ([kh, kw, c_in, c_out]) plus a per-channel ``bias``.

    ``same`` padding zero-pads so the output keeps the input's spatial
    size; even kernels put the extra row/column at the bottom/right.
    """
    xb, squeeze = _batched(x)
    kernels_ = np.asarray(kernels_)
    pads = _check_conv(xb, kernels_, bias, padding)
    kh, kw, cin, cout = kernels_.shape
    cols = kernels.im2col(_pad(xb, pads), kh, kw)
    n, oh, ow = cols.shape[:3]
    out = cols.reshape(n * oh * ow, kh * kw * cin) @ kernels_.reshape(-1, cout)
    if bias is not None:
        out += bias
    out = out.reshape(n, oh, ow, cout)
    return out[0] if squeeze else out


def conv2d_backward(grad_out, x, kernels_, padding="valid"):
    """Adjoint of :func:`conv2d`: returns ``(grad_x, grad_kernels, grad_bias)``."""
    xb, squeeze = _batched(x)
    gb, _ = _batched(grad_out)
    kernels_ = np.asarray(kernels_)
    pads = _check_conv(xb, kernels_, None, padding)
    kh, kw, cin, cout = kernels_.shape
    xp = _pad(xb, pads)
    cols = kernels.im2col(xp, kh, kw)
    n, oh, ow = cols.shape[:3]
    g2 = gb.reshape(n * oh * ow, cout)
    grad_k = (cols.reshape(n * oh * ow, -1).T @ g2).reshape(kernels_.shape)
    grad_b = g2.sum(axis=0)
    dcols = (g2 @ kernels_.reshape(-1, cout).T).reshape(cols.shape)
    dxp = kernels.col2im(dcols, xp.shape)
    (pt, _), (pl, _) = pads
    dx = dxp[:, pt:pt + xb.shape[1], pl:pl + xb.shape[2], :]
    return (dx[0] if squeeze else dx), grad_k, grad_b


# -- pooling --------------------------------------------------------------------

def _check_pool(x, window):
    ph, pw = window
    if ph < 1 or pw < 1 or x.shape[1] % ph or x.shape[2] % pw:
        raise ShapeError(
            f"pool window {ph}x{pw} does not evenly divide input {x.shape[1]}x{x.shape[2]}"
        )
    return ph, pw


def maxpool2d(x, window=(2, 2)):
    """Non-overlapping max pooling over ``[h, w, c]`` (or batched) input."""
    xb, squeeze = _batched(x)
    ph, pw = _check_pool(xb, window)
    out, _ = kernels.maxpool_forward(xb, ph, pw)
    return out[0] if squeeze else out


def maxpool2d_backward(grad_out, x, window=(2, 2)):
    """Route each window's gradient to its first (row-major) maximum."""
    xb, squeeze = _batched(x)
    gb, _ = _batched(grad_out)
    ph, pw = _check_pool(xb, window)
    _, argmax = kernels.maxpool_forward(xb, ph, pw)
    dx = kernels.maxpool_backward(gb.astype(xb.dtype, copy=False), argmax, ph, pw)
    return dx[0] if squeeze else dx


# -- activations ----------------------------------------------------------------

def sigmoid(x):
    # tanh form: no overflow for large |x|, exactly 0.5 at 0
    return 0.5 * np.tanh(0.5 * np.asarray(x)) + 0.5


def relu(x):
    return np.maximum(x, 0)


def softmax(x):
    x = np.asarray(x)
    if x.ndim not in (1, 2):
        raise ShapeError(f"softmax expects rank 1 or 2, got shape {x.shape}")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activation(kind, x):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "softmax":
        return softmax(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_derivative(kind, x):
    """Elementwise derivative at ``x`` for sigmoid/tanh/relu.

    ReLU's derivative at exactly 0 is 0. For softmax, which is not
    elementwise, use :func:`softmax_jacobian` or :func:`softmax_backward`.
    """
    x = np.asarray(x)
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1 - s)
    if kind == "tanh":
        t = np.tanh(x)
        return 1 - t * t
    if kind == "relu":
        return (x > 0).astype(x.dtype)
    if kind == "softmax":
        raise ValueError("softmax derivative is a Jacobian; use softmax_jacobian")
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def softmax_jacobian(x):
    """Full Jacobian ``d softmax(x)_i / d x_j`` for a rank-1 ``x``."""
    y = softmax(np.asarray(x).ravel())
    return np.diag(y) - np.outer(y, y)


def softmax_backward(y, grad):
    """Vector-Jacobian product through softmax given its output ``y``."""
    return y * (grad - np.sum(grad * y, axis=-1, keepdims=True))


# -- concatenation --------------------------------------------------------------

def concat(a, b, axis=0):
    a, b = np.asarray(a), np.asarray(b)
    if b.size == 0 and b.ndim == 1:
        return a.copy()
    if a.size == 0 and a.ndim == 1:
        return b.copy()
    if a.ndim != b.ndim:
        raise ShapeError(f"cannot concatenate rank {a.ndim} with rank {b.ndim}")
    ax = axis % a.ndim
    if any(sa != sb for d, (sa, sb) in enumerate(zip(a.shape, b.shape)) if d != ax):
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape} along axis {axis}")
    return np.concatenate([a, b], axis=ax)


def split(grad, boundary, axis=0):
    """Backward of :func:`concat`: cut ``grad`` at the first operand's extent."""
    grad = np.asarray(grad)
    ax = axis % grad.ndim
    index = [slice(None)] * grad.ndim
    index[ax] = slice(None, boundary)
    first = grad[tuple(index)]
    index[ax] = slice(boundary, None)
    return first, grad[tuple(index)]
