"""Backend selection for the hot loops.

The compiled extension is used when it imports cleanly; setting
``FPCONVLSTM_BACKEND=python`` forces the numpy fallback. Both backends are
importable side by side so tests and benchmarks can compare them.

The compiled backend keeps the gate *forward* on numpy: its cost is
transcendental functions, where numpy's SIMD ufuncs beat scalar libm
calls (see ``benchmarks/bench_kernels.py``). The compiled version stays
available as ``_kernels.lstm_gates_forward`` for comparison.
"""
import os

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

KERNEL_NAMES = ("im2col", "col2im", "lstm_gates_forward", "lstm_gates_backward",
                "maxpool_forward", "maxpool_backward")
NUMPY_PREFERRED = frozenset({"lstm_gates_forward"})


class _Table:
    def __init__(self, **fns):
        self.__dict__.update(fns)


BACKENDS = {"python": _Table(**{k: getattr(_fallback, k) for k in KERNEL_NAMES})}
if _compiled is not None:
    BACKENDS["cython"] = _Table(**{
        k: getattr(_fallback if k in NUMPY_PREFERRED else _compiled, k) for k in KERNEL_NAMES
    })


def _select():
    requested = os.environ.get("FPCONVLSTM_BACKEND", "").strip().lower()
    if requested:
        if requested not in BACKENDS:
            raise ImportError(
                f"FPCONVLSTM_BACKEND={requested!r} is not available; "
                f"built backends: {sorted(BACKENDS)}"
            )
        return requested
    return "cython" if "cython" in BACKENDS else "python"


BACKEND = _select()
_impl = BACKENDS[BACKEND]


def use_backend(name):
    """Switch the active backend at runtime (used by tests and benchmarks)."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"unknown or unbuilt backend {name!r}")
    BACKEND, _impl = name, BACKENDS[name]


def im2col(xp, kh, kw):
    """Patch matrix of a padded batch ``[n, H, W, c]`` -> ``[n, oh, ow, kh, kw, c]``."""
    xp = np.ascontiguousarray(xp)
    n, hp, wp, c = xp.shape
    out = np.empty((n, hp - kh + 1, wp - kw + 1, kh, kw, c), dtype=xp.dtype)
    _impl.im2col(xp, kh, kw, out)
    return out


def col2im(cols, padded_shape):
    out = np.zeros(padded_shape, dtype=cols.dtype)
    _impl.col2im(np.ascontiguousarray(cols), out)
    return out


def lstm_gates_forward(pre, c_prev):
    """Returns ``(gates, c, tanh_c, h)`` for rows of pre-activations ``[m, 4H]``."""
    pre = np.ascontiguousarray(pre)
    c_prev = np.ascontiguousarray(c_prev, dtype=pre.dtype)
    gates = np.empty_like(pre)
    c = np.empty_like(c_prev)
    tanh_c = np.empty_like(c_prev)
    h = np.empty_like(c_prev)
    _impl.lstm_gates_forward(pre, c_prev, gates, c, tanh_c, h)
    return gates, c, tanh_c, h


def lstm_gates_backward(gates, c_prev, tanh_c, dh, dc):
    """Returns ``(dpre, dc_prev)``."""
    dt = gates.dtype
    args = [np.ascontiguousarray(a, dtype=dt) for a in (gates, c_prev, tanh_c, dh, dc)]
    dpre = np.empty_like(args[0])
    dc_prev = np.empty_like(args[1])
    _impl.lstm_gates_backward(*args, dpre, dc_prev)
    return dpre, dc_prev


def maxpool_forward(x, ph, pw):
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    out = np.empty((n, h // ph, w // pw, c), dtype=x.dtype)
    argmax = np.empty(out.shape, dtype=np.int64)
    _impl.maxpool_forward(x, ph, pw, out, argmax)
    return out, argmax


def maxpool_backward(grad, argmax, ph, pw):
    grad = np.ascontiguousarray(grad)
    n, oh, ow, c = grad.shape
    out = np.zeros((n, oh * ph, ow * pw, c), dtype=grad.dtype)
    _impl.maxpool_backward(grad, np.ascontiguousarray(argmax, dtype=np.int64), ph, pw, out)
    return out
