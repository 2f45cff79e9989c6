"""LSTM cells (dense and convolutional), sequence unrolling and
backpropagation through time.

Gate equations, with ``z = [h_{t-1}, x_t]``::

    f = sigmoid(W_f z + b_f)      i = sigmoid(W_i z + b_i)
    c~ = tanh(W_c z + b_c)        o = sigmoid(W_o z + b_o)
    c_t = f * c_{t-1} + i * c~    h_t = o * tanh(c_t)

The convolutional cell replaces every ``W z`` by a ``same``-padded
convolution of the channel-concatenated ``[h_{t-1}, x_t]`` map.

The four gates keep separate parameter blocks; they are only stacked
side by side (order f, i, c~, o) for the duration of a single matrix
product. All functions accept either one sample or a leading batch axis.
"""
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels
from .tensor import ShapeError, _pad, _pad_amounts

GATES = ("f", "i", "c", "o")


@dataclass
class LstmParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        _check_blocks(self, "W", ndim=2)
        if self.W_f.shape[1] <= self.W_f.shape[0]:
            raise ShapeError(
                f"weights {self.W_f.shape} leave no room for the input in [h, x]"
            )

    @property
    def hidden_size(self):
        return self.W_f.shape[0]

    @property
    def input_size(self):
        return self.W_f.shape[1] - self.W_f.shape[0]

    def stacked(self):
        """``([H+I, 4H], [4H])`` operands for one fused product."""
        w = np.concatenate([self.W_f, self.W_i, self.W_c, self.W_o], axis=0)
        b = np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o])
        return w.T, b


@dataclass
class ConvLstmParams:
    K_f: np.ndarray
    K_i: np.ndarray
    K_c: np.ndarray
    K_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        _check_blocks(self, "K", ndim=4)
        kh, kw, cz, ch = self.K_f.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
        if cz <= ch:
            raise ShapeError(
                f"kernels {self.K_f.shape} leave no room for input channels in [h, x]"
            )

    @property
    def hidden_size(self):
        return self.K_f.shape[3]

    @property
    def input_size(self):
        return self.K_f.shape[2] - self.K_f.shape[3]

    @property
    def kernel_size(self):
        return self.K_f.shape[:2]

    def stacked(self):
        """``([kh*kw*(H+C), 4H], [4H])`` operands for one fused product."""
        k = np.concatenate([self.K_f, self.K_i, self.K_c, self.K_o], axis=3)
        b = np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o])
        return k.reshape(-1, k.shape[3]), b


def _check_blocks(params, prefix, ndim):
    weights = [getattr(params, f"{prefix}_{g}") for g in GATES]
    biases = [getattr(params, f"b_{g}") for g in GATES]
    shape = weights[0].shape
    if len(shape) != ndim or any(w.shape != shape for w in weights):
        raise ShapeError(f"gate {prefix} blocks must share one rank-{ndim} shape")
    hidden = shape[0] if ndim == 2 else shape[3]
    if any(b.shape != (hidden,) for b in biases):
        raise ShapeError(f"gate biases must all have shape ({hidden},)")


def param_names(params):
    return [f.name for f in fields(params)]


def zeros_like_params(params):
    return type(params)(**{n: np.zeros_like(getattr(params, n)) for n in param_names(params)})


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if np.shape(self.h) != np.shape(self.c):
            raise ShapeError(f"h {np.shape(self.h)} and c {np.shape(self.c)} differ")


@dataclass
class GateActivations:
    """Per-timestep gate values kept for the backward pass.

    ``f``, ``i``, ``c_tilde`` and ``o`` are views into ``block`` (the
    fused ``[rows, 4H]`` gate array).
    """
    f: np.ndarray
    i: np.ndarray
    c_tilde: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray
    block: np.ndarray = field(repr=False)


def zero_state(params, x_t):
    """All-zero initial state matching one input frame/vector ``x_t``."""
    x_t = np.asarray(x_t)
    z = np.zeros(x_t.shape[:-1] + (params.hidden_size,), dtype=x_t.dtype)
    return LstmState(z, z.copy())


# -- single steps ---------------------------------------------------------------

def _gates_from_pre(pre, c_prev, out_shape):
    hdim = c_prev.shape[-1]
    block, c, tanh_c, h = kernels.lstm_gates_forward(
        pre.reshape(-1, 4 * hdim), c_prev.reshape(-1, hdim)
    )
    gate_shape = out_shape[:-1] + (4 * hdim,)
    block = block.reshape(gate_shape)
    gates = GateActivations(
        f=block[..., :hdim],
        i=block[..., hdim:2 * hdim],
        c_tilde=block[..., 2 * hdim:3 * hdim],
        o=block[..., 3 * hdim:],
        tanh_c=tanh_c.reshape(out_shape),
        block=block,
    )
    return LstmState(h.reshape(out_shape), c.reshape(out_shape)), gates


def _dense_pre(params, h, x, stacked=None):
    w, b = stacked if stacked is not None else params.stacked()
    z = np.concatenate([h, x], axis=-1)
    return z @ w + b


def _conv_cols(params, h, x):
    """im2col of the padded ``[h, x]`` map, batch axis required."""
    kh, kw = params.kernel_size
    z = np.concatenate([h, x], axis=-1)
    return kernels.im2col(_pad(z, _pad_amounts(kh, kw, "same")), kh, kw)


def _conv_pre(params, h, x, stacked=None):
    k, b = stacked if stacked is not None else params.stacked()
    cols = _conv_cols(params, h, x)
    n, hh, ww = cols.shape[:3]
    pre = cols.reshape(n * hh * ww, -1) @ k + b
    return pre.reshape(n, hh, ww, -1)


def lstm_step(params, prev, x_t):
    """One dense LSTM step. Returns ``(new_state, gates)``."""
    x_t = np.asarray(x_t)
    if x_t.shape[-1] != params.input_size:
        raise ShapeError(
            f"x_t has width {x_t.shape[-1]}, params expect {params.input_size}"
        )
    if prev.h.shape[-1] != params.hidden_size or prev.h.shape[:-1] != x_t.shape[:-1]:
        raise ShapeError(
            f"state {prev.h.shape} incompatible with x_t {x_t.shape} "
            f"and hidden size {params.hidden_size}"
        )
    pre = _dense_pre(params, prev.h, x_t)
    return _gates_from_pre(pre, prev.c, prev.h.shape)


def convlstm_step(params, prev, x_t):
    """One convolutional LSTM step on ``x_t`` of shape ``[h, w, c_in]`` (or batched)."""
    x_t = np.asarray(x_t)
    squeeze = x_t.ndim == 3
    xb = x_t[None] if squeeze else x_t
    hb = prev.h[None] if squeeze else prev.h
    cb = prev.c[None] if squeeze else prev.c
    if xb.ndim != 4 or xb.shape[-1] != params.input_size:
        raise ShapeError(
            f"x_t shape {x_t.shape} does not match {params.input_size} input channels"
        )
    if hb.shape[:3] != xb.shape[:3] or hb.shape[-1] != params.hidden_size:
        raise ShapeError(f"state frame {prev.h.shape} does not match input frame {x_t.shape}")
    pre = _conv_pre(params, hb, xb)
    state, gates = _gates_from_pre(pre, cb, hb.shape)
    if squeeze:
        state = LstmState(state.h[0], state.c[0])
        gates = _squeeze_gates(gates)
    return state, gates


def _squeeze_gates(g):
    return GateActivations(g.f[0], g.i[0], g.c_tilde[0], g.o[0], g.tanh_c[0], g.block[0])


# -- sequences ------------------------------------------------------------------

def _cell_kind(cell, params):
    if cell in ("dense", "lstm"):
        expected = LstmParams
    elif cell in ("conv", "convlstm"):
        expected = ConvLstmParams
    else:
        raise ValueError(f"cell must be 'dense' or 'conv', got {cell!r}")
    if not isinstance(params, expected):
        raise TypeError(f"cell {cell!r} needs {expected.__name__}, got {type(params).__name__}")
    return expected is ConvLstmParams


def _as_batched_sequence(x, conv):
    x = np.asarray(x)
    base = 4 if conv else 2
    if x.ndim == base:
        return x[None], True
    if x.ndim == base + 1:
        return x, False
    raise ShapeError(f"sequence must have rank {base} (or {base + 1} batched), got {x.shape}")


def unroll_sequence(cell, params, x, initial=None):
    """Run the cell over ``x`` (``[T, ...]`` or ``[n, T, ...]``).

    Returns ``(states, caches)``: ``states`` has ``T + 1`` entries with
    ``states[0]`` the initial (default all-zero) state, ``caches`` has one
    :class:`GateActivations` per step.
    """
    conv = _cell_kind(cell, params)
    xb, squeeze = _as_batched_sequence(x, conv)
    T = xb.shape[1]
    if T == 0:
        raise ShapeError("cannot unroll an empty sequence (T = 0)")
    if xb.shape[-1] != params.input_size:
        raise ShapeError(
            f"sequence feature width {xb.shape[-1]} != params input size {params.input_size}"
        )
    if initial is None:
        state = zero_state(params, xb[:, 0])
    else:
        state = LstmState(*(a[None] if squeeze else a for a in (initial.h, initial.c)))
        if state.h.shape != xb[:, 0].shape[:-1] + (params.hidden_size,):
            raise ShapeError(f"initial state {initial.h.shape} does not fit the sequence")
    stacked = params.stacked()
    pre_fn = _conv_pre if conv else _dense_pre
    states, caches = [state], []
    for t in range(T):
        pre = pre_fn(params, state.h, xb[:, t], stacked)
        state, gates = _gates_from_pre(pre, state.c, state.h.shape)
        states.append(state)
        caches.append(gates)
    if squeeze:
        states = [LstmState(s.h[0], s.c[0]) for s in states]
        caches = [_squeeze_gates(g) for g in caches]
    return states, caches


def bptt_backward(params, caches, states, x, grad_h_T, grad_c_T=None):
    """Backpropagation through time from a gradient on the final hidden state.

    Returns ``(param_grads, grad_x)`` where ``param_grads`` has the same type
    as ``params`` and ``grad_x`` the shape of ``x``. Gradients accumulate
    over all timesteps (and over the batch, if ``x`` is batched).
    """
    conv = isinstance(params, ConvLstmParams)
    xb, squeeze = _as_batched_sequence(x, conv)
    T = xb.shape[1]
    if len(caches) != T or len(states) != T + 1:
        raise ShapeError(
            f"{len(caches)} caches / {len(states)} states do not match sequence length {T}"
        )

    def batched(a):
        return np.asarray(a)[None] if squeeze else np.asarray(a)

    hdim = params.hidden_size
    dtype = xb.dtype
    dh = batched(grad_h_T).astype(dtype, copy=True)
    dc = np.zeros_like(dh) if grad_c_T is None else batched(grad_c_T).astype(dtype, copy=True)
    w, _ = params.stacked()
    dw = np.zeros_like(w)
    db = np.zeros(4 * hdim, dtype=w.dtype)
    grad_x = np.zeros_like(xb)
    if conv:
        kh, kw = params.kernel_size
        pads = _pad_amounts(kh, kw, "same")

    for t in range(T - 1, -1, -1):
        g = caches[t]
        h_prev, c_prev = batched(states[t].h), batched(states[t].c)
        dpre, dc = kernels.lstm_gates_backward(
            batched(g.block).reshape(-1, 4 * hdim),
            c_prev.reshape(-1, hdim),
            batched(g.tanh_c).reshape(-1, hdim),
            dh.reshape(-1, hdim),
            dc.reshape(-1, hdim),
        )
        dc = dc.reshape(c_prev.shape)
        db += dpre.sum(axis=0)
        if conv:
            cols = _conv_cols(params, h_prev, xb[:, t])
            dw += cols.reshape(dpre.shape[0], -1).T @ dpre
            dcols = (dpre @ w.T).reshape(cols.shape)
            n, hh, ww = cols.shape[:3]
            padded = (n, hh + kh - 1, ww + kw - 1, cols.shape[-1])
            dz = kernels.col2im(dcols, padded)
            (pt, _), (pl, _) = pads
            dz = dz[:, pt:pt + hh, pl:pl + ww, :]
        else:
            z = np.concatenate([h_prev, xb[:, t]], axis=-1)
            dw += z.T @ dpre
            dz = dpre @ w.T
        dh = np.ascontiguousarray(dz[..., :hdim])
        grad_x[:, t] = dz[..., hdim:]

    grads = _unstack(params, dw, db)
    return grads, (grad_x[0] if squeeze else grad_x)


def _unstack(params, dw, db):
    hdim = params.hidden_size
    out = {}
    for k, gate in enumerate(GATES):
        cols = slice(k * hdim, (k + 1) * hdim)
        out[f"b_{gate}"] = db[cols].copy()
        if isinstance(params, ConvLstmParams):
            kshape = params.K_f.shape
            out[f"K_{gate}"] = dw[:, cols].reshape(kshape).copy()
        else:
            out[f"W_{gate}"] = dw[:, cols].T.copy()
    return type(params)(**out)
