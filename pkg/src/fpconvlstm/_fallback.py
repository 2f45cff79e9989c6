"""Pure numpy implementations of the compiled kernels.

Signatures mirror ``_kernels.pyx`` exactly: results are written into the
caller-supplied output arrays.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _sigmoid(z):
    return 0.5 * np.tanh(0.5 * z) + 0.5


def im2col(xp, kh, kw, out):
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # [n, oh, ow, c, kh, kw]
    out[...] = win.transpose(0, 1, 2, 4, 5, 3)


def col2im(cols, out):
    _, oh, ow, kh, kw, _ = cols.shape
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + oh, j:j + ow, :] += cols[:, :, :, i, j, :]


def lstm_gates_forward(pre, c_prev, gates, c_out, tanh_c, h_out):
    hdim = c_prev.shape[1]
    # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5, evaluated in place on the output buffer
    np.multiply(pre, 0.5, out=gates)
    gates[:, 2 * hdim:3 * hdim] = pre[:, 2 * hdim:3 * hdim]
    np.tanh(gates, out=gates)
    for blk in (gates[:, :2 * hdim], gates[:, 3 * hdim:]):
        blk *= 0.5
        blk += 0.5
    f = gates[:, :hdim]
    i = gates[:, hdim:2 * hdim]
    g = gates[:, 2 * hdim:3 * hdim]
    o = gates[:, 3 * hdim:]
    np.multiply(f, c_prev, out=c_out)
    c_out += i * g
    np.tanh(c_out, out=tanh_c)
    np.multiply(o, tanh_c, out=h_out)


def lstm_gates_backward(gates, c_prev, tanh_c, dh, dc, dpre, dc_prev):
    hdim = c_prev.shape[1]
    f = gates[:, :hdim]
    i = gates[:, hdim:2 * hdim]
    g = gates[:, 2 * hdim:3 * hdim]
    o = gates[:, 3 * hdim:]
    dct = dc + dh * o * (1 - tanh_c * tanh_c)
    dpre[:, :hdim] = dct * c_prev * f * (1 - f)
    dpre[:, hdim:2 * hdim] = dct * g * i * (1 - i)
    dpre[:, 2 * hdim:3 * hdim] = dct * i * (1 - g * g)
    dpre[:, 3 * hdim:] = dh * tanh_c * o * (1 - o)
    dc_prev[...] = dct * f


def _windows(x, ph, pw):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // ph, ph, w // pw, pw, c).transpose(0, 1, 3, 5, 2, 4)
    return blocks.reshape(n, h // ph, w // pw, c, ph * pw)


def maxpool_forward(x, ph, pw, out, argmax):
    win = _windows(x, ph, pw)
    argmax[...] = np.argmax(win, axis=-1)  # first occurrence on ties
    out[...] = np.take_along_axis(win, argmax[..., None], axis=-1)[..., 0]


def maxpool_backward(grad, argmax, ph, pw, out):
    n, oh, ow, c = grad.shape
    onehot = np.zeros((n, oh, ow, c, ph * pw), dtype=out.dtype)
    np.put_along_axis(onehot, argmax[..., None], grad[..., None], axis=-1)
    blocks = onehot.reshape(n, oh, ow, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
    out[...] = blocks.reshape(out.shape)
