# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: patch extraction, its adjoint, fused LSTM gate
algebra and max pooling.

Every function writes into caller-allocated output buffers so that dtype
dispatch stays in Python (see ``fpconvlstm.kernels``).
"""

from libc.math cimport exp, expf

ctypedef fused real:
    float
    double


def im2col(const real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw,
           real[:, :, :, :, :, ::1] out):
    """Copy every (kh, kw) window of ``xp`` into ``out[n, oy, ox, i, j, c]``."""
    cdef Py_ssize_t n = out.shape[0], oh = out.shape[1], ow = out.shape[2]
    cdef Py_ssize_t c = xp.shape[3]
    cdef Py_ssize_t b, y, x, i, j, k
    with nogil:
        for b in range(n):
            for y in range(oh):
                for x in range(ow):
                    for i in range(kh):
                        for j in range(kw):
                            for k in range(c):
                                out[b, y, x, i, j, k] = xp[b, y + i, x + j, k]


def col2im(const real[:, :, :, :, :, ::1] cols, real[:, :, :, ::1] out):
    """Scatter-add ``cols`` back onto the (zeroed) padded input ``out``."""
    cdef Py_ssize_t n = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    cdef Py_ssize_t kh = cols.shape[3], kw = cols.shape[4], c = cols.shape[5]
    cdef Py_ssize_t b, y, x, i, j, k
    with nogil:
        for b in range(n):
            for y in range(oh):
                for x in range(ow):
                    for i in range(kh):
                        for j in range(kw):
                            for k in range(c):
                                out[b, y + i, x + j, k] += cols[b, y, x, i, j, k]


cdef inline real _exp(real z) noexcept nogil:
    if real is float:
        return expf(z)
    else:
        return exp(z)


cdef inline real _sigmoid(real z) noexcept nogil:
    # exp overflow for very negative z yields inf -> 0, which is the limit
    return 1 / (1 + _exp(-z))


cdef inline real _tanh(real z) noexcept nogil:
    return 2 / (1 + _exp(-2 * z)) - 1


def lstm_gates_forward(const real[:, ::1] pre, const real[:, ::1] c_prev,
                       real[:, ::1] gates, real[:, ::1] c_out,
                       real[:, ::1] tanh_c, real[:, ::1] h_out):
    """Gate nonlinearities and cell/hidden update.

    ``pre`` holds pre-activations laid out as [f | i | c~ | o] blocks of
    width ``H`` along the last axis.
    """
    cdef Py_ssize_t m = c_prev.shape[0], hdim = c_prev.shape[1]
    cdef Py_ssize_t r, k
    cdef real f, ig, g, o, c
    with nogil:
        for r in range(m):
            for k in range(hdim):
                f = _sigmoid(pre[r, k])
                ig = _sigmoid(pre[r, hdim + k])
                g = _tanh(pre[r, 2 * hdim + k])
                o = _sigmoid(pre[r, 3 * hdim + k])
                c = f * c_prev[r, k] + ig * g
                gates[r, k] = f
                gates[r, hdim + k] = ig
                gates[r, 2 * hdim + k] = g
                gates[r, 3 * hdim + k] = o
                c_out[r, k] = c
                tanh_c[r, k] = _tanh(c)
                h_out[r, k] = o * tanh_c[r, k]


def lstm_gates_backward(const real[:, ::1] gates, const real[:, ::1] c_prev,
                        const real[:, ::1] tanh_c, const real[:, ::1] dh,
                        const real[:, ::1] dc, real[:, ::1] dpre,
                        real[:, ::1] dc_prev):
    """Adjoint of :func:`lstm_gates_forward` for one timestep."""
    cdef Py_ssize_t m = c_prev.shape[0], hdim = c_prev.shape[1]
    cdef Py_ssize_t r, k
    cdef real f, ig, g, o, tc, dct
    with nogil:
        for r in range(m):
            for k in range(hdim):
                f = gates[r, k]
                ig = gates[r, hdim + k]
                g = gates[r, 2 * hdim + k]
                o = gates[r, 3 * hdim + k]
                tc = tanh_c[r, k]
                dct = dc[r, k] + dh[r, k] * o * (1 - tc * tc)
                dpre[r, k] = dct * c_prev[r, k] * f * (1 - f)
                dpre[r, hdim + k] = dct * g * ig * (1 - ig)
                dpre[r, 2 * hdim + k] = dct * ig * (1 - g * g)
                dpre[r, 3 * hdim + k] = dh[r, k] * tc * o * (1 - o)
                dc_prev[r, k] = dct * f


def maxpool_forward(const real[:, :, :, ::1] x, Py_ssize_t ph, Py_ssize_t pw,
                    real[:, :, :, ::1] out, long long[:, :, :, ::1] argmax):
    """Non-overlapping max pooling; ``argmax`` stores the row-major window
    offset of the first maximal element."""
    cdef Py_ssize_t n = out.shape[0], oh = out.shape[1], ow = out.shape[2]
    cdef Py_ssize_t c = out.shape[3]
    cdef Py_ssize_t b, y, xx, k, i, j
    cdef real best, v
    cdef long long idx
    with nogil:
        for b in range(n):
            for y in range(oh):
                for xx in range(ow):
                    for k in range(c):
                        best = x[b, y * ph, xx * pw, k]
                        idx = 0
                        for i in range(ph):
                            for j in range(pw):
                                v = x[b, y * ph + i, xx * pw + j, k]
                                if v > best:
                                    best = v
                                    idx = i * pw + j
                        out[b, y, xx, k] = best
                        argmax[b, y, xx, k] = idx


def maxpool_backward(const real[:, :, :, ::1] grad, const long long[:, :, :, ::1] argmax,
                     Py_ssize_t ph, Py_ssize_t pw, real[:, :, :, ::1] out):
    cdef Py_ssize_t n = grad.shape[0], oh = grad.shape[1], ow = grad.shape[2]
    cdef Py_ssize_t c = grad.shape[3]
    cdef Py_ssize_t b, y, xx, k
    cdef long long idx
    with nogil:
        for b in range(n):
            for y in range(oh):
                for xx in range(ow):
                    for k in range(c):
                        idx = argmax[b, y, xx, k]
                        out[b, y * ph + idx // pw, xx * pw + idx % pw, k] = grad[b, y, xx, k]
