# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled float32 kernels: direct-loop convolution, pooling and the joint
spatial-conv / temporal-deconv filter.  All reductions accumulate in double;
loops run without the GIL so windows can be processed from worker threads.
"""

import numpy as np


cdef inline Py_ssize_t _start(Py_ssize_t p, Py_ssize_t d, Py_ssize_t s) noexcept nogil:
    # smallest out index o with o*s - p + d >= 0
    cdef Py_ssize_t num = p - d
    if num <= 0:
        return 0
    return (num + s - 1) // s


cdef inline Py_ssize_t _end(Py_ssize_t n, Py_ssize_t p, Py_ssize_t d,
                            Py_ssize_t s, Py_ssize_t out_n) noexcept nogil:
    # one past the largest out index o with o*s - p + d <= n - 1
    cdef Py_ssize_t num = n - 1 + p - d
    cdef Py_ssize_t e
    if num < 0:
        return 0
    e = num // s + 1
    return e if e < out_n else out_n


def conv3d_forward(const float[:, :, :, ::1] x, const float[:, :, :, :, ::1] w,
                   const float[::1] b, stride, pad):
    cdef Py_ssize_t sl = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pl = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t c_in = x.shape[0], l = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], kl = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t lo_n = (l + 2 * pl - kl) // sl + 1
    cdef Py_ssize_t ho_n = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t wo_n = (wd + 2 * pw - kw) // sw + 1

    acc_arr = np.zeros((c_out, lo_n, ho_n, wo_n), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t co, ci, dl, dh, dw, lo, ho, wo, li, hi, wi
    cdef Py_ssize_t l0, l1, h0, h1, w0, w1
    cdef double wv

    with nogil:
        for co in range(c_out):
            for ci in range(c_in):
                for dl in range(kl):
                    l0 = _start(pl, dl, sl); l1 = _end(l, pl, dl, sl, lo_n)
                    for dh in range(kh):
                        h0 = _start(ph, dh, sh); h1 = _end(h, ph, dh, sh, ho_n)
                        for dw in range(kw):
                            w0 = _start(pw, dw, sw); w1 = _end(wd, pw, dw, sw, wo_n)
                            wv = w[co, ci, dl, dh, dw]
                            for lo in range(l0, l1):
                                li = lo * sl - pl + dl
                                for ho in range(h0, h1):
                                    hi = ho * sh - ph + dh
                                    for wo in range(w0, w1):
                                        wi = wo * sw - pw + dw
                                        acc[co, lo, ho, wo] += wv * x[ci, li, hi, wi]
            for lo in range(lo_n):
                for ho in range(ho_n):
                    for wo in range(wo_n):
                        acc[co, lo, ho, wo] += b[co]
    return acc_arr.astype(np.float32)


def conv3d_backward(const float[:, :, :, ::1] gy, const float[:, :, :, ::1] x,
                    const float[:, :, :, :, ::1] w, stride, pad):
    cdef Py_ssize_t sl = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pl = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t c_in = x.shape[0], l = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], kl = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t lo_n = gy.shape[1], ho_n = gy.shape[2], wo_n = gy.shape[3]

    gx_arr = np.zeros((c_in, l, h, wd), dtype=np.float64)
    gw_arr = np.zeros((c_out, c_in, kl, kh, kw), dtype=np.float64)
    gb_arr = np.zeros(c_out, dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t co, ci, dl, dh, dw, lo, ho, wo, li, hi, wi
    cdef Py_ssize_t l0, l1, h0, h1, w0, w1
    cdef double wv, g, acc_w, acc_b

    with nogil:
        for co in range(c_out):
            acc_b = 0.0
            for lo in range(lo_n):
                for ho in range(ho_n):
                    for wo in range(wo_n):
                        acc_b += gy[co, lo, ho, wo]
            gb[co] = acc_b
            for ci in range(c_in):
                for dl in range(kl):
                    l0 = _start(pl, dl, sl); l1 = _end(l, pl, dl, sl, lo_n)
                    for dh in range(kh):
                        h0 = _start(ph, dh, sh); h1 = _end(h, ph, dh, sh, ho_n)
                        for dw in range(kw):
                            w0 = _start(pw, dw, sw); w1 = _end(wd, pw, dw, sw, wo_n)
                            wv = w[co, ci, dl, dh, dw]
                            acc_w = 0.0
                            for lo in range(l0, l1):
                                li = lo * sl - pl + dl
                                for ho in range(h0, h1):
                                    hi = ho * sh - ph + dh
                                    for wo in range(w0, w1):
                                        wi = wo * sw - pw + dw
                                        g = gy[co, lo, ho, wo]
                                        acc_w += g * x[ci, li, hi, wi]
                                        gx[ci, li, hi, wi] += wv * g
                            gw[co, ci, dl, dh, dw] = acc_w
    return (gx_arr.astype(np.float32), gw_arr.astype(np.float32),
            gb_arr.astype(np.float32))


def maxpool3d_forward(const float[:, :, :, ::1] x, kernel):
    cdef Py_ssize_t kt = kernel[0], kh = kernel[1], kw = kernel[2]
    cdef Py_ssize_t c = x.shape[0], l = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t lo_n = l // kt, ho_n = h // kh, wo_n = wd // kw

    y_arr = np.empty((c, lo_n, ho_n, wo_n), dtype=np.float32)
    idx_arr = np.empty((c, lo_n, ho_n, wo_n), dtype=np.int64)
    cdef float[:, :, :, ::1] y = y_arr
    cdef long long[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t ci, lo, ho, wo, dt, dh, dw, li, hi, wi, best_flat
    cdef float v, best

    with nogil:
        for ci in range(c):
            for lo in range(lo_n):
                for ho in range(ho_n):
                    for wo in range(wo_n):
                        best = x[ci, lo * kt, ho * kh, wo * kw]
                        best_flat = ((ci * l + lo * kt) * h + ho * kh) * wd + wo * kw
                        for dt in range(kt):
                            li = lo * kt + dt
                            for dh in range(kh):
                                hi = ho * kh + dh
                                for dw in range(kw):
                                    wi = wo * kw + dw
                                    v = x[ci, li, hi, wi]
                                    if v > best:
                                        best = v
                                        best_flat = ((ci * l + li) * h + hi) * wd + wi
                        y[ci, lo, ho, wo] = best
                        idx[ci, lo, ho, wo] = best_flat
    return y_arr, idx_arr


def maxpool3d_backward(const float[:, :, :, ::1] gy, const long long[:, :, :, ::1] idx,
                       in_shape):
    gx_arr = np.zeros(in_shape, dtype=np.float32)
    cdef float[::1] gx = gx_arr.reshape(-1)
    cdef Py_ssize_t c = gy.shape[0], lo_n = gy.shape[1], ho_n = gy.shape[2], wo_n = gy.shape[3]
    cdef Py_ssize_t ci, lo, ho, wo
    with nogil:
        for ci in range(c):
            for lo in range(lo_n):
                for ho in range(ho_n):
                    for wo in range(wo_n):
                        gx[idx[ci, lo, ho, wo]] = gy[ci, lo, ho, wo]
    return gx_arr


def cdc_forward(const float[:, :, :, ::1] x, const float[:, :, :, :, ::1] f,
                const float[::1] b, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t c_in = x.shape[0], l = x.shape[1], kh = x.shape[2], kw = x.shape[3]
    cdef Py_ssize_t c_out = f.shape[0], kl = f.shape[2]
    cdef Py_ssize_t l_out = (l - 1) * stride - 2 * pad + kl

    acc_arr = np.zeros((c_out, l_out), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    cdef Py_ssize_t co, ci, j, t, a, bb, slot, t0, t1
    cdef double s

    with nogil:
        for co in range(c_out):
            for ci in range(c_in):
                for j in range(kl):
                    t0 = _start(pad, j, stride)
                    t1 = _end(l_out, pad, j, stride, l)
                    for t in range(t0, t1):
                        slot = t * stride - pad + j
                        s = 0.0
                        for a in range(kh):
                            for bb in range(kw):
                                s += f[co, ci, j, a, bb] * x[ci, t, a, bb]
                        acc[co, slot] += s
            for slot in range(l_out):
                acc[co, slot] += b[co]
    return acc_arr.astype(np.float32).reshape(c_out, l_out, 1, 1)


def cdc_backward(const float[:, :, :, ::1] gy_in, const float[:, :, :, ::1] x,
                 const float[:, :, :, :, ::1] f, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t c_in = x.shape[0], l = x.shape[1], kh = x.shape[2], kw = x.shape[3]
    cdef Py_ssize_t c_out = f.shape[0], kl = f.shape[2]
    cdef Py_ssize_t l_out = gy_in.shape[1]

    gy_arr = np.ascontiguousarray(np.asarray(gy_in).reshape(c_out, l_out))
    cdef float[:, ::1] gy = gy_arr
    gx_arr = np.zeros((c_in, l, kh, kw), dtype=np.float64)
    gf_arr = np.zeros((c_out, c_in, kl, kh, kw), dtype=np.float64)
    gb_arr = np.zeros(c_out, dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, :, ::1] gf = gf_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t co, ci, j, t, a, bb, slot, t0, t1
    cdef double g, acc_b

    with nogil:
        for co in range(c_out):
            acc_b = 0.0
            for slot in range(l_out):
                acc_b += gy[co, slot]
            gb[co] = acc_b
            for ci in range(c_in):
                for j in range(kl):
                    t0 = _start(pad, j, stride)
                    t1 = _end(l_out, pad, j, stride, l)
                    for t in range(t0, t1):
                        slot = t * stride - pad + j
                        g = gy[co, slot]
                        for a in range(kh):
                            for bb in range(kw):
                                gx[ci, t, a, bb] += f[co, ci, j, a, bb] * g
                                gf[co, ci, j, a, bb] += x[ci, t, a, bb] * g
    return (gx_arr.astype(np.float32), gf_arr.astype(np.float32),
            gb_arr.astype(np.float32))
