"""NumPy implementations of the hot kernels.

This backend is the import-time fallback when the compiled extension is not
available, and it is also the 64-bit verification path: it preserves the
input dtype, so feeding float64 arrays runs the whole stack in double
precision.  The convolution uses patch gathering plus one BLAS matmul; all
reductions accumulate in float64 regardless of the storage dtype.
"""

import numpy as np


def _out_extent(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def _gather_patches(x, kernel, stride, pad):
    """Stack the kernel-sized patches of a padded (C,L,H,W) input.

    Returns an array of shape (C*kl*kh*kw, Lo*Ho*Wo) in float64 plus the
    output extents.
    """
    c, l, h, w = x.shape
    kl, kh, kw = kernel
    sl, sh, sw = stride
    pl, ph, pw = pad
    lo = _out_extent(l, kl, sl, pl)
    ho = _out_extent(h, kh, sh, ph)
    wo = _out_extent(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (pl, pl), (ph, ph), (pw, pw))).astype(np.float64)
    cols = np.empty((c, kl, kh, kw, lo, ho, wo), dtype=np.float64)
    for dl in range(kl):
        for dh in range(kh):
            for dw in range(kw):
                cols[:, dl, dh, dw] = xp[
                    :,
                    dl : dl + lo * sl : sl,
                    dh : dh + ho * sh : sh,
                    dw : dw + wo * sw : sw,
                ]
    return cols.reshape(c * kl * kh * kw, lo * ho * wo), (lo, ho, wo)


def conv3d_forward(x, w, b, stride, pad):
    c_out = w.shape[0]
    cols, (lo, ho, wo) = _gather_patches(x, w.shape[2:], stride, pad)
    w2 = w.reshape(c_out, -1).astype(np.float64)
    y = w2 @ cols + b.astype(np.float64)[:, None]
    return y.reshape(c_out, lo, ho, wo).astype(x.dtype)


def conv3d_backward(gy, x, w, stride, pad):
    c_in, l, h, w_in = x.shape
    c_out, _, kl, kh, kw = w.shape
    sl, sh, sw = stride
    pl, ph, pw = pad
    lo, ho, wo = gy.shape[1:]
    g2 = gy.reshape(c_out, -1).astype(np.float64)

    gb = g2.sum(axis=1)

    cols, _ = _gather_patches(x, (kl, kh, kw), stride, pad)
    gw = (g2 @ cols.T).reshape(w.shape)

    # Scatter-add the weighted gradient back through each kernel offset.
    gcols = (w.reshape(c_out, -1).astype(np.float64).T @ g2).reshape(
        c_in, kl, kh, kw, lo, ho, wo
    )
    gxp = np.zeros((c_in, l + 2 * pl, h + 2 * ph, w_in + 2 * pw), dtype=np.float64)
    for dl in range(kl):
        for dh in range(kh):
            for dw in range(kw):
                gxp[
                    :,
                    dl : dl + lo * sl : sl,
                    dh : dh + ho * sh : sh,
                    dw : dw + wo * sw : sw,
                ] += gcols[:, dl, dh, dw]
    gx = gxp[:, pl : pl + l, ph : ph + h, pw : pw + w_in]
    return gx.astype(x.dtype), gw.astype(x.dtype), gb.astype(x.dtype)


def maxpool3d_forward(x, kernel):
    """Max pooling with stride equal to the kernel (extents must divide).

    Ties go to the first occurrence in row-major scan order within each cell.
    Returns the pooled tensor plus an int64 record of flat argmax indices
    into the input, consumed by the backward pass.
    """
    c, l, h, w = x.shape
    kt, kh, kw = kernel
    lo, ho, wo = l // kt, h // kh, w // kw
    cells = x.reshape(c, lo, kt, ho, kh, wo, kw).transpose(0, 1, 3, 5, 2, 4, 6)
    flat_cells = cells.reshape(c, lo, ho, wo, kt * kh * kw)
    local = flat_cells.argmax(axis=-1)
    y = np.take_along_axis(flat_cells, local[..., None], axis=-1)[..., 0]

    dt, rem = np.divmod(local, kh * kw)
    dh, dw = np.divmod(rem, kw)
    ci, li, hi, wi = np.meshgrid(
        np.arange(c), np.arange(lo), np.arange(ho), np.arange(wo), indexing="ij"
    )
    idx = np.ravel_multi_index(
        (ci, li * kt + dt, hi * kh + dh, wi * kw + dw), x.shape
    ).astype(np.int64)
    return np.ascontiguousarray(y), idx


def maxpool3d_backward(gy, idx, in_shape):
    gx = np.zeros(int(np.prod(in_shape)), dtype=gy.dtype)
    # Argmax targets are unique across disjoint cells, so plain assignment.
    gx[idx.ravel()] = gy.ravel()
    return gx.reshape(in_shape)


def cdc_output_length(l_in, k, s, p):
    return (l_in - 1) * s - 2 * p + k


def cdc_forward(x, f, b, stride, pad):
    """Joint spatial-collapse / temporal-upsample filter.

    x: (C_in, L, kh, kw) with spatial extents equal to the filter's spatial
    kernel; f: (C_out, C_in, kl, kh, kw); returns (C_out, L_out, 1, 1).
    Every input step emits kl temporal outputs; overlapping slots add, the
    pad slots at both ends are discarded, and the bias is added once per
    output element.
    """
    c_in, l, kh, kw = x.shape
    c_out, _, kl, _, _ = f.shape
    l_out = cdc_output_length(l, kl, stride, pad)
    # Spatial contraction per time step: z[co, j, t].
    f2 = (
        f.transpose(0, 2, 1, 3, 4).reshape(c_out * kl, c_in * kh * kw).astype(np.float64)
    )
    x2 = x.transpose(1, 0, 2, 3).reshape(l, c_in * kh * kw).astype(np.float64)
    z = (f2 @ x2.T).reshape(c_out, kl, l)
    # Overlap-add into the unpadded slot range, then crop the padding.
    full = np.zeros((c_out, (l - 1) * stride + kl), dtype=np.float64)
    for j in range(kl):
        full[:, j : j + (l - 1) * stride + 1 : stride] += z[:, j, :]
    y = full[:, pad : pad + l_out] + b.astype(np.float64)[:, None]
    return y.reshape(c_out, l_out, 1, 1).astype(x.dtype)


def cdc_backward(gy, x, f, stride, pad):
    c_in, l, kh, kw = x.shape
    c_out, _, kl, _, _ = f.shape
    l_out = gy.shape[1]
    g = gy.reshape(c_out, l_out).astype(np.float64)

    gb = g.sum(axis=1)

    # Route output-slot gradients back to (sub-kernel, time) pairs; slots
    # removed by padding contribute nothing.
    full = np.zeros((c_out, (l - 1) * stride + kl), dtype=np.float64)
    full[:, pad : pad + l_out] = g
    gz = np.empty((c_out, kl, l), dtype=np.float64)
    for j in range(kl):
        gz[:, j, :] = full[:, j : j + (l - 1) * stride + 1 : stride]
    gz2 = gz.reshape(c_out * kl, l)

    f2 = (
        f.transpose(0, 2, 1, 3, 4).reshape(c_out * kl, c_in * kh * kw).astype(np.float64)
    )
    x2 = x.transpose(1, 0, 2, 3).reshape(l, c_in * kh * kw).astype(np.float64)

    gx = (f2.T @ gz2).reshape(c_in, kh, kw, l).transpose(0, 3, 1, 2)
    gf = (gz2 @ x2).reshape(c_out, kl, c_in, kh, kw).transpose(0, 2, 1, 3, 4)
    return (
        np.ascontiguousarray(gx).astype(x.dtype),
        np.ascontiguousarray(gf).astype(x.dtype),
        gb.astype(x.dtype),
    )
