"""Convolution primitives shared by the layer classes.

All activations are maps-major arrays of shape (C, N, H, W). The two hot
kernel shapes, (1, L) along the time axis and (D, 1) along the contact axis,
get dedicated GEMM formulations; the general (D, L) case falls back to a
per-tap loop and is only meant for small reference inputs.

Time-axis convolutions are lowered with im2col: a (C*L, N*H*W_out) column
matrix multiplied by the (F, C*L) kernel. Contact-axis convolutions are
lowered to a banded block-Toeplitz matrix T of shape (F*H_out, C*H) applied
to the input reshaped as (C*H, N*W); both directions of the backward pass
reuse T. Output index m takes contributions from input index m + off - i for
tap i, with off = length // 2 for "same" padding and off = length - 1 for
"valid"; the kernel is applied unflipped.
"""

from __future__ import annotations

import numpy as np

# Above this many rows the im2col-over-dy matrix for the input gradient gets
# large and slow to build, and the scatter-add formulation wins.
_DX_COL_ROWS_LIMIT = 1024


def conv_offset(length: int, padding: str) -> int:
    if padding == "same":
        return length // 2
    if padding == "valid":
        return length - 1
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv_out_len(length: int, in_len: int, padding: str) -> int:
    if padding == "same":
        return in_len
    return in_len - length + 1


def im2col_time(x: np.ndarray, length: int, off: int, out_w: int) -> np.ndarray:
    """Column matrix for a time-axis convolution.

    Returns shape (C, length, N, H, out_w) where entry [c, j, n, h, w] is
    x[c, n, h, w + off - j], zero when the source index falls outside the
    signal.
    """
    c, n, h, w_in = x.shape
    cols = np.empty((c, length, n, h, out_w), dtype=x.dtype)
    for j in range(length):
        shift = off - j
        lo = max(0, -shift)
        hi = min(out_w, w_in - shift)
        tap = cols[:, j]
        if lo > 0:
            tap[..., :lo] = 0
        if hi < out_w:
            tap[..., max(hi, 0):] = 0
        if hi > lo:
            tap[..., lo:hi] = x[..., lo + shift:hi + shift]
    return cols


def col2im_time(dcols: np.ndarray, w_in: int, off: int) -> np.ndarray:
    """Adjoint of im2col_time: scatter-add columns back onto the signal."""
    c, length, n, h, out_w = dcols.shape
    dx = np.zeros((c, n, h, w_in), dtype=dcols.dtype)
    for j in range(length):
        shift = off - j
        lo = max(0, -shift)
        hi = min(out_w, w_in - shift)
        if hi > lo:
            dx[..., lo + shift:hi + shift] += dcols[:, j, :, :, lo:hi]
    return dx


def conv_time_forward(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, padding: str
):
    """(1, L) convolution along the last axis. Returns (y, cols)."""
    c, n, h, w_in = x.shape
    f, ck, length = kernel.shape
    if ck != c:
        raise ValueError(f"kernel expects {ck} input maps, got {c}")
    off = conv_offset(length, padding)
    out_w = conv_out_len(length, w_in, padding)
    if out_w < 1:
        raise ValueError(f"kernel length {length} exceeds input width {w_in}")
    cols = im2col_time(x, length, off, out_w)
    y = kernel.reshape(f, c * length) @ cols.reshape(c * length, n * h * out_w)
    y = y.reshape(f, n, h, out_w)
    if bias is not None:
        y += bias[:, None, None, None]
    return y, cols


def conv_time_backward(
    dy: np.ndarray,
    x_shape: tuple,
    kernel: np.ndarray,
    cols: np.ndarray,
    padding: str,
    need_dx: bool,
):
    """Gradients of conv_time_forward. Returns (dx, dk, db)."""
    c, n, h, w_in = x_shape
    f, _, length = kernel.shape
    off = conv_offset(length, padding)
    out_w = dy.shape[-1]
    dyf = dy.reshape(f, n * h * out_w)
    dk = (dyf @ cols.reshape(c * length, -1).T).reshape(f, c, length)
    db = dy.sum(axis=(1, 2, 3))
    if not need_dx:
        return None, dk, db
    if f * length <= _DX_COL_ROWS_LIMIT:
        # dx[s] = sum_{f,j} k[f,c,j] dy[f, s - off + j]: the same im2col
        # machinery over dy with the mirrored offset and a flipped kernel.
        cols_d = im2col_time(dy, length, length - 1 - off, w_in)
        k_flip = kernel[:, :, ::-1].transpose(1, 0, 2).reshape(c, f * length)
        dx = (k_flip @ cols_d.reshape(f * length, -1)).reshape(c, n, h, w_in)
    else:
        dcols = kernel.reshape(f, c * length).T @ dyf
        dx = col2im_time(dcols.reshape(c, length, n, h, out_w), w_in, off)
    return dx, dk, db


def make_row_toeplitz(
    kernel: np.ndarray, h_in: int, off: int, h_out: int
) -> np.ndarray:
    """Banded matrix T with T[f*h_out + m, c*h_in + h] = k[f, c, i] where
    h = m + off - i. Shape (F*h_out, C*h_in)."""
    f, c, depth = kernel.shape
    t4 = np.zeros((f, h_out, c, h_in), dtype=kernel.dtype)
    for i in range(depth):
        d = off - i
        lo = max(0, -d)
        hi = min(h_out, h_in - d)
        if hi > lo:
            m = np.arange(lo, hi)
            t4[:, m, :, m + d] = kernel[:, :, i]
    return t4.reshape(f * h_out, c * h_in)


def row_toeplitz_band_sum(
    dt: np.ndarray, kernel_shape: tuple, h_in: int, off: int, h_out: int
) -> np.ndarray:
    """Collapse a dense gradient of the Toeplitz matrix back to kernel taps."""
    f, c, depth = kernel_shape
    dt4 = dt.reshape(f, h_out, c, h_in)
    dk = np.zeros(kernel_shape, dtype=dt.dtype)
    for i in range(depth):
        d = off - i
        lo = max(0, -d)
        hi = min(h_out, h_in - d)
        if hi > lo:
            m = np.arange(lo, hi)
            dk[:, :, i] = dt4[:, m, :, m + d].sum(axis=0)
    return dk


def maps_to_rowmat(x: np.ndarray) -> np.ndarray:
    """(C, N, H, W) -> contiguous (C*H, N*W)."""
    c, n, h, w = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(c * h, n * w)


def rowmat_to_maps(m: np.ndarray, c: int, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(m.reshape(c, h, n, w).transpose(0, 2, 1, 3))


def conv_rows_forward(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, padding: str
):
    """(D, 1) convolution along the contact axis. Returns (y, (t, xcr))."""
    c, n, h_in, w = x.shape
    f, ck, depth = kernel.shape
    if ck != c:
        raise ValueError(f"kernel expects {ck} input maps, got {c}")
    off = conv_offset(depth, padding)
    h_out = conv_out_len(depth, h_in, padding)
    if h_out < 1:
        raise ValueError(f"kernel depth {depth} exceeds input height {h_in}")
    t = make_row_toeplitz(kernel, h_in, off, h_out)
    xcr = maps_to_rowmat(x)
    y = rowmat_to_maps(t @ xcr, f, n, h_out, w)
    if bias is not None:
        y += bias[:, None, None, None]
    return y, (t, xcr)


def conv_rows_backward(
    dy: np.ndarray,
    x_shape: tuple,
    kernel: np.ndarray,
    cache: tuple,
    padding: str,
    need_dx: bool,
):
    c, n, h_in, w = x_shape
    f, _, depth = kernel.shape
    off = conv_offset(depth, padding)
    h_out = dy.shape[2]
    t, xcr = cache
    dycr = maps_to_rowmat(dy)
    dt = dycr @ xcr.T
    dk = row_toeplitz_band_sum(dt, kernel.shape, h_in, off, h_out)
    db = dy.sum(axis=(1, 2, 3))
    dx = None
    if need_dx:
        dx = rowmat_to_maps(t.T @ dycr, c, n, h_in, w)
    return dx, dk, db


def make_depthwise_band(
    kernel: np.ndarray, h_in: int, off: int, h_out: int
) -> np.ndarray:
    """Banded per-channel matrices for contact-axis convolution.

    kernel has shape (C, mult, D); channel c with multiplier slot m' writes
    output map c*mult + m'. Returned array has shape (C, mult*h_out, h_in):
    slab c maps channel c alone, so a batched matmul stays at the true cost
    instead of multiplying through a mostly-zero block diagonal.
    """
    c, mult, depth = kernel.shape
    td = np.zeros((c, mult, h_out, h_in), dtype=kernel.dtype)
    for i in range(depth):
        d = off - i
        lo = max(0, -d)
        hi = min(h_out, h_in - d)
        if hi > lo:
            m = np.arange(lo, hi)
            td[:, :, m, m + d] = kernel[:, :, i, None]
    return td.reshape(c, mult * h_out, h_in)


def conv_depthwise_rows_forward(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, padding: str
):
    c, n, h_in, w = x.shape
    ck, mult, depth = kernel.shape
    if ck != c:
        raise ValueError(f"kernel expects {ck} input maps, got {c}")
    off = conv_offset(depth, padding)
    h_out = conv_out_len(depth, h_in, padding)
    if h_out < 1:
        raise ValueError(f"kernel depth {depth} exceeds input height {h_in}")
    band = make_depthwise_band(kernel, h_in, off, h_out)
    xr = np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(c, h_in, n * w)
    y = band @ xr
    y = np.ascontiguousarray(
        y.reshape(c, mult, h_out, n, w).transpose(0, 1, 3, 2, 4)
    ).reshape(c * mult, n, h_out, w)
    if bias is not None:
        y += bias[:, None, None, None]
    return y, (band, xr)


def conv_depthwise_rows_backward(
    dy: np.ndarray,
    x_shape: tuple,
    kernel: np.ndarray,
    cache: tuple,
    padding: str,
    need_dx: bool,
):
    c, n, h_in, w = x_shape
    ck, mult, depth = kernel.shape
    off = conv_offset(depth, padding)
    h_out = dy.shape[2]
    band, xr = cache
    dyr = np.ascontiguousarray(
        dy.reshape(c, mult, n, h_out, w).transpose(0, 1, 3, 2, 4)
    ).reshape(c, mult * h_out, n * w)
    dband = dyr @ xr.transpose(0, 2, 1)
    dtd = dband.reshape(c, mult, h_out, h_in)
    dk = np.zeros_like(kernel)
    for i in range(depth):
        d = off - i
        lo = max(0, -d)
        hi = min(h_out, h_in - d)
        if hi > lo:
            m = np.arange(lo, hi)
            dk[:, :, i] = dtd[:, :, m, m + d].sum(axis=2)
    db = dy.sum(axis=(1, 2, 3))
    dx = None
    if need_dx:
        dxr = band.transpose(0, 2, 1) @ dyr
        dx = np.ascontiguousarray(
            dxr.reshape(c, h_in, n, w).transpose(0, 2, 1, 3)
        )
    return dx, dk, db


def conv_general_forward(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, padding: str
):
    """Reference path for kernels extended along both axes. Loops over taps;
    fine for test-sized inputs, not used by the shipped architectures."""
    c, n, h_in, w_in = x.shape
    f, ck, depth, length = kernel.shape
    if ck != c:
        raise ValueError(f"kernel expects {ck} input maps, got {c}")
    off_h = conv_offset(depth, padding)
    off_w = conv_offset(length, padding)
    h_out = conv_out_len(depth, h_in, padding)
    out_w = conv_out_len(length, w_in, padding)
    if h_out < 1 or out_w < 1:
        raise ValueError("kernel larger than input")
    y = np.zeros((f, n, h_out, out_w), dtype=x.dtype)
    for i in range(depth):
        dh = off_h - i
        m_lo, m_hi = max(0, -dh), min(h_out, h_in - dh)
        if m_hi <= m_lo:
            continue
        for j in range(length):
            dw = off_w - j
            w_lo, w_hi = max(0, -dw), min(out_w, w_in - dw)
            if w_hi <= w_lo:
                continue
            piece = x[:, :, m_lo + dh:m_hi + dh, w_lo + dw:w_hi + dw]
            y[:, :, m_lo:m_hi, w_lo:w_hi] += np.einsum(
                "fc,cnhw->fnhw", kernel[:, :, i, j], piece, optimize=True
            )
    if bias is not None:
        y += bias[:, None, None, None]
    return y, x


def conv_general_backward(
    dy: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    padding: str,
    need_dx: bool,
):
    c, n, h_in, w_in = x.shape
    f, _, depth, length = kernel.shape
    off_h = conv_offset(depth, padding)
    off_w = conv_offset(length, padding)
    h_out, out_w = dy.shape[2], dy.shape[3]
    dk = np.zeros_like(kernel)
    dx = np.zeros_like(x) if need_dx else None
    for i in range(depth):
        dh = off_h - i
        m_lo, m_hi = max(0, -dh), min(h_out, h_in - dh)
        if m_hi <= m_lo:
            continue
        for j in range(length):
            dw = off_w - j
            w_lo, w_hi = max(0, -dw), min(out_w, w_in - dw)
            if w_hi <= w_lo:
                continue
            xs = x[:, :, m_lo + dh:m_hi + dh, w_lo + dw:w_hi + dw]
            dys = dy[:, :, m_lo:m_hi, w_lo:w_hi]
            dk[:, :, i, j] = np.einsum("fnhw,cnhw->fc", dys, xs, optimize=True)
            if need_dx:
                dx[:, :, m_lo + dh:m_hi + dh, w_lo + dw:w_hi + dw] += np.einsum(
                    "fc,fnhw->cnhw", kernel[:, :, i, j], dys, optimize=True
                )
    db = dy.sum(axis=(1, 2, 3))
    return dx, dk, db


def fan_in_uniform(
    rng: np.random.Generator, shape: tuple, fan_in: int, dtype, gain: float = 1.0
):
    """Uniform(-gain/sqrt(fan_in), gain/sqrt(fan_in)) initialization.

    The default gain suits affine and gated layers. Convolutions feeding
    rectifier stacks pass gain = sqrt(6), which keeps activation variance
    roughly constant through deep unnormalized chains.
    """
    limit = gain / np.sqrt(float(fan_in))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
