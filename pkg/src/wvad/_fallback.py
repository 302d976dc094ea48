"""Pure numpy implementation of the convolution kernels.

Same call signatures and results as the compiled ``_kernels`` module; used
when the extension is unavailable or ``WVAD_BACKEND=python`` is set.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, kernel_size, stride, pad):
    # (C, T_out, K) view over the zero-padded input
    xp = np.pad(x, ((0, 0), (pad, pad))) if pad else x
    return sliding_window_view(xp, kernel_size, axis=1)[:, ::stride, :]


def conv_forward(x, w, b, stride, pad):
    win = _windows(x, w.shape[2], stride, pad)
    out = np.tensordot(w, win, axes=([1, 2], [0, 2]))
    out += b[:, None]
    return np.ascontiguousarray(out, dtype=x.dtype)


def conv_backward(x, w, gz, stride, pad, need_input_grad=True):
    K = w.shape[2]
    win = _windows(x, K, stride, pad)
    gw = np.tensordot(gz, win, axes=([1], [1])).astype(x.dtype, copy=False)
    gb = gz.sum(axis=1, dtype=np.float64).astype(x.dtype)
    if not need_input_grad:
        return None, gw, gb
    t_out = gz.shape[1]
    gcols = np.tensordot(w, gz, axes=([0], [0]))  # (C, K, T_out)
    gxp = np.zeros((x.shape[0], x.shape[1] + 2 * pad), dtype=x.dtype)
    span = stride * (t_out - 1) + 1
    for k in range(K):
        gxp[:, k:k + span:stride] += gcols[:, k, :]
    gx = gxp[:, pad:pad + x.shape[1]] if pad else gxp
    return np.ascontiguousarray(gx), gw, gb
