# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled multi-channel 1D convolution kernels.

Inputs are expanded into column blocks (one row per output time step) and
contracted against the kernel matrix with BLAS gemm. Both float32 and
float64 are supported through a fused type; callers guarantee C-contiguous
arrays of matching dtype and validated shapes.
"""
import numpy as np
from scipy.linalg.cython_blas cimport sgemm, dgemm

ctypedef fused real:
    float
    double

# target size in elements of one column block
cdef enum:
    BLOCK_ELEMS = 262144


cdef inline void _gemm(char* ta, char* tb, int m, int n, int k,
                       real* a, int lda, real* b, int ldb,
                       real beta, real* c, int ldc) noexcept nogil:
    cdef real alpha = 1
    if real is float:
        sgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline Py_ssize_t _block_cols(Py_ssize_t ck, Py_ssize_t t_out) noexcept nogil:
    cdef Py_ssize_t nb = BLOCK_ELEMS // ck
    if nb < 16:
        nb = 16
    if nb > t_out:
        nb = t_out
    return nb


cdef void _fill_block(const real[:, ::1] x, real[:, ::1] cols, Py_ssize_t t0,
                      Py_ssize_t nb, Py_ssize_t K, Py_ssize_t stride,
                      Py_ssize_t pad) noexcept nogil:
    cdef Py_ssize_t C = x.shape[0], L = x.shape[1]
    cdef Py_ssize_t j, i, k, p0, p
    for j in range(nb):
        p0 = (t0 + j) * stride - pad
        for i in range(C):
            if p0 >= 0 and p0 + K <= L:
                for k in range(K):
                    cols[j, i * K + k] = x[i, p0 + k]
            else:
                for k in range(K):
                    p = p0 + k
                    if 0 <= p < L:
                        cols[j, i * K + k] = x[i, p]
                    else:
                        cols[j, i * K + k] = 0


def conv_forward(const real[:, ::1] x, const real[:, :, ::1] w,
                 const real[::1] b, Py_ssize_t stride, Py_ssize_t pad):
    """Pre-activation output ``b[o] + sum_{i,k} w[o,i,k] * xpad[i, t*stride+k]``."""
    cdef Py_ssize_t O = w.shape[0], C = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t L = x.shape[1]
    cdef Py_ssize_t t_out = (L + 2 * pad - K) // stride + 1
    cdef Py_ssize_t ck = C * K
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((O, t_out), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t nb = _block_cols(ck, t_out)
    cols_arr = np.empty((nb, ck), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t t0, n, o, t
    with nogil:
        t0 = 0
        while t0 < t_out:
            n = nb if t0 + nb <= t_out else t_out - t0
            _fill_block(x, cols, t0, n, K, stride, pad)
            _gemm(b"T", b"N", <int>n, <int>O, <int>ck,
                  &cols[0, 0], <int>ck, <real*>&w[0, 0, 0], <int>ck,
                  0, &out[0, t0], <int>t_out)
            t0 += n
        for o in range(O):
            for t in range(t_out):
                out[o, t] += b[o]
    return out_arr


def conv_backward(const real[:, ::1] x, const real[:, :, ::1] w,
                  const real[:, ::1] gz, Py_ssize_t stride, Py_ssize_t pad,
                  bint need_input_grad=True):
    """Gradients of ``sum(gz * conv_forward(x, w, b))`` w.r.t. x, w and b."""
    cdef Py_ssize_t O = w.shape[0], C = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t L = x.shape[1]
    cdef Py_ssize_t t_out = gz.shape[1]
    cdef Py_ssize_t ck = C * K
    dtype = np.float32 if real is float else np.float64
    gw_arr = np.zeros((O, C, K), dtype=dtype)
    gb_arr = np.empty(O, dtype=dtype)
    cdef real[:, :, ::1] gw = gw_arr
    cdef real[::1] gb = gb_arr
    cdef Py_ssize_t nb = _block_cols(ck, t_out)
    cols_arr = np.empty((nb, ck), dtype=dtype)
    gcols_arr = np.empty((nb, ck), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef real[:, ::1] gcols = gcols_arr
    cdef real[:, ::1] gx
    gx_arr = None
    if need_input_grad:
        gx_arr = np.zeros((C, L), dtype=dtype)
        gx = gx_arr
    cdef Py_ssize_t t0, n, o, t, j, i, k, p
    cdef double acc
    with nogil:
        for o in range(O):
            acc = 0.0
            for t in range(t_out):
                acc += gz[o, t]
            gb[o] = <real>acc
        t0 = 0
        while t0 < t_out:
            n = nb if t0 + nb <= t_out else t_out - t0
            _fill_block(x, cols, t0, n, K, stride, pad)
            _gemm(b"N", b"N", <int>ck, <int>O, <int>n,
                  &cols[0, 0], <int>ck, <real*>&gz[0, t0], <int>t_out,
                  1, &gw[0, 0, 0], <int>ck)
            if need_input_grad:
                _gemm(b"N", b"T", <int>ck, <int>n, <int>O,
                      <real*>&w[0, 0, 0], <int>ck, <real*>&gz[0, t0], <int>t_out,
                      0, &gcols[0, 0], <int>ck)
                for j in range(n):
                    for i in range(C):
                        for k in range(K):
                            p = (t0 + j) * stride - pad + k
                            if 0 <= p < L:
                                gx[i, p] += gcols[j, i * K + k]
            t0 += n
    return gx_arr, gw_arr, gb_arr
