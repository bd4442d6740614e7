# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU recurrence: the time loop of the forward pass and of
backpropagation through time, with per-step matrix products done by BLAS
and the gate arithmetic fused in C. Mirrors _gru_ref.py exactly; both
backends are interchangeable behind kernels.py."""

import numpy as np

cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, expf, tanh, tanhf

from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()


cdef inline floating _sigmoid(floating x) noexcept nogil:
    cdef floating e
    if floating is float:
        if x >= 0:
            return <floating>(1.0 / (1.0 + expf(-x)))
        e = expf(x)
        return e / (<floating>1.0 + e)
    else:
        if x >= 0:
            return 1.0 / (1.0 + exp(-x))
        e = exp(x)
        return e / (1.0 + e)


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return tanhf(x)
    else:
        return tanh(x)


cdef void _gemm_rm(bint trans_b, int m, int n, int k,
                   floating* a, floating* b, floating* c,
                   floating alpha, floating beta) noexcept nogil:
    """c(m,n) = alpha * a(m,k) @ op(b) + beta * c, row-major buffers.

    op(b) is b(k,n) when trans_b is 0, else b(n,k) transposed. Row-major
    products map onto Fortran BLAS by computing c^T = op(b)^T @ a^T.
    """
    cdef char tb = b'T' if trans_b else b'N'
    cdef char tn = b'N'
    cdef int lda = k if trans_b else n
    if floating is float:
        sgemm(&tb, &tn, &n, &m, &k, &alpha, b, &lda, a, &k, &beta, c, &n)
    else:
        dgemm(&tb, &tn, &n, &m, &k, &alpha, b, &lda, a, &k, &beta, c, &n)


cdef void _forward_core(floating[:, :, ::1] gx_z, floating[:, :, ::1] gx_r,
                        floating[:, :, ::1] gx_c, floating[:, ::1] h0,
                        floating[:, ::1] u_z, floating[:, ::1] u_r,
                        floating[:, ::1] u_c, floating[::1] b_z,
                        floating[::1] b_r, floating[::1] b_c,
                        floating[:, :, ::1] hs, floating[:, :, ::1] zs,
                        floating[:, :, ::1] rs, floating[:, :, ::1] cs,
                        floating[:, ::1] s_z, floating[:, ::1] s_r,
                        floating[:, ::1] s_c, floating[:, ::1] rh) noexcept nogil:
    cdef int T = gx_z.shape[0], B = gx_z.shape[1], H = gx_z.shape[2]
    cdef int t, i, j
    cdef floating* h_prev
    cdef floating z, r, c, h
    for t in range(T):
        h_prev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
        # gate pre-activations: input projection + recurrent projection
        for i in range(B):
            for j in range(H):
                s_z[i, j] = gx_z[t, i, j] + b_z[j]
                s_r[i, j] = gx_r[t, i, j] + b_r[j]
        _gemm_rm(1, B, H, H, h_prev, &u_z[0, 0], &s_z[0, 0], <floating>1.0, <floating>1.0)
        _gemm_rm(1, B, H, H, h_prev, &u_r[0, 0], &s_r[0, 0], <floating>1.0, <floating>1.0)
        for i in range(B):
            for j in range(H):
                z = _sigmoid(s_z[i, j])
                r = _sigmoid(s_r[i, j])
                zs[t, i, j] = z
                rs[t, i, j] = r
                rh[i, j] = r * h_prev[i * H + j]
                s_c[i, j] = gx_c[t, i, j] + b_c[j]
        _gemm_rm(1, B, H, H, &rh[0, 0], &u_c[0, 0], &s_c[0, 0], <floating>1.0, <floating>1.0)
        for i in range(B):
            for j in range(H):
                c = _tanh(s_c[i, j])
                cs[t, i, j] = c
                z = zs[t, i, j]
                h = z * h_prev[i * H + j] + (<floating>1.0 - z) * c
                hs[t, i, j] = h


def recurrence_forward(floating[:, :, ::1] gx_z, floating[:, :, ::1] gx_r,
                       floating[:, :, ::1] gx_c, floating[:, ::1] h0,
                       floating[:, ::1] u_z, floating[:, ::1] u_r,
                       floating[:, ::1] u_c, floating[::1] b_z,
                       floating[::1] b_r, floating[::1] b_c):
    dtype = np.float32 if floating is float else np.float64
    shape = (gx_z.shape[0], gx_z.shape[1], gx_z.shape[2])
    hs = np.empty(shape, dtype=dtype)
    zs = np.empty(shape, dtype=dtype)
    rs = np.empty(shape, dtype=dtype)
    cs = np.empty(shape, dtype=dtype)
    scratch = np.empty((4, shape[1], shape[2]), dtype=dtype)
    cdef floating[:, :, ::1] hs_v = hs, zs_v = zs, rs_v = rs, cs_v = cs
    cdef floating[:, :, ::1] sc = scratch
    with nogil:
        _forward_core(gx_z, gx_r, gx_c, h0, u_z, u_r, u_c, b_z, b_r, b_c,
                      hs_v, zs_v, rs_v, cs_v,
                      sc[0], sc[1], sc[2], sc[3])
    return hs, zs, rs, cs


cdef void _backward_core(floating[:, :, ::1] dhs, floating[:, :, ::1] hs,
                         floating[:, :, ::1] zs, floating[:, :, ::1] rs,
                         floating[:, :, ::1] cs, floating[:, ::1] h0,
                         floating[:, ::1] u_z, floating[:, ::1] u_r,
                         floating[:, ::1] u_c,
                         floating[:, :, ::1] dsz, floating[:, :, ::1] dsr,
                         floating[:, :, ::1] dsc, floating[:, ::1] carry,
                         floating[:, ::1] dh_buf, floating[:, ::1] d_rh) noexcept nogil:
    cdef int T = dhs.shape[0], B = dhs.shape[1], H = dhs.shape[2]
    cdef int t, i, j
    cdef floating* h_prev
    cdef floating dh, z, r, c, dc
    for i in range(B):
        for j in range(H):
            carry[i, j] = <floating>0.0
    for t in range(T - 1, -1, -1):
        h_prev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
        for i in range(B):
            for j in range(H):
                dh = dhs[t, i, j] + carry[i, j]
                dh_buf[i, j] = dh
                z = zs[t, i, j]
                c = cs[t, i, j]
                dc = dh * (<floating>1.0 - z)
                dsc[t, i, j] = dc * (<floating>1.0 - c * c)
        # d(r * h_prev) = dsc @ u_c
        _gemm_rm(0, B, H, H, &dsc[t, 0, 0], &u_c[0, 0], &d_rh[0, 0],
                 <floating>1.0, <floating>0.0)
        for i in range(B):
            for j in range(H):
                z = zs[t, i, j]
                r = rs[t, i, j]
                c = cs[t, i, j]
                dh = dh_buf[i, j]
                dsr[t, i, j] = d_rh[i, j] * h_prev[i * H + j] * r * (<floating>1.0 - r)
                dsz[t, i, j] = dh * (h_prev[i * H + j] - c) * z * (<floating>1.0 - z)
                carry[i, j] = dh * z + d_rh[i, j] * r
        _gemm_rm(0, B, H, H, &dsr[t, 0, 0], &u_r[0, 0], &carry[0, 0],
                 <floating>1.0, <floating>1.0)
        _gemm_rm(0, B, H, H, &dsz[t, 0, 0], &u_z[0, 0], &carry[0, 0],
                 <floating>1.0, <floating>1.0)


def recurrence_backward(floating[:, :, ::1] dhs, floating[:, :, ::1] hs,
                        floating[:, :, ::1] zs, floating[:, :, ::1] rs,
                        floating[:, :, ::1] cs, floating[:, ::1] h0,
                        floating[:, ::1] u_z, floating[:, ::1] u_r,
                        floating[:, ::1] u_c):
    dtype = np.float32 if floating is float else np.float64
    shape = (dhs.shape[0], dhs.shape[1], dhs.shape[2])
    dsz = np.empty(shape, dtype=dtype)
    dsr = np.empty(shape, dtype=dtype)
    dsc = np.empty(shape, dtype=dtype)
    carry = np.empty((shape[1], shape[2]), dtype=dtype)
    scratch = np.empty((2, shape[1], shape[2]), dtype=dtype)
    cdef floating[:, :, ::1] dsz_v = dsz, dsr_v = dsr, dsc_v = dsc
    cdef floating[:, ::1] carry_v = carry
    cdef floating[:, :, ::1] sc = scratch
    with nogil:
        _backward_core(dhs, hs, zs, rs, cs, h0, u_z, u_r, u_c,
                       dsz_v, dsr_v, dsc_v, carry_v, sc[0], sc[1])
    return dsz, dsr, dsc, carry
