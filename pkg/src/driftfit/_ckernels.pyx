# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels (BLAS-backed, fused loops).

Mirror of driftfit._pykernels; keep the two files in sync. The matmul cores
go through dgemm, elementwise work (bias, tanh, densities, Adam) runs in
plain C loops, so small-batch calls avoid temporary arrays and interpreter
overhead.
"""

import numpy as np

from libc.math cimport exp, log, pow, sqrt, tanh

from scipy.linalg.cython_blas cimport dgemm

cdef double LOG_2PI = log(2.0 * 3.141592653589793)

LOG_2PI_PY = LOG_2PI


# Row-major GEMM helpers. BLAS is column-major, so C_rm(m,n) = op(A) @ op(B)
# is computed as C_cm(n,m) = op(B)^T @ op(A)^T with swapped operands.

cdef void _gemm_nn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
                   double alpha, double beta) noexcept nogil:
    # c(m,n) = alpha * a(m,k) @ b(k,n) + beta * c
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef char tn = b'N'
    dgemm(&tn, &tn, &n, &m, &k, &alpha, &b[0, 0], &n, &a[0, 0], &k, &beta, &c[0, 0], &n)


cdef void _gemm_tn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
                   double alpha, double beta) noexcept nogil:
    # c(m,n) = alpha * a(k,m)^T @ b(k,n) + beta * c
    cdef int k = a.shape[0], m = a.shape[1], n = b.shape[1]
    cdef char tn = b'N', tt = b'T'
    dgemm(&tn, &tt, &n, &m, &k, &alpha, &b[0, 0], &n, &a[0, 0], &m, &beta, &c[0, 0], &n)


cdef void _gemm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
                   double alpha, double beta) noexcept nogil:
    # c(m,n) = alpha * a(m,k) @ b(n,k)^T + beta * c
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[0]
    cdef char tn = b'N', tt = b'T'
    dgemm(&tt, &tn, &n, &m, &k, &alpha, &b[0, 0], &k, &a[0, 0], &k, &beta, &c[0, 0], &n)


def gauss_mlp_forward(double[:, ::1] x, double[:, ::1] w1, double[::1] b1,
                      double[:, ::1] wm, double[::1] bm,
                      double[:, ::1] wv, double[::1] bv):
    cdef int batch = x.shape[0]
    cdef int n_hidden = w1.shape[1]
    cdef int n_out = wm.shape[1]
    cdef int i, j

    hidden_arr = np.empty((batch, n_hidden))
    mean_arr = np.empty((batch, n_out))
    log_var_arr = np.empty((batch, n_out))
    cdef double[:, ::1] hidden = hidden_arr
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, ::1] log_var = log_var_arr

    with nogil:
        _gemm_nn(x, w1, hidden, 1.0, 0.0)
        for i in range(batch):
            for j in range(n_hidden):
                hidden[i, j] = tanh(hidden[i, j] + b1[j])
        _gemm_nn(hidden, wm, mean, 1.0, 0.0)
        _gemm_nn(hidden, wv, log_var, 1.0, 0.0)
        for i in range(batch):
            for j in range(n_out):
                mean[i, j] += bm[j]
                log_var[i, j] += bv[j]
    return hidden_arr, mean_arr, log_var_arr


def gauss_mlp_backward(double[:, ::1] x, double[:, ::1] hidden,
                       double[:, ::1] d_mean, double[:, ::1] d_log_var,
                       double[:, ::1] w1, double[:, ::1] wm, double[:, ::1] wv):
    cdef int batch = x.shape[0]
    cdef int n_in = x.shape[1]
    cdef int n_hidden = hidden.shape[1]
    cdef int n_out = d_mean.shape[1]
    cdef int i, j
    cdef double h, acc

    dw1_arr = np.empty((n_in, n_hidden))
    db1_arr = np.empty(n_hidden)
    dwm_arr = np.empty((n_hidden, n_out))
    dbm_arr = np.empty(n_out)
    dwv_arr = np.empty((n_hidden, n_out))
    dbv_arr = np.empty(n_out)
    dx_arr = np.empty((batch, n_in))
    d_pre_arr = np.empty((batch, n_hidden))
    cdef double[:, ::1] dw1 = dw1_arr
    cdef double[::1] db1 = db1_arr
    cdef double[:, ::1] dwm = dwm_arr
    cdef double[::1] dbm = dbm_arr
    cdef double[:, ::1] dwv = dwv_arr
    cdef double[::1] dbv = dbv_arr
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] d_pre = d_pre_arr

    with nogil:
        _gemm_tn(hidden, d_mean, dwm, 1.0, 0.0)
        _gemm_tn(hidden, d_log_var, dwv, 1.0, 0.0)
        for j in range(n_out):
            acc = 0.0
            for i in range(batch):
                acc += d_mean[i, j]
            dbm[j] = acc
            acc = 0.0
            for i in range(batch):
                acc += d_log_var[i, j]
            dbv[j] = acc
        # d_pre = (d_mean @ wm^T + d_log_var @ wv^T) * tanh'
        _gemm_nt(d_mean, wm, d_pre, 1.0, 0.0)
        _gemm_nt(d_log_var, wv, d_pre, 1.0, 1.0)
        for i in range(batch):
            for j in range(n_hidden):
                h = hidden[i, j]
                d_pre[i, j] *= 1.0 - h * h
        _gemm_tn(x, d_pre, dw1, 1.0, 0.0)
        for j in range(n_hidden):
            acc = 0.0
            for i in range(batch):
                acc += d_pre[i, j]
            db1[j] = acc
        _gemm_nt(d_pre, w1, dx, 1.0, 0.0)
    return dw1_arr, db1_arr, dwm_arr, dbm_arr, dwv_arr, dbv_arr, dx_arr


def gaussian_logpdf_pairs(double[:, ::1] x, double[:, ::1] mean, double[:, ::1] log_var):
    cdef int batch = x.shape[0]
    cdef int dim = x.shape[1]
    cdef int i, j
    cdef double acc, diff, lv

    out_arr = np.empty(batch)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(batch):
            acc = 0.0
            for j in range(dim):
                lv = log_var[i, j]
                diff = x[i, j] - mean[i, j]
                acc += -0.5 * LOG_2PI - 0.5 * lv - 0.5 * diff * diff * exp(-lv)
            out[i] = acc
    return out_arr


def gaussian_logpdf_rows_vs_one(double[:, ::1] x, double[::1] mean, double[::1] log_var):
    cdef int batch = x.shape[0]
    cdef int dim = x.shape[1]
    cdef int i, j
    cdef double acc, diff

    inv_arr = np.empty(dim)
    out_arr = np.empty(batch)
    cdef double[::1] inv = inv_arr
    cdef double[::1] out = out_arr
    cdef double base = 0.0
    with nogil:
        for j in range(dim):
            inv[j] = exp(-log_var[j])
            base += -0.5 * LOG_2PI - 0.5 * log_var[j]
        for i in range(batch):
            acc = base
            for j in range(dim):
                diff = x[i, j] - mean[j]
                acc += -0.5 * diff * diff * inv[j]
            out[i] = acc
    return out_arr


def gaussian_logpdf_one_vs_rows(double[::1] x, double[:, ::1] mean, double[:, ::1] log_var):
    cdef int batch = mean.shape[0]
    cdef int dim = mean.shape[1]
    cdef int i, j
    cdef double acc, diff, lv

    out_arr = np.empty(batch)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(batch):
            acc = 0.0
            for j in range(dim):
                lv = log_var[i, j]
                diff = x[j] - mean[i, j]
                acc += -0.5 * LOG_2PI - 0.5 * lv - 0.5 * diff * diff * exp(-lv)
            out[i] = acc
    return out_arr


def adam_step_inplace(double[::1] params, double[::1] grad,
                      double[::1] m, double[::1] v, long step,
                      double lr, double beta1, double beta2, double eps):
    cdef int n = params.shape[0]
    cdef int i
    cdef double c1 = 1.0 - pow(beta1, <double> step)
    cdef double c2 = 1.0 - pow(beta2, <double> step)
    cdef double g
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            params[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)
