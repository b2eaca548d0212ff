"""Pure-numpy implementations of the hot kernels.

Shared contract with driftfit._ckernels: all arrays are C-contiguous float64,
shapes are trusted (callers validate), and the two backends agree to within a
few ulps. Keep both files in sync; tests/test_kernels.py enforces parity.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def gauss_mlp_forward(x, w1, b1, wm, bm, wv, bv):
    """One tanh hidden layer with linear mean / log-variance heads.

    x: (B, I). Returns (hidden (B,H), mean (B,O), raw log-var (B,O)).
    The log-variance is returned unclamped; the caller clips and keeps the
    mask for the backward pass.
    """
    hidden = np.tanh(x @ w1 + b1)
    mean = hidden @ wm + bm
    log_var = hidden @ wv + bv
    return hidden, mean, log_var


def gauss_mlp_backward(x, hidden, d_mean, d_log_var, w1, wm, wv):
    """Backward pass matching gauss_mlp_forward.

    d_log_var must already be masked for the log-variance clamp.
    Returns (dw1, db1, dwm, dbm, dwv, dbv, dx).
    """
    dwm = hidden.T @ d_mean
    dbm = d_mean.sum(axis=0)
    dwv = hidden.T @ d_log_var
    dbv = d_log_var.sum(axis=0)
    d_hidden = d_mean @ wm.T + d_log_var @ wv.T
    d_pre = d_hidden * (1.0 - hidden * hidden)
    dw1 = x.T @ d_pre
    db1 = d_pre.sum(axis=0)
    dx = d_pre @ w1.T
    return dw1, db1, dwm, dbm, dwv, dbv, dx


def gaussian_logpdf_pairs(x, mean, log_var):
    """Row-wise diagonal-Gaussian log-density: x, mean, log_var all (B, D)."""
    diff = x - mean
    return (-0.5 * LOG_2PI - 0.5 * log_var - 0.5 * diff * diff * np.exp(-log_var)).sum(axis=1)


def gaussian_logpdf_rows_vs_one(x, mean, log_var):
    """Log-density of each row of x (B, D) under one Gaussian (mean, log_var: (D,))."""
    diff = x - mean
    return (-0.5 * LOG_2PI - 0.5 * log_var - 0.5 * diff * diff * np.exp(-log_var)).sum(axis=1)


def gaussian_logpdf_one_vs_rows(x, mean, log_var):
    """Log-density of one vector x (D,) under each row Gaussian (mean, log_var: (B, D))."""
    diff = x - mean
    return (-0.5 * LOG_2PI - 0.5 * log_var - 0.5 * diff * diff * np.exp(-log_var)).sum(axis=1)


def adam_step_inplace(params, grad, m, v, step, lr, beta1, beta2, eps):
    """Bias-corrected Adam update; mutates params, m and v. step is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    params -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
