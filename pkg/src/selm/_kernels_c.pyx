# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the fused inner-loop kernels.

Semantics match selm._kernels_np exactly (float64 in, float64 out); this file
only exists to cut Python/NumPy dispatch overhead on the hot path.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, log, sqrt

cnp.import_array()

cdef double INV_SQRT2 = 1.0 / sqrt(2.0)
cdef double INV_SQRT_2PI = 1.0 / sqrt(2.0 * 3.14159265358979323846)


def gelu_fwd(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = 0.5 * xv[i] * (1.0 + erf(xv[i] * INV_SQRT2))
    return out


def gelu_bwd(x, gy):
    x = np.ascontiguousarray(x, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    out = np.empty_like(x)
    cdef double[::1] xv = x.reshape(-1)
    cdef double[::1] gv = gy.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(xv[i] * INV_SQRT2))
        pdf = exp(-0.5 * xv[i] * xv[i]) * INV_SQRT_2PI
        ov[i] = gv[i] * (cdf + xv[i] * pdf)
    return out


def layer_norm_fwd(x, gain, bias, double eps):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] xv = x
    cdef double[::1] gv = np.ascontiguousarray(gain, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    y = np.empty((n, d), dtype=np.float64)
    mean = np.empty(n, dtype=np.float64)
    rstd = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] yv = y
    cdef double[::1] mv = mean
    cdef double[::1] rv = rstd
    cdef Py_ssize_t i, j
    cdef double acc, var, xc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += xv[i, j]
        mv[i] = acc / d
        var = 0.0
        for j in range(d):
            xc = xv[i, j] - mv[i]
            var += xc * xc
        rv[i] = 1.0 / sqrt(var / d + eps)
        for j in range(d):
            yv[i, j] = (xv[i, j] - mv[i]) * rv[i] * gv[j] + bv[j]
    return y, mean, rstd


def layer_norm_bwd(x, gain, mean, rstd, gy):
    x = np.ascontiguousarray(x, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, ::1] xv = x
    cdef double[:, ::1] gyv = gy
    cdef double[::1] gv = np.ascontiguousarray(gain, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mean, dtype=np.float64)
    cdef double[::1] rv = np.ascontiguousarray(rstd, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    gx = np.empty((n, d), dtype=np.float64)
    ggain = np.zeros(d, dtype=np.float64)
    gbias = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] gxv = gx
    cdef double[::1] ggv = ggain
    cdef double[::1] gbv = gbias
    cdef Py_ssize_t i, j
    cdef double xhat, dxhat, m1, m2
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (xv[i, j] - mv[i]) * rv[i]
            dxhat = gyv[i, j] * gv[j]
            ggv[j] += gyv[i, j] * xhat
            gbv[j] += gyv[i, j]
            m1 += dxhat
            m2 += dxhat * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (xv[i, j] - mv[i]) * rv[i]
            dxhat = gyv[i, j] * gv[j]
            gxv[i, j] = rv[i] * (dxhat - m1 - xhat * m2)
    return gx, ggain, gbias


def softmax_fwd(scores, bint causal):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    cdef double[:, :, ::1] sv = scores
    cdef Py_ssize_t b = sv.shape[0], t = sv.shape[1], s = sv.shape[2]
    out = np.empty((b, t, s), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t k, i, j, limit
    cdef Py_ssize_t off = s - t
    cdef double m, z
    for k in range(b):
        for i in range(t):
            limit = (i + off + 1) if causal else s
            m = sv[k, i, 0]
            for j in range(1, limit):
                if sv[k, i, j] > m:
                    m = sv[k, i, j]
            z = 0.0
            for j in range(limit):
                ov[k, i, j] = exp(sv[k, i, j] - m)
                z += ov[k, i, j]
            for j in range(limit):
                ov[k, i, j] /= z
            for j in range(limit, s):
                ov[k, i, j] = 0.0
    return out


def softmax_bwd(probs, gp):
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    gp = np.ascontiguousarray(gp, dtype=np.float64)
    cdef double[:, :, ::1] pv = probs
    cdef double[:, :, ::1] gv = gp
    cdef Py_ssize_t b = pv.shape[0], t = pv.shape[1], s = pv.shape[2]
    out = np.empty((b, t, s), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t k, i, j
    cdef double dot
    for k in range(b):
        for i in range(t):
            dot = 0.0
            for j in range(s):
                dot += gv[k, i, j] * pv[k, i, j]
            for j in range(s):
                ov[k, i, j] = pv[k, i, j] * (gv[k, i, j] - dot)
    return out


def cross_entropy_fwd(logits, targets, mask):
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    cdef double[:, ::1] lv = logits
    cdef long long[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef cnp.uint8_t[::1] mv = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = lv.shape[0], v = lv.shape[1]
    probs = np.empty((n, v), dtype=np.float64)
    cdef double[:, ::1] pv = probs
    cdef Py_ssize_t i, j, n_masked = 0
    cdef double m, z, loss = 0.0
    for i in range(n):
        m = lv[i, 0]
        for j in range(1, v):
            if lv[i, j] > m:
                m = lv[i, j]
        z = 0.0
        for j in range(v):
            pv[i, j] = exp(lv[i, j] - m)
            z += pv[i, j]
        for j in range(v):
            pv[i, j] /= z
        if mv[i]:
            loss += (m + log(z)) - lv[i, tv[i]]
            n_masked += 1
    return loss / n_masked, probs


def cross_entropy_bwd(probs, targets, mask, double gloss):
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    cdef double[:, ::1] pv = probs
    cdef long long[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef cnp.uint8_t[::1] mv = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = pv.shape[0], v = pv.shape[1]
    out = np.zeros((n, v), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, n_masked = 0
    cdef double scale
    for i in range(n):
        if mv[i]:
            n_masked += 1
    scale = gloss / n_masked
    for i in range(n):
        if not mv[i]:
            continue
        for j in range(v):
            ov[i, j] = pv[i, j] * scale
        ov[i, tv[i]] -= scale
    return out


def adam_update(p, g, m, v, long long t, double lr, double beta1,
                double beta2, double eps):
    cdef double[::1] pv = p.reshape(-1)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64).reshape(-1)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    for i in range(n):
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i]
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
        pv[i] = pv[i] - lr * (mv[i] / bc1) / (sqrt(vv[i] / bc2) + eps)
