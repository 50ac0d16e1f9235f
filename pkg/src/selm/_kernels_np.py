"""NumPy reference implementations of the fused inner-loop kernels.

selm._kernels_c provides the same functions compiled with Cython; selm.backend
picks one implementation at import time. All arrays are float64, C-contiguous.
"""

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, gy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return gy * (cdf + x * pdf)


def layer_norm_fwd(x, gain, bias, eps):
    # x: (n, d); returns (y, mean, rstd) with per-row statistics
    mean = x.mean(axis=-1)
    xc = x - mean[:, None]
    var = np.mean(xc * xc, axis=-1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd[:, None] * gain + bias
    return y, mean, rstd


def layer_norm_bwd(x, gain, mean, rstd, gy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    ggain = (gy * xhat).sum(axis=0)
    gbias = gy.sum(axis=0)
    dxhat = gy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    gx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return gx, ggain, gbias


def softmax_fwd(scores, causal):
    # scores: (b, t, s); when causal, key j attends only if j <= i + (s - t)
    if causal:
        _, t, s = scores.shape
        disallowed = np.arange(s)[None, :] > (np.arange(t)[:, None] + (s - t))
        scores = np.where(disallowed[None, :, :], -np.inf, scores)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(probs, gp):
    dot = (gp * probs).sum(axis=-1, keepdims=True)
    return probs * (gp - dot)


def cross_entropy_fwd(logits, targets, mask):
    # logits: (n, v); targets: (n,) int64; mask: (n,) bool with >= 1 true entry
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=-1, keepdims=True)
    probs = e / z
    lse = m[:, 0] + np.log(z[:, 0])
    losses = lse - logits[np.arange(logits.shape[0]), targets]
    loss = float(losses[mask].sum() / mask.sum())
    return loss, probs


def cross_entropy_bwd(probs, targets, mask, gloss):
    n = probs.shape[0]
    g = probs.copy()
    g[np.arange(n), targets] -= 1.0
    g *= (gloss / mask.sum()) * mask[:, None]
    return g


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    # in-place moment and parameter update; t is the 1-based step count
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
