"""Kernel backend selection.

The compiled extension (selm._kernels_c) is used when importable, the NumPy
implementation otherwise. SELM_KERNELS=numpy|cython|auto overrides, and
select() switches at runtime (used by the parity tests and the benchmark).
"""

import os

from . import _kernels_np
from .errors import ConfigError

try:
    from . import _kernels_c
except ImportError:
    _kernels_c = None

_impl = _kernels_np
_impl_name = "numpy"


def available():
    names = ["numpy"]
    if _kernels_c is not None:
        names.append("cython")
    return names


def select(name="auto"):
    """Switch the active kernel implementation; returns the resolved name."""
    global _impl, _impl_name
    if name in ("auto", "", None):
        name = "cython" if _kernels_c is not None else "numpy"
    if name == "cython":
        if _kernels_c is None:
            raise ConfigError("compiled kernel extension is not available")
        _impl = _kernels_c
    elif name == "numpy":
        _impl = _kernels_np
    else:
        raise ConfigError(f"unknown kernel backend {name!r} (expected numpy|cython|auto)")
    _impl_name = name
    return name


def active():
    return _impl_name


def gelu_fwd(x):
    return _impl.gelu_fwd(x)


def gelu_bwd(x, gy):
    return _impl.gelu_bwd(x, gy)


def layer_norm_fwd(x, gain, bias, eps):
    return _impl.layer_norm_fwd(x, gain, bias, eps)


def layer_norm_bwd(x, gain, mean, rstd, gy):
    return _impl.layer_norm_bwd(x, gain, mean, rstd, gy)


def softmax_fwd(scores, causal):
    return _impl.softmax_fwd(scores, causal)


def softmax_bwd(probs, gp):
    return _impl.softmax_bwd(probs, gp)


def cross_entropy_fwd(logits, targets, mask):
    return _impl.cross_entropy_fwd(logits, targets, mask)


def cross_entropy_bwd(probs, targets, mask, gloss):
    return _impl.cross_entropy_bwd(probs, targets, mask, gloss)


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    return _impl.adam_update(p, g, m, v, t, lr, beta1, beta2, eps)


select(os.environ.get("SELM_KERNELS", "auto"))
