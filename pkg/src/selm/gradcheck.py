"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .params import ParameterTree
from .tensor import no_grad


def grad_check(loss_fn, tree: ParameterTree, names=None, eps=1e-3,
               samples_per_param=4, seed=0):
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn rebuilds the forward graph from the tree's current values and
    returns a scalar Tensor. For each selected parameter a few coordinates
    are sampled; returns the max relative error
    |a - n| / (|a| + |n| + 1e-8) over all sampled coordinates.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if names is None:
        names = tree.trainable_names()
    tree.zero_grad()
    loss = loss_fn()
    if loss.requires_grad:
        loss.backward()
    # parameters the loss never touched legitimately have zero gradient
    analytic = {n: (tree.tensor(n).grad.copy() if tree.tensor(n).grad is not None
                    else np.zeros_like(tree.tensor(n).data))
                for n in names}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(names):
        flat = tree.tensor(name).data.reshape(-1)
        k = min(samples_per_param, flat.size)
        idxs = rng.choice(flat.size, size=k, replace=False)
        for idx in idxs:
            original = flat[idx]
            with no_grad():
                flat[idx] = original + eps
                hi = loss_fn().item()
                flat[idx] = original - eps
                lo = loss_fn().item()
            flat[idx] = original
            numeric = (hi - lo) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[idx])
            rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-8)
            if rel > worst:
                worst = rel
    return worst
