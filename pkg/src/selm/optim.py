"""Adam with bias correction plus global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from . import backend
from .errors import AlignmentError
from .params import ParameterTree


def clip_global_norm(grads, max_norm):
    """Scale the gradient dict in place so its global L2 norm is <= max_norm.

    Returns the pre-clip norm.
    """
    sq = 0.0
    for g in grads.values():
        sq += float(np.dot(g.ravel(), g.ravel()))
    norm = math.sqrt(sq)
    if max_norm is not None and norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    """Standard Adam over a chosen subset of a ParameterTree's trainable entries.

    Entries outside `names` are never touched, so their bytes stay identical
    across any number of steps.
    """

    def __init__(self, tree: ParameterTree, names=None, lr=1e-3, beta1=0.9,
                 beta2=0.999, eps=1e-8):
        if names is None:
            names = tree.trainable_names()
        names = sorted(names)
        for n in names:
            if tree.is_frozen(n):
                raise AlignmentError(f"cannot optimize frozen parameter {n!r}")
        self.tree = tree
        self.names = names
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {n: np.zeros_like(tree.tensor(n).data) for n in names}
        self._v = {n: np.zeros_like(tree.tensor(n).data) for n in names}

    def step(self, grads):
        """Apply one update from a name->gradient dict (missing name = zero grad)."""
        for name, g in grads.items():
            if name not in self._m:
                raise AlignmentError(f"gradient for unselected parameter {name!r}")
            if g.shape != self.tree.tensor(name).data.shape:
                raise AlignmentError(
                    f"gradient shape {g.shape} does not match parameter {name!r} "
                    f"{self.tree.tensor(name).data.shape}"
                )
        self.step_count += 1
        for name in self.names:
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(self._m[name])
            backend.adam_update(
                self.tree.tensor(name).data, g, self._m[name], self._v[name],
                self.step_count, self.lr, self.beta1, self.beta2, self.eps,
            )
