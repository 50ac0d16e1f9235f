"""Named parameter collections with per-tensor freeze flags."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ConfigError, InvalidValueError
from .tensor import Tensor

STORAGE_DTYPE = "<f4"  # 32-bit little-endian at rest (checkpoints, digests)


@dataclass
class ParamEntry:
    tensor: Tensor
    frozen: bool


class ParameterTree:
    """Ordered map from dot-separated names to (tensor, frozen) entries.

    Iteration order is always lexicographic by name, so checkpoints and
    digests are deterministic. Frozen entries never receive gradients
    (their tensors are created with requires_grad=False) and the flag is
    fixed for the lifetime of the tree.
    """

    def __init__(self):
        self._entries: dict[str, ParamEntry] = {}

    def add(self, name, array, frozen=False):
        if name in self._entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        array = np.asarray(array, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise InvalidValueError(f"parameter {name!r} has non-finite values")
        t = Tensor(array, requires_grad=not frozen)
        self._entries[name] = ParamEntry(t, frozen)
        return t

    def names(self):
        return sorted(self._entries)

    def items(self):
        for name in self.names():
            yield name, self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def tensor(self, name):
        if name not in self._entries:
            raise AlignmentError(f"unknown parameter {name!r}")
        return self._entries[name].tensor

    def is_frozen(self, name):
        if name not in self._entries:
            raise AlignmentError(f"unknown parameter {name!r}")
        return self._entries[name].frozen

    def trainable_names(self):
        return [n for n in self.names() if not self._entries[n].frozen]

    def frozen_names(self):
        return [n for n in self.names() if self._entries[n].frozen]

    def zero_grad(self):
        for e in self._entries.values():
            e.tensor.grad = None

    def gradients(self):
        """Gradients of trainable entries that received one in the last backward."""
        out = {}
        for name in self.trainable_names():
            g = self._entries[name].tensor.grad
            if g is not None:
                out[name] = g
        return out

    def as_arrays(self):
        """float32 snapshots in lexicographic order (the at-rest representation)."""
        return {n: e.tensor.data.astype(STORAGE_DTYPE) for n, e in self.items()}

    def load_arrays(self, arrays):
        missing = set(self._entries) - set(arrays)
        extra = set(arrays) - set(self._entries)
        if missing or extra:
            raise AlignmentError(
                f"parameter names do not line up (missing={sorted(missing)}, extra={sorted(extra)})"
            )
        for name, arr in arrays.items():
            t = self._entries[name].tensor
            arr = np.asarray(arr)
            if arr.shape != t.data.shape:
                raise AlignmentError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}"
                )
            t.data[...] = arr.astype(np.float64)

    def digest(self, names=None):
        """SHA-256 over the float32 bytes of the selected entries, in name order."""
        h = hashlib.sha256()
        for name in sorted(names) if names is not None else self.names():
            h.update(name.encode("utf-8"))
            h.update(self._entries[name].tensor.data.astype(STORAGE_DTYPE).tobytes())
        return h.hexdigest()

    def raw_bytes(self, name):
        return self._entries[name].tensor.data.tobytes()


# -- initializers -------------------------------------------------------------


def linear_init(rng, fan_in, fan_out):
    """Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out))."""
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def embedding_init(rng, rows, dim, std=0.02):
    return rng.normal(0.0, std, size=(rows, dim))
