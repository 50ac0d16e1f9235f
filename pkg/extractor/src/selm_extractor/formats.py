"""Writers for the shared on-disk contracts (see ../docs/FORMATS.md).

This package deliberately does not import the consumer library: the byte-level
formats are the interface between the two, and the tests cross-validate the
output with the consumer's readers.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FEATURE_MAGIC = b"SELMFEAT"
FEATURE_VERSION = 1
FEATURE_FLAGS_F32 = 1

VIEWS = ("categorical", "sentiment", "dimensional")

PROMPTS = {
    "categorical": "This person is",
    "sentiment": "This sentiment is",
    "dimensional": "Describe emotion parameters",
}

SENTIMENT_OF = {
    "happy": "positive",
    "sad": "negative",
    "angry": "negative",
    "neutral": "neutral",
    "fear": "negative",
    "disgust": "negative",
}

DIMENSIONS_OF = {
    "happy": ("high", "high"),
    "sad": ("low", "low"),
    "angry": ("low", "high"),
    "neutral": ("mid", "mid"),
    "fear": ("low", "high"),
    "disgust": ("low", "mid"),
}

SENTIMENT_WORDS = ("positive", "neutral", "negative")


def write_feature(path, array):
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
        raise ValueError(f"feature array must be (frames, dim), got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("refusing to write non-finite feature values")
    frames, dim = array.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<IIII", FEATURE_VERSION, frames, dim, FEATURE_FLAGS_F32))
        f.write(array.astype("<f4").tobytes())


def target_text(view, label):
    """Templated response text; raises KeyError for unmappable labels."""
    if view == "categorical":
        return f"feeling emotion of {label}"
    if view == "sentiment":
        return label if label in SENTIMENT_WORDS else SENTIMENT_OF[label]
    if view == "dimensional":
        v, a = DIMENSIONS_OF[label]
        return f"valence {v} arousal {a}"
    raise ValueError(f"unknown view {view!r}")


def manifest_row(row_id, feature_path, view, label):
    return {
        "id": row_id,
        "feature_path": feature_path,
        "prompt": PROMPTS[view],
        "target": target_text(view, label),
        "view": view,
        "label": label,
        "fold": -1,
        "split": "train",
    }


def write_manifest(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True))
            f.write("\n")
