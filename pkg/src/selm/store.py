"""Higher-level persistence: language-model and mapper checkpoints on disk.

A language-model checkpoint carries its config plus a relative reference to
the vocabulary file (path + sha256). A mapper ("selm") checkpoint carries the
mapper tensors only plus a reference (relative path + sha256) to the frozen
LM checkpoint it was trained against; loading verifies both hashes, so a
single checkpoint argument is enough to reassemble the full model.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .bpe import Vocabulary
from .checkpoint import file_sha256, load_checkpoint, save_checkpoint
from .errors import CheckpointError
from .lm import LMConfig
from .model import SelmConfig, SelmModel
from .params import ParameterTree


def save_lm_bundle(ckpt_path, tree, lm_config: LMConfig, vocab: Vocabulary):
    """Write the LM checkpoint and its vocabulary side by side."""
    ckpt_path = Path(ckpt_path)
    vocab_path = ckpt_path.with_name(ckpt_path.name + ".vocab")
    vocab.save(vocab_path)
    config = {
        "kind": "lm",
        "lm": lm_config.to_dict(),
        "vocab_path": vocab_path.name,
        "vocab_sha256": file_sha256(vocab_path),
    }
    lm_tree = ParameterTree()
    for name in tree.names():
        if name.startswith("lm."):
            lm_tree.add(name, tree.tensor(name).data, frozen=True)
    save_checkpoint(ckpt_path, config, lm_tree)
    return ckpt_path, vocab_path


def load_lm_bundle(ckpt_path):
    """Returns (LMConfig, arrays, vocab); verifies the vocabulary hash."""
    ckpt_path = Path(ckpt_path)
    config, arrays, _ = load_checkpoint(ckpt_path)
    if config.get("kind") != "lm":
        raise CheckpointError(f"{ckpt_path} is not a language-model checkpoint")
    vocab_path = ckpt_path.parent / config["vocab_path"]
    if not vocab_path.exists():
        raise CheckpointError(f"vocabulary file {vocab_path} is missing")
    digest = file_sha256(vocab_path)
    if digest != config["vocab_sha256"]:
        raise CheckpointError(
            f"vocabulary hash mismatch for {vocab_path}: "
            f"{digest} != {config['vocab_sha256']}"
        )
    return LMConfig.from_dict(config["lm"]), arrays, Vocabulary.load(vocab_path)


def save_selm(ckpt_path, model: SelmModel, lm_ckpt_path):
    """Write the trainable mapper tensors plus the frozen-LM reference."""
    ckpt_path = Path(ckpt_path)
    lm_ckpt_path = Path(lm_ckpt_path)
    try:
        lm_ref = str(lm_ckpt_path.resolve().relative_to(ckpt_path.resolve().parent))
    except ValueError:
        lm_ref = str(lm_ckpt_path.resolve())
    config = {
        "kind": "selm",
        "lm": model.lm_config.to_dict(),
        "selm": model.selm_config.to_dict(),
        "lm_path": lm_ref,
        "lm_sha256": file_sha256(lm_ckpt_path),
    }
    mapper_tree = ParameterTree()
    for name in model.tree.trainable_names():
        mapper_tree.add(name, model.tree.tensor(name).data, frozen=False)
    save_checkpoint(ckpt_path, config, mapper_tree)
    return ckpt_path


def load_selm(ckpt_path, lm_ckpt_path=None):
    """Reassemble a full model; verifies the frozen-LM content hash."""
    ckpt_path = Path(ckpt_path)
    config, mapper_arrays, _ = load_checkpoint(ckpt_path)
    if config.get("kind") != "selm":
        raise CheckpointError(f"{ckpt_path} is not a mapper checkpoint")
    if lm_ckpt_path is None:
        ref = Path(config["lm_path"])
        lm_ckpt_path = ref if ref.is_absolute() else ckpt_path.parent / ref
    lm_ckpt_path = Path(lm_ckpt_path)
    if not lm_ckpt_path.exists():
        raise CheckpointError(f"frozen-LM checkpoint {lm_ckpt_path} is missing")
    digest = file_sha256(lm_ckpt_path)
    if digest != config["lm_sha256"]:
        raise CheckpointError(
            f"frozen-LM hash mismatch for {lm_ckpt_path}: "
            f"{digest} != {config['lm_sha256']}"
        )
    lm_config, lm_arrays, vocab = load_lm_bundle(lm_ckpt_path)
    model = SelmModel.from_lm(
        lm_config, lm_arrays, vocab, SelmConfig.from_dict(config["selm"]), seed=0
    )
    merged = {n: model.tree.tensor(n).data for n in model.tree.names()}
    expected = set(model.tree.trainable_names())
    if set(mapper_arrays) != expected:
        raise CheckpointError(
            "mapper checkpoint tensors do not match the configured architecture"
        )
    merged.update(mapper_arrays)
    model.tree.load_arrays(merged)
    return model


def hash_arrays(arrays):
    """Order-independent digest of a name->array mapping (float32 view)."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(arrays[name].astype("<f4").tobytes())
    return h.hexdigest()
