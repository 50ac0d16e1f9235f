"""Checkpoint bundles: LM + vocab references, mapper + frozen-LM hash verification."""

import numpy as np
import pytest

from selm.bpe import train_bpe
from selm.errors import CheckpointError
from selm.lm import LMConfig, build_lm
from selm.model import SelmConfig, SelmModel
from selm.store import load_lm_bundle, load_selm, save_lm_bundle, save_selm

CFG = LMConfig(d_lm=16, n_layers=1, n_heads=2, context_length=32, vocab_size=300)


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("store")
    vocab = train_bpe(["some words appear twice some words"], 280)
    tree, lm = build_lm(CFG, seed=2)
    ckpt, vocab_path = save_lm_bundle(root / "lm.ckpt", tree, CFG, vocab)
    return root, tree, vocab, ckpt


def test_lm_bundle_round_trip(bundle):
    root, tree, vocab, ckpt = bundle
    config, arrays, vocab2 = load_lm_bundle(ckpt)
    assert config == CFG
    assert vocab2.merges == vocab.merges
    for name in tree.names():
        np.testing.assert_array_equal(arrays[name],
                                      tree.tensor(name).data.astype("<f4"))


def test_lm_bundle_detects_vocab_tamper(bundle, tmp_path):
    root, tree, vocab, ckpt = bundle
    tampered = (ckpt.parent / (ckpt.name + ".vocab"))
    original = tampered.read_text()
    try:
        tampered.write_text(original + "merge zz zz\n")
        with pytest.raises(CheckpointError, match="hash"):
            load_lm_bundle(ckpt)
    finally:
        tampered.write_text(original)


def test_selm_checkpoint_round_trip_and_hash(bundle):
    root, tree, vocab, ckpt = bundle
    config, arrays, vocab2 = load_lm_bundle(ckpt)
    model = SelmModel.from_lm(config, arrays, vocab2, SelmConfig(k=3, d_a=6), seed=9)
    mapper_path = root / "mapper.ckpt"
    save_selm(mapper_path, model, ckpt)
    loaded = load_selm(mapper_path)
    assert loaded.tree.digest() == model.tree.digest()
    assert loaded.selm_config == model.selm_config
    # frozen-LM tamper -> hash mismatch
    raw = bytearray(ckpt.read_bytes())
    raw[-1] ^= 0xFF
    bad_lm = root / "lm_tampered.ckpt"
    bad_lm.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="hash"):
        load_selm(mapper_path, bad_lm)


def test_selm_checkpoint_missing_lm(bundle, tmp_path):
    root, tree, vocab, ckpt = bundle
    config, arrays, vocab2 = load_lm_bundle(ckpt)
    model = SelmModel.from_lm(config, arrays, vocab2, SelmConfig(k=3, d_a=6), seed=9)
    mapper_path = tmp_path / "mapper.ckpt"
    save_selm(mapper_path, model, ckpt)
    with pytest.raises(CheckpointError, match="missing"):
        load_selm(mapper_path, tmp_path / "nowhere.ckpt")
