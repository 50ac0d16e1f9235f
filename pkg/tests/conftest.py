"""Session-wide fixtures: template corpus, tokenizer, pretrained LM, benchmark data.

The pretrained LM and the synthetic datasets are expensive, so they are built
once per session and shared; tests must not mutate them (training tests clone
via SelmModel.from_lm / .clone()).
"""

import numpy as np
import pytest

from selm.bpe import train_bpe
from selm.dataio import (
    SynthConfig,
    make_folds,
    pretraining_corpus,
    synthesize_dataset,
)
from selm.lm import LMConfig, pretrain_lm
from selm.model import SelmConfig, SelmModel
from selm.store import save_lm_bundle

PRETRAIN_STEPS = 600


@pytest.fixture(scope="session")
def corpus_lines():
    return pretraining_corpus()


@pytest.fixture(scope="session")
def vocab(corpus_lines):
    return train_bpe(corpus_lines, 512)


@pytest.fixture(scope="session")
def lm_config():
    return LMConfig()


@pytest.fixture(scope="session")
def lm_bundle(corpus_lines, vocab, lm_config, tmp_path_factory):
    """(tree, lm, ckpt_path): template-pretrained frozen-prior LM + saved bundle."""
    tree, lm, _ = pretrain_lm(corpus_lines, vocab, lm_config,
                              steps=PRETRAIN_STEPS, batch_size=8, seed=0)
    ckpt = tmp_path_factory.mktemp("lm") / "lm.ckpt"
    save_lm_bundle(ckpt, tree, lm_config, vocab)
    return tree, lm, ckpt


@pytest.fixture(scope="session")
def lm_arrays(lm_bundle):
    tree, _, _ = lm_bundle
    return {n: tree.tensor(n).data.astype("<f4")
            for n in tree.names() if n.startswith("lm.")}


def fresh_model(lm_config, lm_arrays, vocab, d_a=32, k=10, seed=5):
    return SelmModel.from_lm(lm_config, lm_arrays, vocab,
                             SelmConfig(k=k, d_a=d_a), seed=seed)


@pytest.fixture(scope="session")
def source_dataset(tmp_path_factory):
    """delta=0 benchmark with 5 folds assigned."""
    out = tmp_path_factory.mktemp("data") / "src"
    manifest = synthesize_dataset(SynthConfig(seed=0, shift_delta=0.0, name="src"), out)
    manifest = make_folds(manifest, 5, seed=0)
    manifest.save(out / "manifest.jsonl")
    return manifest


@pytest.fixture(scope="session")
def target_dataset(tmp_path_factory):
    """delta=4 shifted benchmark: same geometry as source, fresh examples."""
    out = tmp_path_factory.mktemp("data") / "tgt"
    manifest = synthesize_dataset(
        SynthConfig(seed=1, geometry_seed=0, shift_delta=4.0,
                    examples_per_class=32, name="tgt"), out)
    return manifest


@pytest.fixture(scope="session")
def overfit_dataset(tmp_path_factory):
    """32 categorical triplets for the memorization run."""
    out = tmp_path_factory.mktemp("data") / "overfit"
    manifest = synthesize_dataset(
        SynthConfig(seed=3, views=("categorical",), examples_per_class=6,
                    test_fraction=0.0, name="ovf"), out)
    manifest.rows = manifest.rows[:32]
    return manifest
