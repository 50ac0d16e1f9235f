"""Model assembly: projection, mappers, prefix, beam decoding, class mapping."""

import numpy as np
import pytest

import selm.tensor as T
from selm.bpe import BOS_ID, EOS_ID, PAD_ID, Vocabulary
from selm.errors import ConfigError, ContextOverflowError, InputError, ShapeError
from selm.lm import LMConfig
from selm.model import SelmConfig, SelmModel

from conftest import fresh_model
from reference_impl import (
    np_audio_map,
    np_audio_project,
    np_lm_forward,
    np_text_map,
    params_of,
)

SMALL_LM = LMConfig(d_lm=16, n_layers=1, n_heads=2, context_length=32, vocab_size=259)


def small_model(seed=0, k=3, d_a=6):
    return SelmModel(SMALL_LM, SelmConfig(k=k, d_a=d_a), Vocabulary(), seed=seed)


# -- trainable/frozen partition ----------------------------------------------------

def test_trainable_and_frozen_name_sets():
    m = small_model()
    trainable = set(m.tree.trainable_names())
    frozen = set(m.tree.frozen_names())
    assert all(n.startswith(("audio_projection.", "audio_mapper.", "text_mapper."))
               for n in trainable)
    assert all(n.startswith("lm.") for n in frozen)
    assert "lm.token_embedding.weight" in frozen
    groups = m.trainable_group_names()
    assert set(groups) == {"audio_projection", "audio_mapper", "text_mapper"}
    assert set().union(*groups.values()) == trainable


def test_prefix_must_fit_context():
    with pytest.raises(ConfigError):
        SelmModel(SMALL_LM, SelmConfig(k=16, d_a=4), Vocabulary(), seed=0)


# -- audio projection ---------------------------------------------------------------

def test_audio_project_identical_frames_equal_pooled():
    m = small_model()
    frame = np.random.default_rng(0).normal(size=6)
    single = m.audio_project(frame[None, :]).data
    stacked = m.audio_project(np.tile(frame, (7, 1))).data
    np.testing.assert_allclose(stacked, single, rtol=0, atol=1e-12)


def test_audio_project_permutation_invariant():
    m = small_model()
    rng = np.random.default_rng(1)
    feat = rng.normal(size=(9, 6))
    out1 = m.audio_project(feat).data
    out2 = m.audio_project(feat[rng.permutation(9)]).data
    np.testing.assert_allclose(out1, out2, atol=1e-12)


def test_audio_project_matches_reference():
    m = small_model(seed=4)
    feat = np.random.default_rng(2).normal(size=(5, 6))
    ours = m.audio_project(feat).data[0]
    ref = np_audio_project(feat, params_of(m))
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_audio_project_validates_input():
    m = small_model()
    with pytest.raises(ShapeError):
        m.audio_project(np.zeros((3, 7)))  # wrong width
    with pytest.raises(ShapeError):
        m.audio_project(np.zeros((0, 6)))


# -- audio mapper ------------------------------------------------------------------

def test_audio_map_shape_k10_d64(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab, d_a=32, k=10)
    pooled = m.audio_project(np.random.default_rng(0).normal(size=(4, 32)))
    assert m.audio_map(pooled).shape == (10, 64)


def test_audio_map_zero_input_deterministic():
    a = small_model(seed=9).audio_map(T.Tensor(np.zeros((1, 16))))
    b = small_model(seed=9).audio_map(T.Tensor(np.zeros((1, 16))))
    assert a.data.tobytes() == b.data.tobytes()


def test_audio_map_matches_reference():
    m = small_model(seed=7)
    pooled = np.random.default_rng(3).normal(size=16)
    ours = m.audio_map(T.Tensor(pooled[None, :])).data
    ref = np_audio_map(pooled, params_of(m), m.selm_config.k, 16, 2)
    np.testing.assert_allclose(ours, ref, atol=1e-12)


# -- text mapper --------------------------------------------------------------------

def test_text_map_fixed_shape_any_prompt(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab)
    for prompt in ("a", "This person is", "x" * 400):
        assert m.text_map(prompt).shape == (10, 64)


def test_text_map_function_of_ids_only():
    m = small_model()
    a = m.text_map("ab").data
    b = m.text_map("ab").data
    c = m.text_map("ba").data
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_text_map_empty_prompt_rejected():
    with pytest.raises(InputError):
        small_model().text_map("")


def test_text_map_matches_reference():
    m = small_model(seed=11)
    prompt = "abc"
    ids = m.vocab.encode(prompt)[:3]
    ids = ids + [PAD_ID] * (3 - len(ids))
    ours = m.text_map(prompt).data
    ref = np_text_map(ids, params_of(m), 2)
    np.testing.assert_allclose(ours, ref, atol=1e-12)


# -- prefix -------------------------------------------------------------------------

def test_build_prefix_concatenation_contract():
    m = small_model()
    rng = np.random.default_rng(5)
    a = T.Tensor(rng.normal(size=(3, 16)))
    t = T.Tensor(rng.normal(size=(3, 16)))
    z = m.build_prefix(a, t)
    assert z.shape == (6, 16)
    assert z.data[:3].tobytes() == a.data.tobytes()
    assert z.data[3:].tobytes() == t.data.tobytes()
    swapped = m.build_prefix(t, a)
    assert swapped.data.tobytes() != z.data.tobytes()


def test_build_prefix_shape_errors():
    m = small_model()
    with pytest.raises(ShapeError):
        m.build_prefix(T.Tensor(np.zeros((2, 16))), T.Tensor(np.zeros((3, 16))))


def test_prefix_is_2k_rows(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab)
    z = m.prefix_for(np.random.default_rng(0).normal(size=(6, 32)), "This person is")
    assert z.shape == (20, 64)


# -- generation ---------------------------------------------------------------------

def greedy_reference(model, feat, prompt, max_tokens):
    with T.no_grad():
        prefix = model.prefix_for(feat, prompt)
        ids = [BOS_ID]
        lp = 0.0
        for _ in range(max_tokens):
            logits, _ = model.lm.forward(prefix, ids)
            row = T.log_softmax_row(logits.data[-1])
            tok = int(np.argmax(row))
            lp += float(row[tok])
            if tok == EOS_ID:
                break
            ids.append(tok)
    return model.vocab.decode(ids[1:]), lp


@pytest.mark.parametrize("seed", range(12))
def test_beam_one_equals_greedy(seed):
    m = small_model(seed=seed)
    feat = np.random.default_rng([seed, 1]).normal(size=(3, 6))
    g_text, g_lp = greedy_reference(m, feat, "q", 6)
    b_text, b_lp = m.generate_scored(feat, "q", beam=1, max_tokens=6)
    assert b_text == g_text
    assert b_lp == pytest.approx(g_lp, abs=1e-12)


@pytest.mark.parametrize("seed", range(12))
def test_beam_three_at_least_beam_one(seed):
    m = small_model(seed=seed)
    feat = np.random.default_rng([seed, 2]).normal(size=(4, 6))
    _, lp1 = m.generate_scored(feat, "q", beam=1, max_tokens=6)
    _, lp3 = m.generate_scored(feat, "q", beam=3, max_tokens=6)
    assert lp3 >= lp1 - 1e-12


def test_generate_argument_validation():
    m = small_model()
    feat = np.zeros((2, 6))
    with pytest.raises(ConfigError):
        m.generate(feat, "q", beam=0)
    with pytest.raises(ConfigError):
        m.generate(feat, "q", max_tokens=0)
    with pytest.raises(ContextOverflowError):
        m.generate(feat, "q", max_tokens=1000)


def test_generate_is_deterministic():
    m = small_model(seed=3)
    feat = np.random.default_rng(8).normal(size=(3, 6))
    assert m.generate(feat, "q", beam=3) == m.generate(feat, "q", beam=3)


# -- class mapping ------------------------------------------------------------------

def test_map_to_class_exact_name_self_similarity(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab)
    classes = ["happy", "sad", "angry", "neutral"]
    for i, c in enumerate(classes):
        assert m.map_to_class(c, classes) == i


def test_map_to_class_single_class_always_zero(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab)
    for text in ("whatever", "", "emotion of sad"):
        assert m.map_to_class(text, ["lonely"]) == 0


def test_map_to_class_brute_force_oracle(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab)
    classes = ["happy", "sad", "angry", "neutral", "fear", "disgust"]
    texts = [f"feeling emotion of {c}" for c in classes] + ["emotion of happy", "positive"]
    for text in texts:
        e = m.embed_text(text)
        sims = []
        for c in classes:
            ce = m.embed_text(c)
            sims.append(float(np.dot(e, ce) /
                              (np.linalg.norm(e) * np.linalg.norm(ce) + 1e-12)))
        assert m.map_to_class(text, classes) == int(np.argmax(sims))
    assert m.map_to_class("emotion of happy", classes) == 0


def test_map_to_class_rescaling_invariance(lm_config, lm_arrays, vocab):
    # cosine argmax is unchanged when every embedding is scaled by s > 0
    m = fresh_model(lm_config, lm_arrays, vocab)
    classes = ["happy", "sad", "angry", "neutral"]
    text = "feeling emotion of angry"
    e = m.embed_text(text)
    C = np.array([m.embed_text(c) for c in classes])
    base = m.map_to_class(text, classes)
    for s in (0.01, 3.7, 250.0):
        sims = (C * s) @ (e * s) / (np.linalg.norm(C * s, axis=1) * np.linalg.norm(e * s) + 1e-12)
        assert int(np.argmax(sims)) == base


def test_map_to_class_permutation_consistency(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab)
    classes = ["happy", "sad", "angry", "neutral", "fear", "disgust"]
    text = "feeling emotion of fear"
    label = classes[m.map_to_class(text, classes)]
    rng = np.random.default_rng(0)
    for _ in range(5):
        perm = list(rng.permutation(classes))
        assert perm[m.map_to_class(text, perm)] == label


def test_map_to_class_input_errors(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab)
    with pytest.raises(InputError):
        m.map_to_class("text", [])
    with pytest.raises(InputError):
        m.map_to_class("text", ["a", "a"])


def test_embed_text_empty_guard(lm_config, lm_arrays, vocab):
    m = fresh_model(lm_config, lm_arrays, vocab)
    e = m.embed_text("")
    np.testing.assert_array_equal(e, m.lm.tok_emb.data[BOS_ID])


# -- clone ---------------------------------------------------------------------------

def test_clone_is_independent():
    m = small_model(seed=2)
    c = m.clone()
    name = "text_mapper.layer.mlp.fc1.weight"
    before = m.tree.tensor(name).data.tobytes()
    c.tree.tensor(name).data += 1.0
    assert m.tree.tensor(name).data.tobytes() == before
    assert c.tree.tensor(name).data.tobytes() != before
