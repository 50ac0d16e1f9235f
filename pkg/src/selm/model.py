"""Audio-conditioned language model assembly.

A pooled audio vector and a text prompt are mapped by small trainable
networks into 2k continuous rows that prefix a frozen language model; the LM
then generates the emotion description, and free text is snapped to a class
by cosine similarity of mean frozen text-embedder vectors.

Trainable groups and their names:
    audio_projection.linear1/.linear2   two linear layers with GELU between
    audio_mapper.seq_linear             pooled vector -> k rows
    audio_mapper.layer.*                self-attention layer over those rows
    text_mapper.layer.*                 self-attention layer over k prompt rows
Everything under "lm." (transformer, token/position embeddings, output head)
is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .bpe import BOS_ID, EOS_ID, PAD_ID, Vocabulary
from .errors import (
    ConfigError,
    ContextOverflowError,
    InputError,
    InvalidValueError,
    ShapeError,
)
from .lm import LanguageModel, LMConfig, TransformerLayer, build_lm
from .params import ParameterTree, linear_init
from .tensor import Tensor


@dataclass
class SelmConfig:
    k: int = 10              # prefix rows per modality
    d_a: int = 32            # incoming audio feature width
    d_proj: int | None = None  # pooled projection width; defaults to d_lm
    mapper_heads: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.d_a < 1:
            raise ConfigError("d_a must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        dp = d.get("d_proj")
        return cls(k=int(d["k"]), d_a=int(d["d_a"]),
                   d_proj=None if dp is None else int(dp),
                   mapper_heads=int(d.get("mapper_heads", 2)))


class BeamHypothesis:
    __slots__ = ("tokens", "logprob", "finished")

    def __init__(self, tokens, logprob, finished=False):
        self.tokens = tokens          # token ids, starting with BOS
        self.logprob = logprob        # sum of per-step token log-probs
        self.finished = finished


class SelmModel:
    """Mapper stack + frozen LM + vocabulary, sharing one ParameterTree."""

    def __init__(self, lm_config: LMConfig, selm_config: SelmConfig,
                 vocab: Vocabulary, seed=0):
        if 2 * selm_config.k >= lm_config.context_length:
            raise ConfigError(
                f"prefix of {2 * selm_config.k} rows does not fit context "
                f"{lm_config.context_length}"
            )
        self.lm_config = lm_config
        self.selm_config = selm_config
        self.vocab = vocab
        self.tree = ParameterTree()
        rng = np.random.default_rng([seed, 0xC0FFEE])
        self.lm = LanguageModel(self.tree, lm_config, rng=rng, frozen=True)
        d = lm_config.d_lm
        k = selm_config.k
        d_proj = selm_config.d_proj or d
        self.d_proj = d_proj
        mrng = np.random.default_rng([seed, 0x5E1])
        add = self.tree.add
        self.ap1_w = add("audio_projection.linear1.weight",
                         linear_init(mrng, selm_config.d_a, d))
        self.ap1_b = add("audio_projection.linear1.bias", np.zeros(d))
        self.ap2_w = add("audio_projection.linear2.weight", linear_init(mrng, d, d_proj))
        self.ap2_b = add("audio_projection.linear2.bias", np.zeros(d_proj))
        self.seq_w = add("audio_mapper.seq_linear.weight", linear_init(mrng, d_proj, k * d))
        self.seq_b = add("audio_mapper.seq_linear.bias", np.zeros(k * d))
        self.audio_layer = TransformerLayer(
            self.tree, "audio_mapper.layer", d, selm_config.mapper_heads,
            mrng, frozen=False, causal=False)
        self.text_layer = TransformerLayer(
            self.tree, "text_mapper.layer", d, selm_config.mapper_heads,
            mrng, frozen=False, causal=False)

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_lm(cls, lm_config: LMConfig, lm_arrays, vocab: Vocabulary,
                selm_config: SelmConfig, seed=0):
        """Fresh mappers around a pretrained (frozen) LM."""
        model = cls(lm_config, selm_config, vocab, seed=seed)
        lm_names = {n for n in model.tree.names() if n.startswith("lm.")}
        if set(lm_arrays) != lm_names:
            raise ConfigError(
                "language-model arrays do not match the configured architecture"
            )
        merged = {n: model.tree.tensor(n).data for n in model.tree.names()}
        merged.update(lm_arrays)
        model.tree.load_arrays(merged)
        return model

    def clone(self):
        """Independent copy sharing nothing mutable with this model."""
        other = SelmModel(self.lm_config, self.selm_config, self.vocab, seed=0)
        other.tree.load_arrays({n: self.tree.tensor(n).data for n in self.tree.names()})
        return other

    def trainable_group_names(self):
        groups = {
            "audio_projection": [],
            "audio_mapper": [],
            "text_mapper": [],
        }
        for name in self.tree.trainable_names():
            groups[name.split(".", 1)[0]].append(name)
        return groups

    # -- forward pieces ---------------------------------------------------------

    def audio_project(self, feature):
        """(frames, d_a) feature matrix -> pooled (1, d_proj) row."""
        feature = np.asarray(feature, dtype=np.float64)
        if feature.ndim != 2 or feature.shape[0] < 1:
            raise ShapeError(f"audio feature must be (frames, d_a), got {feature.shape}")
        if feature.shape[1] != self.selm_config.d_a:
            raise ShapeError(
                f"feature width {feature.shape[1]} != configured d_a {self.selm_config.d_a}"
            )
        if not np.all(np.isfinite(feature)):
            raise InvalidValueError("audio feature contains non-finite values")
        x = Tensor(feature)
        h = T.gelu(x @ self.ap1_w + self.ap1_b) @ self.ap2_w + self.ap2_b
        pooled = T.mean(h, axis=0)
        return T.reshape(pooled, (1, self.d_proj))

    def audio_map(self, pooled):
        """Pooled (1, d_proj) row -> k audio prefix rows (k, d_lm)."""
        if pooled.shape != (1, self.d_proj):
            raise ShapeError(f"pooled vector must be (1, {self.d_proj}), got {pooled.shape}")
        k, d = self.selm_config.k, self.lm_config.d_lm
        seq = T.reshape(pooled @ self.seq_w + self.seq_b, (k, d))
        return self.audio_layer(seq)

    def text_map(self, prompt):
        """Prompt text -> k text prefix rows (k, d_lm).

        The token sequence is right-padded with PAD (or truncated) to exactly
        k ids before embedding, so the output shape never depends on prompt
        length.
        """
        ids = self.vocab.encode(prompt)
        if not ids:
            raise InputError("prompt tokenizes to zero tokens")
        ids = ids[:self.selm_config.k]
        ids = ids + [PAD_ID] * (self.selm_config.k - len(ids))
        emb = self.lm.embed_tokens(ids)
        return self.text_layer(emb)

    def build_prefix(self, audio_rows, text_rows):
        """Row-concatenate the two k-row blocks, audio first: (2k, d_lm)."""
        k, d = self.selm_config.k, self.lm_config.d_lm
        if audio_rows.shape != (k, d) or text_rows.shape != (k, d):
            raise ShapeError(
                f"prefix blocks must both be ({k}, {d}), got "
                f"{audio_rows.shape} and {text_rows.shape}"
            )
        return T.concat([audio_rows, text_rows], axis=0)

    def prefix_for(self, feature, prompt):
        return self.build_prefix(
            self.audio_map(self.audio_project(feature)), self.text_map(prompt)
        )

    # -- inference ----------------------------------------------------------------

    def generate(self, feature, prompt, beam=3, max_tokens=20):
        text, _ = self.generate_scored(feature, prompt, beam=beam, max_tokens=max_tokens)
        return text

    def generate_scored(self, feature, prompt, beam=3, max_tokens=20):
        """Beam-search decode; returns (text, logprob of the returned hypothesis).

        Length-unnormalized: each step keeps the `beam` highest-logprob
        candidates; a candidate ending in EOS (or hitting max_tokens) retires.
        The best finished hypothesis wins, ties going to the earlier expansion.
        """
        if beam < 1:
            raise ConfigError("beam must be >= 1")
        if max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        needed = 2 * self.selm_config.k + 1 + max_tokens
        if needed > self.lm_config.context_length:
            raise ContextOverflowError(
                f"prefix + {max_tokens} tokens needs {needed} positions, "
                f"context is {self.lm_config.context_length}"
            )
        with T.no_grad():
            prefix = self.prefix_for(feature, prompt)
            root = BeamHypothesis([BOS_ID], 0.0)
            alive = [root]
            protected = root  # head of the greedy chain
            finished = []
            for _ in range(max_tokens):
                if not alive:
                    break
                best_done = max((h.logprob for h in finished), default=-np.inf)
                if alive[0].logprob <= best_done:
                    break  # extensions only lower the score
                candidates = []
                greedy_ext = None
                for hyp in alive:
                    logits, _ = self.lm.forward(prefix, hyp.tokens)
                    logp = T.log_softmax_row(logits.data[-1])
                    if not np.all(np.isfinite(logp)):
                        raise InvalidValueError("non-finite next-token log-probs")
                    top = np.argsort(-logp, kind="stable")[:beam]
                    for rank, tok in enumerate(top):
                        cand = BeamHypothesis(hyp.tokens + [int(tok)],
                                              hyp.logprob + float(logp[tok]))
                        candidates.append(cand)
                        if rank == 0 and hyp is protected:
                            greedy_ext = cand
                candidates.sort(key=lambda h: -h.logprob)  # stable: ties keep expansion order
                kept = candidates[:beam]
                # keep the greedy chain alive: guarantees the returned score is
                # never below pure argmax decoding, at any beam width
                if greedy_ext is not None and greedy_ext not in kept:
                    kept[-1] = greedy_ext
                alive = []
                protected = None
                for cand in kept:
                    if cand.tokens[-1] == EOS_ID:
                        cand.finished = True
                        finished.append(cand)
                    else:
                        alive.append(cand)
                    if cand is greedy_ext and not cand.finished:
                        protected = cand
            for hyp in alive:  # length limit reached
                hyp.finished = True
                finished.append(hyp)
        best = max(finished, key=lambda h: h.logprob)  # ties: earliest retained
        out = [t for t in best.tokens[1:] if t != EOS_ID]
        return self.vocab.decode(out), best.logprob

    def embed_text(self, text):
        """Mean of the frozen text-embedder rows over the text's tokens.

        Tokenization is canonicalized with a leading space so a bare word gets
        the same token ids as its in-sentence (space-prefixed) occurrences.
        Empty text falls back to the BOS embedding row.
        """
        if text:
            canon = text if text.startswith(" ") else " " + text
            ids = self.vocab.encode(canon)
        else:
            ids = [BOS_ID]
        return self.lm.tok_emb.data[ids].mean(axis=0)

    def map_to_class(self, generated, classes):
        """Index of the class whose text embedding is most cosine-similar.

        Ties break toward the lowest class index.
        """
        classes = list(classes)
        if not classes:
            raise InputError("empty class set")
        if len(set(classes)) != len(classes):
            raise InputError("class names must be unique")
        e = self.embed_text(generated)
        sims = np.empty(len(classes))
        for i, cname in enumerate(classes):
            c = self.embed_text(cname)
            denom = (np.linalg.norm(e) * np.linalg.norm(c)) + 1e-12
            sims[i] = float(np.dot(e, c) / denom)
        return int(np.argmax(sims))
