"""Miniature decoder-only transformer language model and its pretraining loop.

The model is GPT-style: learned token + absolute position embeddings,
pre-layer-norm blocks (causal self-attention, then a GELU MLP), a final layer
norm, and an untied output projection. forward() optionally takes a matrix of
continuous prefix rows that occupy the first positions of the sequence in
place of tokens — the hook the mapper stack plugs into.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .bpe import BOS_ID, EOS_ID, Vocabulary
from .errors import ConfigError, ContextOverflowError, DataError
from .optim import Adam, clip_global_norm
from .params import ParameterTree, embedding_init, linear_init


@dataclass
class LMConfig:
    d_lm: int = 64
    n_layers: int = 2
    n_heads: int = 2
    context_length: int = 96
    vocab_size: int = 512

    def __post_init__(self):
        if self.d_lm % self.n_heads != 0:
            raise ConfigError(
                f"d_lm={self.d_lm} not divisible by n_heads={self.n_heads}"
            )
        if min(self.d_lm, self.n_layers, self.n_heads,
               self.context_length, self.vocab_size) < 1:
            raise ConfigError("all LMConfig fields must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(v) for k, v in d.items()})


class TransformerLayer:
    """One pre-LN block: x + attn(ln1(x)), then x + mlp(ln2(x)).

    Shared by the language model (causal=True) and the two mapper layers
    (causal=False). Parameter names are registered under `prefix`.
    """

    def __init__(self, tree: ParameterTree, prefix, d, n_heads, rng,
                 frozen=False, causal=False):
        if d % n_heads != 0:
            raise ConfigError(f"width {d} not divisible by heads {n_heads}")
        self.d = d
        self.n_heads = n_heads
        self.causal = causal
        add = lambda name, arr: tree.add(f"{prefix}.{name}", arr, frozen=frozen)
        self.ln1_g = add("ln1.gain", np.ones(d))
        self.ln1_b = add("ln1.bias", np.zeros(d))
        self.qkv_w = add("attn.qkv.weight", linear_init(rng, d, 3 * d))
        self.qkv_b = add("attn.qkv.bias", np.zeros(3 * d))
        self.proj_w = add("attn.proj.weight", linear_init(rng, d, d))
        self.proj_b = add("attn.proj.bias", np.zeros(d))
        self.ln2_g = add("ln2.gain", np.ones(d))
        self.ln2_b = add("ln2.bias", np.zeros(d))
        self.fc1_w = add("mlp.fc1.weight", linear_init(rng, d, 4 * d))
        self.fc1_b = add("mlp.fc1.bias", np.zeros(4 * d))
        self.fc2_w = add("mlp.fc2.weight", linear_init(rng, 4 * d, d))
        self.fc2_b = add("mlp.fc2.bias", np.zeros(d))

    def _attention(self, x):
        n = x.shape[0]
        h, dh = self.n_heads, self.d // self.n_heads
        qkv = x @ self.qkv_w + self.qkv_b
        heads = []
        for part in range(3):
            p = T.narrow(qkv, 1, part * self.d, self.d)
            heads.append(T.transpose(T.reshape(p, (n, h, dh)), (1, 0, 2)))
        q, k, v = heads
        scores = (q @ T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
        att = T.softmax(scores, causal=self.causal)
        out = T.transpose(att @ v, (1, 0, 2))
        return T.reshape(out, (n, self.d)) @ self.proj_w + self.proj_b

    def __call__(self, x):
        x = x + self._attention(T.layer_norm(x, self.ln1_g, self.ln1_b))
        h = T.layer_norm(x, self.ln2_g, self.ln2_b) @ self.fc1_w + self.fc1_b
        return x + T.gelu(h) @ self.fc2_w + self.fc2_b


class LanguageModel:
    """Transformer LM over a ParameterTree; all names live under "lm."."""

    PREFIX = "lm"

    def __init__(self, tree: ParameterTree, config: LMConfig, rng=None, frozen=False):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        self.tree = tree
        c = config
        self.tok_emb = tree.add(
            f"{self.PREFIX}.token_embedding.weight",
            embedding_init(rng, c.vocab_size, c.d_lm), frozen=frozen)
        self.pos_emb = tree.add(
            f"{self.PREFIX}.position_embedding.weight",
            embedding_init(rng, c.context_length, c.d_lm), frozen=frozen)
        self.layers = [
            TransformerLayer(tree, f"{self.PREFIX}.h{i}", c.d_lm, c.n_heads,
                             rng, frozen=frozen, causal=True)
            for i in range(c.n_layers)
        ]
        self.lnf_g = tree.add(f"{self.PREFIX}.ln_f.gain", np.ones(c.d_lm), frozen=frozen)
        self.lnf_b = tree.add(f"{self.PREFIX}.ln_f.bias", np.zeros(c.d_lm), frozen=frozen)
        self.head_w = tree.add(f"{self.PREFIX}.head.weight",
                               linear_init(rng, c.d_lm, c.vocab_size), frozen=frozen)

    def embed_tokens(self, ids):
        """Token ids -> embedding rows (n, d_lm)."""
        return T.embedding(self.tok_emb, list(ids))

    def forward(self, prefix, ids):
        """Causal forward over [prefix rows; embedded ids].

        prefix: Tensor (m, d_lm) or None. Positions count from 0 with the
        prefix occupying the first m slots. Returns (logits, hidden), both
        over all m+n positions; hidden is the final-layer-norm output.
        """
        ids = list(ids)
        m = 0 if prefix is None else prefix.shape[0]
        n_total = m + len(ids)
        if n_total > self.config.context_length:
            raise ContextOverflowError(
                f"sequence of {n_total} exceeds context {self.config.context_length}"
            )
        if n_total == 0:
            raise ConfigError("forward of an empty sequence")
        pieces = []
        if prefix is not None:
            if prefix.ndim != 2 or prefix.shape[1] != self.config.d_lm:
                raise ConfigError(f"prefix must be (m, {self.config.d_lm}), got {prefix.shape}")
            pieces.append(prefix)
        if ids:
            pieces.append(self.embed_tokens(ids))
        x = pieces[0] if len(pieces) == 1 else T.concat(pieces, axis=0)
        x = x + T.narrow(self.pos_emb, 0, 0, n_total)
        for layer in self.layers:
            x = layer(x)
        hidden = T.layer_norm(x, self.lnf_g, self.lnf_b)
        logits = hidden @ self.head_w
        return logits, hidden

    def param_names(self):
        return [n for n in self.tree.names() if n.startswith(f"{self.PREFIX}.")]


def build_lm(config: LMConfig, seed=0, frozen=False):
    """Fresh tree + LM with seeded initialization."""
    tree = ParameterTree()
    rng = np.random.default_rng([seed, 0xC0FFEE])
    lm = LanguageModel(tree, config, rng=rng, frozen=frozen)
    return tree, lm


def load_lm(config_dict, arrays, frozen=True):
    """Rebuild an LM from checkpoint contents."""
    config = LMConfig.from_dict(config_dict)
    tree, lm = build_lm(config, seed=0, frozen=frozen)
    tree.load_arrays(arrays)
    return tree, lm


# -- pretraining ---------------------------------------------------------------


def corpus_windows(lines, vocab: Vocabulary, context_length):
    """One training window per line start, wrapping around the token stream.

    Each line becomes [BOS] tokens [EOS]; the window starting at line i runs
    context_length+1 tokens into the following lines (cyclically), so every
    token is seen at many absolute positions.
    """
    starts = []
    stream = []
    for line in lines:
        starts.append(len(stream))
        stream.append(BOS_ID)
        stream.extend(vocab.encode(line))
        stream.append(EOS_ID)
    span = context_length + 1
    if len(stream) < span:
        raise DataError(
            f"corpus of {len(stream)} tokens is shorter than one context window ({span})"
        )
    n = len(stream)
    return [[stream[(s + j) % n] for j in range(span)] for s in starts]


def window_loss(lm: LanguageModel, windows):
    """Mean next-token cross entropy over a list of windows (no grad)."""
    with T.no_grad():
        losses = []
        for w in windows:
            logits, _ = lm.forward(None, w[:-1])
            losses.append(T.softmax_cross_entropy(logits, w[1:]).item())
    return float(np.mean(losses))


def pretrain_lm(lines, vocab: Vocabulary, config: LMConfig, steps=1500,
                batch_size=8, lr=1e-3, clip_norm=1.0, seed=0, log_every=100):
    """Next-token training from scratch; returns (tree, lm, report).

    The report carries the step losses so callers can write a training curve.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if len(vocab) > config.vocab_size:
        raise ConfigError(
            f"vocabulary of {len(vocab)} does not fit vocab_size {config.vocab_size}"
        )
    windows = corpus_windows(lines, vocab, config.context_length)
    tree, lm = build_lm(config, seed=seed, frozen=False)
    opt = Adam(tree, lr=lr)
    losses = []
    order = []
    epoch = 0
    t0 = time.monotonic()
    for step in range(steps):
        if not order:
            order = list(np.random.default_rng([seed, 1, epoch]).permutation(len(windows)))
            epoch += 1
        k = min(batch_size, len(order))
        take = [windows[order.pop()] for _ in range(k)]
        tree.zero_grad()
        batch_losses = []
        for w in take:
            logits, _ = lm.forward(None, w[:-1])
            loss = T.softmax_cross_entropy(logits, w[1:]) * (1.0 / len(take))
            loss.backward()
            batch_losses.append(loss.item() * len(take))
        grads = tree.gradients()
        clip_global_norm(grads, clip_norm)
        opt.step(grads)
        losses.append(float(np.mean(batch_losses)))
    report = {
        "steps": steps,
        "batch_size": batch_size,
        "lr": lr,
        "seed": seed,
        "n_windows": len(windows),
        "first_loss": losses[0],
        "final_loss": float(np.mean(losses[-10:])),
        "loss_curve": losses[::log_every] + [losses[-1]],
        "wall_ms": int(1000 * (time.monotonic() - t0)),
    }
    return tree, lm, report


def greedy_continuation(lm: LanguageModel, vocab: Vocabulary, stem, max_tokens=8):
    """Greedy LM continuation of a stem (text or token ids); decodes to text."""
    stem_ids = list(stem) if not isinstance(stem, str) else vocab.encode(stem)
    ids = [BOS_ID] + stem_ids
    out = []
    with T.no_grad():
        for _ in range(max_tokens):
            if len(ids) >= lm.config.context_length:
                break
            logits, _ = lm.forward(None, ids)
            nxt = int(np.argmax(logits.data[-1]))
            if nxt == EOS_ID:
                break
            ids.append(nxt)
            out.append(nxt)
    return vocab.decode(out)
