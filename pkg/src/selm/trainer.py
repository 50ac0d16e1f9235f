"""Training of the mapper parameters against the frozen language model.

compute_loss realizes next-token cross entropy over target tokens only: for
each example the LM input is [prefix rows; BOS + target tokens] and the loss
terms are the predictions of target token 1..L and the closing EOS. Prefix
rows contribute no loss terms; the frozen LM never receives updates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .bpe import BOS_ID, EOS_ID
from .errors import ConfigError, ContextOverflowError, DataError, InputError
from .model import SelmModel
from .optim import Adam, clip_global_norm

PARAM_GROUPS = ("AL-Enc", "AL-Dec", "AT", "TT", "ALL")


@dataclass
class TrainConfig:
    epochs: int = 80
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    k: int = 10
    clip_norm: float = 1.0
    groups: tuple = ("ALL",)

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")

    def to_dict(self):
        d = asdict(self)
        d["groups"] = list(self.groups)
        return d


@dataclass
class Triplet:
    """One training/eval record: audio feature reference, prompt, target text."""
    id: str
    feature_ref: str
    prompt: str
    target: str
    view: str
    label: str
    fold: int = -1
    split: str = "train"


def select_param_groups(spec, model: SelmModel):
    """Parameter names selected by the finetuning-group spec.

    AL-Enc: first linear of the audio projection. AL-Dec: the sequence-mapper
    linear that fans the pooled vector out to k rows. AT / TT: the audio- and
    text-mapper attention layers. ALL: every trainable parameter.
    """
    if isinstance(spec, str):
        spec = [spec]
    spec = list(spec)
    if not spec:
        raise ConfigError("empty parameter-group spec")
    names: set[str] = set()
    trainable = model.tree.trainable_names()
    for group in spec:
        if group == "AL-Enc":
            names.update(n for n in trainable if n.startswith("audio_projection.linear1."))
        elif group == "AL-Dec":
            names.update(n for n in trainable if n.startswith("audio_mapper.seq_linear."))
        elif group == "AT":
            names.update(n for n in trainable if n.startswith("audio_mapper.layer."))
        elif group == "TT":
            names.update(n for n in trainable if n.startswith("text_mapper.layer."))
        elif group == "ALL":
            names.update(trainable)
        else:
            raise ConfigError(f"unknown parameter group {group!r} (known: {PARAM_GROUPS})")
    return sorted(names)


def example_loss(model: SelmModel, feature, prompt, target):
    """Scalar loss node for one (feature, prompt, target) example."""
    target_ids = model.vocab.encode(target)
    if not target_ids:
        raise InputError(f"target {target!r} tokenizes to zero tokens")
    prefix = model.prefix_for(feature, prompt)
    seq = [BOS_ID] + target_ids
    total = prefix.shape[0] + len(seq)
    if total > model.lm_config.context_length:
        raise ContextOverflowError(
            f"prefix + target needs {total} positions, "
            f"context is {model.lm_config.context_length}"
        )
    logits, _ = model.lm.forward(prefix, seq)
    n = logits.shape[0]
    # row at position p predicts the token at p+1; rows for BOS..target[-1]
    # predict target[0..] then EOS. Prefix rows carry no loss.
    targets = np.zeros(n, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    start = prefix.shape[0]
    predict = target_ids + [EOS_ID]
    targets[start:start + len(predict)] = predict
    mask[start:start + len(predict)] = True
    return T.softmax_cross_entropy(logits, targets, mask)


def compute_loss(model: SelmModel, batch, features):
    """Mean of per-example losses over a batch of Triplets.

    `features` resolves feature_ref -> (frames, d_a) array (see
    dataio.FeatureStore).
    """
    if not batch:
        raise DataError("empty batch")
    total = None
    for trip in batch:
        feat = _resolve(features, trip)
        piece = example_loss(model, feat, trip.prompt, trip.target) * (1.0 / len(batch))
        total = piece if total is None else total + piece
    return total


def _resolve(features, trip: Triplet):
    try:
        return features.load(trip.feature_ref)
    except Exception as e:
        raise DataError(f"cannot resolve feature for triplet {trip.id!r}: {e}") from e


def _accumulate_batch(model, batch, features):
    """Backward each example with 1/B scaling; returns the batch mean loss."""
    losses = []
    for trip in batch:
        feat = _resolve(features, trip)
        loss = example_loss(model, feat, trip.prompt, trip.target) * (1.0 / len(batch))
        loss.backward()
        losses.append(loss.item() * len(batch))
    return float(np.mean(losses))


def train(dataset, config: TrainConfig, model: SelmModel, features,
          param_names=None, log=None):
    """Adam training of the selected mapper parameters; returns an epoch report.

    Shuffling is deterministic per (seed, epoch); everything under "lm." stays
    byte-identical. The report rows are JSON-serializable
    {epoch, mean_loss, lr, wall_ms} records.
    """
    if not dataset:
        raise DataError("empty training dataset")
    if param_names is None:
        param_names = select_param_groups(config.groups, model)
    opt = Adam(model.tree, names=param_names, lr=config.lr)
    selected = set(param_names)
    report = []
    for epoch in range(config.epochs):
        t0 = time.monotonic()
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(len(dataset))
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[lo:lo + config.batch_size]]
            model.tree.zero_grad()
            mean_loss = _accumulate_batch(model, batch, features)
            grads = {n: g for n, g in model.tree.gradients().items() if n in selected}
            clip_global_norm(grads, config.clip_norm)
            opt.step(grads)
            epoch_losses.append((mean_loss, len(batch)))
        n_total = sum(c for _, c in epoch_losses)
        mean = sum(l * c for l, c in epoch_losses) / n_total
        row = {
            "epoch": epoch,
            "mean_loss": float(mean),
            "lr": config.lr,
            "wall_ms": int(1000 * (time.monotonic() - t0)),
        }
        report.append(row)
        if log is not None:
            log(row)
    return report


@dataclass
class FewShotConfig:
    epochs: int = 20
    lr: float = 1e-4
    seed: int = 0
    clip_norm: float = 1.0
    batch_size: int = 0   # 0 = single batch of all shots

    def to_dict(self):
        return asdict(self)


def few_shot_finetune(model: SelmModel, shots, group_spec, config: FewShotConfig,
                      features):
    """Finetune only the group-selected parameters on the shot set.

    Shots must come with equal per-class counts (strict N-shot semantics).
    Optimizer state is fresh; parameters outside the selection stay
    byte-identical. Returns the epoch report.
    """
    if not shots:
        raise DataError("empty shot set")
    counts = {}
    for s in shots:
        counts[s.label] = counts.get(s.label, 0) + 1
    if len(set(counts.values())) != 1:
        raise DataError(f"unequal per-class shot counts: {sorted(counts.items())}")
    names = select_param_groups(group_spec, model)
    if config.epochs == 0:
        return []
    train_cfg = TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size or len(shots),
        lr=config.lr,
        seed=config.seed,
        clip_norm=config.clip_norm,
    )
    return train(list(shots), train_cfg, model, features, param_names=names)
