"""Evaluation metric and the three experiment protocols (in-domain, OOD, few-shot).

Reports are plain dicts of JSON-serializable values without wall-clock data,
so a (checkpoint, manifest, seed) triple reproduces them byte-for-byte.
The predictor interface only ever sees (feature, prompt); targets stay on the
evaluation side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import FeatureStore, Manifest
from .errors import ConfigError, DataError, LeakageError, MetricError
from .lm import LMConfig
from .model import SelmConfig, SelmModel
from .trainer import FewShotConfig, TrainConfig, few_shot_finetune, select_param_groups, train


def unweighted_accuracy(predictions, labels, n_classes):
    """Mean per-class recall. Every class must appear among the labels."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise MetricError("predictions and labels differ in length")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise MetricError(f"label index outside [0, {n_classes})")
    if predictions.size and (predictions.min() < 0 or predictions.max() >= n_classes):
        raise MetricError(f"prediction index outside [0, {n_classes})")
    recalls = []
    for c in range(n_classes):
        in_class = labels == c
        if not in_class.any():
            raise MetricError(f"class {c} absent from labels; recall undefined")
        recalls.append(float((predictions[in_class] == c).mean()))
    return float(np.mean(recalls))


def per_class_recalls(predictions, labels, classes):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    out = {}
    for ci, name in enumerate(classes):
        in_class = labels == ci
        if not in_class.any():
            raise MetricError(f"class {name!r} absent from labels")
        out[name] = float((predictions[in_class] == ci).mean())
    return out


@dataclass
class EvalConfig:
    """Everything the experiment runners need beyond the manifests."""
    train: TrainConfig
    fewshot: FewShotConfig
    beam: int = 3
    max_tokens: int = 20
    classes: tuple | None = None   # override; default = manifest classes
    seed: int = 0


def default_eval_config(seed=0, epochs=60):
    return EvalConfig(train=TrainConfig(epochs=epochs, seed=seed),
                      fewshot=FewShotConfig(seed=seed), seed=seed)


def evaluate_rows(predict, rows, classes):
    """Run `predict(feature_ref, prompt) -> class index` over categorical rows.

    Returns (report_fragment, predictions, labels). `predict` never sees the
    target or label.
    """
    class_index = {c: i for i, c in enumerate(classes)}
    preds, labels = [], []
    for row in rows:
        if row["label"] not in class_index:
            raise DataError(f"label {row['label']!r} not in class set {list(classes)}")
        preds.append(int(predict(row["feature_path"], row["prompt"])))
        labels.append(class_index[row["label"]])
    ua = unweighted_accuracy(preds, labels, len(classes))
    fragment = {
        "ua": ua,
        "per_class_recall": per_class_recalls(preds, labels, classes),
        "n_examples": len(rows),
    }
    return fragment, preds, labels


def model_predictor(model: SelmModel, features: FeatureStore, classes,
                    beam=3, max_tokens=20):
    """Generation + class mapping as a (feature_ref, prompt) -> index closure."""
    def predict(feature_ref, prompt):
        feat = features.load(feature_ref)
        text = model.generate(feat, prompt, beam=beam, max_tokens=max_tokens)
        return model.map_to_class(text, classes)
    return predict


def build_model(lm_config: LMConfig, lm_arrays, vocab, d_a, k, seed):
    cfg = SelmConfig(k=k, d_a=d_a)
    return SelmModel.from_lm(lm_config, lm_arrays, vocab, cfg, seed=seed)


def _infer_d_a(manifest: Manifest, features: FeatureStore):
    if not manifest.rows:
        raise DataError("empty manifest")
    return features.load(manifest.rows[0]["feature_path"]).shape[1]


def run_in_domain(manifest: Manifest, lm_config, lm_arrays, vocab, config: EvalConfig):
    """K-fold cross-validation: train on k-1 folds, decode+map the held-out fold."""
    folds = sorted({r["fold"] for r in manifest.rows})
    if not folds or folds[0] < 0:
        raise ConfigError("in-domain run needs fold assignments (run make-folds first)")
    features = FeatureStore(manifest.root)
    classes = tuple(config.classes or manifest.classes())
    d_a = _infer_d_a(manifest, features)
    fold_reports = []
    uas = []
    for fold in folds:
        model = build_model(lm_config, lm_arrays, vocab, d_a, config.train.k,
                            seed=config.seed + 101 * fold)
        train_rows = manifest.subset(exclude_fold=fold)
        cfg = TrainConfig(**{**config.train.to_dict(),
                             "seed": config.seed + 101 * fold,
                             "groups": tuple(config.train.groups)})
        train(train_rows.triplets(), cfg, model, features)
        eval_rows = manifest.subset(view="categorical", fold=fold).rows
        predict = model_predictor(model, features, classes,
                                  beam=config.beam, max_tokens=config.max_tokens)
        fragment, _, _ = evaluate_rows(predict, eval_rows, classes)
        fragment["setup"] = f"in-domain/fold{fold}"
        fragment["seed"] = cfg.seed
        fold_reports.append(fragment)
        uas.append(fragment["ua"])
    return {
        "setup": "in-domain",
        "classes": list(classes),
        "folds": fold_reports,
        "mean_ua": float(np.mean(uas)),
        "std_ua": float(np.std(uas)),
        "n_folds": len(folds),
        "seed": config.seed,
        "config": config.train.to_dict(),
    }


def check_disjoint(train_manifest: Manifest, test_manifest: Manifest):
    overlap = train_manifest.ids() & test_manifest.ids()
    if overlap:
        raise LeakageError(
            f"{len(overlap)} ids shared between train and test manifests "
            f"(e.g. {sorted(overlap)[:3]})"
        )


def train_source_model(train_manifest: Manifest, lm_config, lm_arrays, vocab,
                       config: EvalConfig):
    """Fit a model on the source domain's train split (all views)."""
    features = FeatureStore(train_manifest.root)
    d_a = _infer_d_a(train_manifest, features)
    model = build_model(lm_config, lm_arrays, vocab, d_a, config.train.k, seed=config.seed)
    rows = train_manifest.subset(split="train")
    train(rows.triplets(), config.train, model, features)
    return model


def evaluate_model(model: SelmModel, manifest: Manifest, config: EvalConfig,
                   split="test", setup="eval"):
    features = FeatureStore(manifest.root)
    classes = tuple(config.classes or manifest.classes())
    rows = manifest.subset(view="categorical", split=split).rows
    if not rows:
        raise DataError(f"no categorical rows in split {split!r}")
    predict = model_predictor(model, features, classes,
                              beam=config.beam, max_tokens=config.max_tokens)
    fragment, _, _ = evaluate_rows(predict, rows, classes)
    fragment["setup"] = setup
    fragment["classes"] = list(classes)
    fragment["seed"] = config.seed
    return fragment


def run_ood(train_manifest: Manifest, test_manifest: Manifest, lm_config,
            lm_arrays, vocab, config: EvalConfig, model: SelmModel | None = None):
    """Train on the source domain, evaluate zero-shot on the shifted domain."""
    check_disjoint(train_manifest, test_manifest)
    if model is None:
        model = train_source_model(train_manifest, lm_config, lm_arrays, vocab, config)
    report = evaluate_model(model, test_manifest, config, split="test", setup="ood/zero-shot")
    report["config"] = config.train.to_dict()
    return report, model


def run_fsl(base_model: SelmModel, target_manifest: Manifest, n_per_class,
            group_spec, seeds, config: EvalConfig):
    """Per seed: sample shots, finetune the selected group, evaluate; then aggregate."""
    from .dataio import sample_shots  # local import to avoid a cycle

    if not seeds:
        raise ConfigError("need at least one seed")
    features = FeatureStore(target_manifest.root)
    group_names = select_param_groups(group_spec, base_model)
    per_seed = []
    uas = []
    for seed in seeds:
        model = base_model.clone()
        shots = sample_shots(target_manifest, n_per_class, seed)
        fs_cfg = FewShotConfig(**{**config.fewshot.to_dict(), "seed": seed})
        few_shot_finetune(model, shots, group_spec, fs_cfg, features)
        fragment = evaluate_model(model, target_manifest, config,
                                  split="test", setup=f"fsl/{n_per_class}-shot/seed{seed}")
        fragment["seed"] = seed
        fragment["n_per_class"] = n_per_class
        per_seed.append(fragment)
        uas.append(fragment["ua"])
    return {
        "setup": f"fsl/{n_per_class}-shot",
        "group_spec": list(group_spec) if not isinstance(group_spec, str) else [group_spec],
        "group_params": group_names,
        "n_per_class": n_per_class,
        "seeds": list(map(int, seeds)),
        "per_seed": per_seed,
        "mean_ua": float(np.mean(uas)),
        "std_ua": float(np.std(uas)),
        "config": config.fewshot.to_dict(),
    }


def run_fsl_ablation(base_model: SelmModel, target_manifest: Manifest, n_per_class,
                     groups, seeds, config: EvalConfig):
    """Comparable per-group few-shot reports (no ordering asserted between groups)."""
    return {
        "setup": f"fsl-ablation/{n_per_class}-shot",
        "groups": {g: run_fsl(base_model, target_manifest, n_per_class, g, seeds, config)
                   for g in groups},
    }
