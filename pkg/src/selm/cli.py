"""Command-line interface.

Every subcommand prints its machine-readable report as JSON on stdout and a
short human summary on stderr; failures exit nonzero with a typed error
message ("<ErrorType>: <detail>") on stderr.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bpe import train_bpe
from .dataio import (
    FeatureStore,
    Manifest,
    SynthConfig,
    make_folds,
    read_feature,
    synthesize_dataset,
)
from .errors import ConfigError, SelmError
from .gradcheck import grad_check
from .harness import (
    EvalConfig,
    run_fsl,
    run_fsl_ablation,
    run_in_domain,
    run_ood,
    train_source_model,
)
from .lm import LMConfig, pretrain_lm
from .model import SelmConfig, SelmModel
from .oracle import exhaustive_agreement
from .store import load_lm_bundle, load_selm, save_lm_bundle, save_selm
from .trainer import FewShotConfig, TrainConfig, PARAM_GROUPS


def emit(report, summary):
    json.dump(report, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    print(summary, file=sys.stderr)


def _load_json(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class _Cli(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except SelmError as e:
            print(f"{type(e).__name__}: {e}", file=sys.stderr)
            sys.exit(1)


@click.group(cls=_Cli)
@click.version_option(__version__)
def main():
    """Audio-conditioned emotion language modeling: data, training, decoding, eval."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON file of generator settings (defaults used otherwise).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
def synth(config_path, out_dir, seed):
    """Generate a synthetic benchmark dataset (features + manifest + corpus)."""
    raw = _load_json(config_path)
    if seed is not None:
        raw["seed"] = seed
    cfg = SynthConfig.from_dict(raw) if raw else SynthConfig()
    manifest = synthesize_dataset(cfg, out_dir)
    report = {
        "out_dir": str(out_dir),
        "n_rows": len(manifest.rows),
        "classes": list(cfg.classes),
        "shift_delta": cfg.shift_delta,
        "seed": cfg.seed,
    }
    emit(report, f"wrote {len(manifest.rows)} manifest rows to {out_dir}")


@main.command("make-folds")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--folds", "n_folds", type=int, default=5)
@click.option("--seed", type=int, default=0)
def make_folds_cmd(manifest_path, n_folds, seed):
    """Assign stratified cross-validation folds in place."""
    manifest = Manifest.load(manifest_path)
    folded = make_folds(manifest, n_folds, seed)
    folded.save(manifest_path)
    emit({"manifest": str(manifest_path), "n_folds": n_folds, "seed": seed},
         f"assigned {n_folds} folds in {manifest_path}")


@main.command("pretrain-lm")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON with optional lm/vocab/steps/batch_size/lr fields.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=0)
def pretrain_lm_cmd(corpus_path, config_path, out_path, steps, seed):
    """Train the tokenizer and the frozen-prior language model on a text corpus."""
    raw = _load_json(config_path)
    lm_config = LMConfig.from_dict(raw.get("lm", {})) if raw.get("lm") else LMConfig()
    with open(corpus_path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    vocab = train_bpe(lines, int(raw.get("vocab", lm_config.vocab_size)))
    tree, _, report = pretrain_lm(
        lines, vocab, lm_config,
        steps=steps or int(raw.get("steps", 1500)),
        batch_size=int(raw.get("batch_size", 8)),
        lr=float(raw.get("lr", 1e-3)),
        seed=seed,
    )
    ckpt, vocab_path = save_lm_bundle(out_path, tree, lm_config, vocab)
    report["checkpoint"] = str(ckpt)
    report["vocab"] = str(vocab_path)
    emit(report, f"pretrained LM -> {ckpt} (final loss {report['final_loss']:.4f})")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--lm", "lm_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
def train(manifest_path, lm_path, config_path, out_path, seed):
    """Train the mapper stack on a manifest against a frozen LM checkpoint."""
    from .harness import build_model, _infer_d_a
    from .trainer import train as run_train

    raw = _load_json(config_path)
    cfg = TrainConfig(**{**raw, "seed": seed}) if raw else TrainConfig(seed=seed)
    manifest = Manifest.load(manifest_path)
    lm_config, lm_arrays, vocab = load_lm_bundle(lm_path)
    features = FeatureStore(manifest.root)
    model = build_model(lm_config, lm_arrays, vocab, _infer_d_a(manifest, features),
                        cfg.k, seed)
    rows = manifest.subset(split="train")
    if not rows.rows:
        rows = manifest
    report = run_train(rows.triplets(), cfg, model, features)
    save_selm(out_path, model, lm_path)
    report_path = Path(str(out_path) + ".report.jsonl")
    with open(report_path, "w", encoding="utf-8") as f:
        for row in report:
            f.write(json.dumps(row, sort_keys=True))
            f.write("\n")
    emit({"checkpoint": str(out_path), "report": str(report_path),
          "final_loss": report[-1]["mean_loss"], "epochs": len(report), "seed": seed},
         f"trained mapper -> {out_path} (final loss {report[-1]['mean_loss']:.4f})")


@main.command()
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--lm", "lm_path", type=click.Path(exists=True), default=None,
              help="Override the checkpoint's stored LM reference.")
@click.option("--feature", "feature_path", required=True, type=click.Path(exists=True))
@click.option("--prompt", required=True)
@click.option("--beam", type=int, default=3)
@click.option("--max-tokens", type=int, default=20)
@click.option("--seed", type=int, default=0)
def generate(ckpt_path, lm_path, feature_path, prompt, beam, max_tokens, seed):
    """Decode a response for one feature file."""
    model = load_selm(ckpt_path, lm_path)
    feat = read_feature(feature_path)
    text, logprob = model.generate_scored(feat, prompt, beam=beam, max_tokens=max_tokens)
    emit({"text": text, "logprob": logprob, "beam": beam, "seed": seed},
         f"generated: {text!r} (logprob {logprob:.4f})")


@main.command("map-class")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--lm", "lm_path", type=click.Path(exists=True), default=None)
@click.option("--text", required=True)
@click.option("--classes", required=True, help="Comma-separated class names.")
@click.option("--seed", type=int, default=0)
def map_class(ckpt_path, lm_path, text, classes, seed):
    """Snap free text onto one of the given classes by embedding cosine."""
    model = load_selm(ckpt_path, lm_path)
    names = [c.strip() for c in classes.split(",") if c.strip()]
    idx = model.map_to_class(text, names)
    emit({"text": text, "classes": names, "index": idx, "label": names[idx], "seed": seed},
         f"{text!r} -> {names[idx]} (index {idx})")


def _eval_config(raw, seed):
    train_cfg = TrainConfig(**{**raw.get("train", {}), "seed": seed})
    fs_cfg = FewShotConfig(**{**raw.get("fewshot", {}), "seed": seed})
    return EvalConfig(
        train=train_cfg,
        fewshot=fs_cfg,
        beam=int(raw.get("beam", 3)),
        max_tokens=int(raw.get("max_tokens", 20)),
        classes=tuple(raw["classes"]) if raw.get("classes") else None,
        seed=seed,
    )


@main.group("eval")
def eval_group():
    """Experiment protocols: in-domain, ood, fsl."""


@eval_group.command("in-domain")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--lm", "lm_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
def eval_in_domain(manifest_path, lm_path, config_path, seed):
    """K-fold cross-validation on one manifest."""
    cfg = _eval_config(_load_json(config_path), seed)
    manifest = Manifest.load(manifest_path)
    lm_config, lm_arrays, vocab = load_lm_bundle(lm_path)
    report = run_in_domain(manifest, lm_config, lm_arrays, vocab, cfg)
    emit(report, f"in-domain mean UA {report['mean_ua']:.4f} over {report['n_folds']} folds")


@eval_group.command("ood")
@click.option("--train-manifest", "train_path", required=True, type=click.Path(exists=True))
@click.option("--test-manifest", "test_path", required=True, type=click.Path(exists=True))
@click.option("--lm", "lm_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--save-ckpt", "save_path", type=click.Path(), default=None,
              help="Also write the source-trained mapper checkpoint here.")
@click.option("--seed", type=int, default=0)
def eval_ood(train_path, test_path, lm_path, config_path, save_path, seed):
    """Train on the source manifest, evaluate zero-shot on the target manifest."""
    cfg = _eval_config(_load_json(config_path), seed)
    train_manifest = Manifest.load(train_path)
    test_manifest = Manifest.load(test_path)
    lm_config, lm_arrays, vocab = load_lm_bundle(lm_path)
    report, model = run_ood(train_manifest, test_manifest, lm_config, lm_arrays, vocab, cfg)
    if save_path:
        save_selm(save_path, model, lm_path)
        report["checkpoint"] = str(save_path)
    emit(report, f"zero-shot OOD UA {report['ua']:.4f}")


@eval_group.command("fsl")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True),
              help="Source-trained mapper checkpoint (see `eval ood --save-ckpt`).")
@click.option("--lm", "lm_path", type=click.Path(exists=True), default=None)
@click.option("--test-manifest", "test_path", required=True, type=click.Path(exists=True))
@click.option("--shots", "n_per_class", type=int, default=8)
@click.option("--groups", default="TT",
              help=f"Comma-separated parameter groups from {PARAM_GROUPS}.")
@click.option("--seeds", default="0,1,2,3,4", help="Comma-separated seed list.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
def eval_fsl(ckpt_path, lm_path, test_path, n_per_class, groups, seeds, config_path, seed):
    """Few-shot adaptation of a trained checkpoint on a target manifest."""
    cfg = _eval_config(_load_json(config_path), seed)
    model = load_selm(ckpt_path, lm_path)
    test_manifest = Manifest.load(test_path)
    seed_list = [int(s) for s in seeds.split(",") if s.strip() != ""]
    if not seed_list:
        raise ConfigError("need at least one seed")
    group_list = [g.strip() for g in groups.split(",") if g.strip()]
    if len(group_list) == 1:
        report = run_fsl(model, test_manifest, n_per_class, group_list[0], seed_list, cfg)
        summary = f"{n_per_class}-shot mean UA {report['mean_ua']:.4f} (group {group_list[0]})"
    else:
        report = run_fsl_ablation(model, test_manifest, n_per_class, group_list, seed_list, cfg)
        means = {g: r["mean_ua"] for g, r in report["groups"].items()}
        summary = f"{n_per_class}-shot ablation: " + ", ".join(
            f"{g}={ua:.4f}" for g, ua in means.items())
    emit(report, summary)


@main.command()
@click.option("--eps", type=float, default=1e-3)
@click.option("--samples", type=int, default=4, help="Coordinates sampled per tensor.")
@click.option("--d-lm", type=int, default=32, help="Check-model width.")
@click.option("--seed", type=int, default=0)
def gradcheck(eps, samples, d_lm, seed):
    """Finite-difference check of every trainable group on a small assembled model."""
    from .bpe import train_bpe as _train_bpe
    from .dataio import pretraining_corpus
    from .trainer import example_loss, select_param_groups

    lines = pretraining_corpus()
    vocab = _train_bpe(lines, 320)
    lm_config = LMConfig(d_lm=d_lm, n_layers=2, n_heads=2, context_length=64,
                         vocab_size=384)
    model = SelmModel(lm_config, SelmConfig(k=4, d_a=8), vocab, seed=seed)
    rng = np.random.default_rng(seed)
    feat = rng.normal(size=(5, 8))
    loss_fn = lambda: example_loss(model, feat, "This person is", "feeling emotion of happy")
    report = {"eps": eps, "seed": seed, "groups": {}}
    worst = 0.0
    for group in ("AL-Enc", "AL-Dec", "AT", "TT"):
        names = select_param_groups(group, model)
        err = grad_check(loss_fn, model.tree, names=names, eps=eps,
                         samples_per_param=samples, seed=seed)
        report["groups"][group] = err
        worst = max(worst, err)
    report["max_relative_error"] = worst
    emit(report, f"max relative gradient error {worst:.3e}")


@main.command("oracle-check")
@click.option("--trials", type=int, default=200)
@click.option("--seed", type=int, default=0)
def oracle_check(trials, seed):
    """Posterior vs factored ranking agreement over random finite joints."""
    n_q, n_ok = exhaustive_agreement(trials, seed)
    report = {"trials": trials, "seed": seed, "queries": n_q, "agreements": n_ok,
              "all_agree": n_q == n_ok}
    emit(report, f"{n_ok}/{n_q} queries agree")
    if n_q != n_ok:
        sys.exit(1)


if __name__ == "__main__":
    main()
