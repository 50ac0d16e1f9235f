"""CLI pipeline: synth -> folds -> pretrain-lm -> train -> generate/map-class/eval."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from selm.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workspace(runner, tmp_path_factory):
    """One full tiny pipeline, shared by the assertions below."""
    root = tmp_path_factory.mktemp("cli")
    synth_cfg = root / "synth.json"
    synth_cfg.write_text(json.dumps({
        "classes": ["happy", "sad", "angry"],
        "d_a": 8,
        "examples_per_class": 6,
        "views": ["categorical"],
        "seed": 0,
        "name": "cli",
    }))
    data = root / "data"
    r = runner.invoke(main, ["synth", "--config", str(synth_cfg), "--out", str(data)])
    assert r.exit_code == 0, r.stderr
    r = runner.invoke(main, ["make-folds", "--manifest", str(data / "manifest.jsonl"),
                             "--folds", "2", "--seed", "0"])
    assert r.exit_code == 0, r.stderr

    lm_cfg = root / "lm.json"
    lm_cfg.write_text(json.dumps({
        "lm": {"d_lm": 32, "n_layers": 1, "n_heads": 2,
               "context_length": 64, "vocab_size": 400},
        "vocab": 400, "steps": 200, "batch_size": 8, "lr": 1e-3,
    }))
    lm_ckpt = root / "lm.ckpt"
    r = runner.invoke(main, ["pretrain-lm", "--corpus", str(data / "corpus.txt"),
                             "--config", str(lm_cfg), "--out", str(lm_ckpt), "--seed", "0"])
    assert r.exit_code == 0, r.stderr

    train_cfg = root / "train.json"
    train_cfg.write_text(json.dumps({"epochs": 6, "batch_size": 8, "lr": 3e-3, "k": 4}))
    selm_ckpt = root / "mapper.ckpt"
    r = runner.invoke(main, ["train", "--manifest", str(data / "manifest.jsonl"),
                             "--lm", str(lm_ckpt), "--config", str(train_cfg),
                             "--out", str(selm_ckpt), "--seed", "0"])
    assert r.exit_code == 0, r.stderr
    return root, data, lm_ckpt, selm_ckpt


def test_synth_report_json(workspace, runner):
    root, data, *_ = workspace
    manifest = data / "manifest.jsonl"
    assert manifest.exists()
    rows = [json.loads(l) for l in manifest.read_text().splitlines()]
    assert all(r["fold"] in (0, 1) for r in rows)


def test_generate_and_map_class(workspace, runner):
    root, data, lm_ckpt, selm_ckpt = workspace
    rows = [json.loads(l) for l in (data / "manifest.jsonl").read_text().splitlines()]
    feature = data / rows[0]["feature_path"]
    r = runner.invoke(main, ["generate", "--ckpt", str(selm_ckpt),
                             "--feature", str(feature), "--prompt", "This person is",
                             "--beam", "3", "--max-tokens", "12"])
    assert r.exit_code == 0, r.stderr
    out = json.loads(r.stdout)
    assert isinstance(out["text"], str) and out["logprob"] <= 0.0

    r = runner.invoke(main, ["map-class", "--ckpt", str(selm_ckpt),
                             "--text", "feeling emotion of sad",
                             "--classes", "happy,sad,angry"])
    assert r.exit_code == 0, r.stderr
    out = json.loads(r.stdout)
    assert out["label"] in ("happy", "sad", "angry")


def test_eval_in_domain_cli(workspace, runner):
    root, data, lm_ckpt, _ = workspace
    eval_cfg = root / "eval.json"
    eval_cfg.write_text(json.dumps({"train": {"epochs": 3, "batch_size": 8,
                                              "lr": 3e-3, "k": 4}}))
    r = runner.invoke(main, ["eval", "in-domain", "--manifest", str(data / "manifest.jsonl"),
                             "--lm", str(lm_ckpt), "--config", str(eval_cfg), "--seed", "0"])
    assert r.exit_code == 0, r.stderr
    report = json.loads(r.stdout)
    assert report["n_folds"] == 2
    assert 0.0 <= report["mean_ua"] <= 1.0


def test_gradcheck_cli(runner):
    r = runner.invoke(main, ["gradcheck", "--eps", "1e-3", "--samples", "2",
                             "--d-lm", "16", "--seed", "0"])
    assert r.exit_code == 0, r.stderr
    report = json.loads(r.stdout)
    assert report["max_relative_error"] < 1e-3
    assert set(report["groups"]) == {"AL-Enc", "AL-Dec", "AT", "TT"}


def test_oracle_check_cli(runner):
    r = runner.invoke(main, ["oracle-check", "--trials", "40", "--seed", "5"])
    assert r.exit_code == 0, r.stderr
    report = json.loads(r.stdout)
    assert report["all_agree"] is True


def test_typed_error_and_nonzero_exit(runner, tmp_path):
    bogus = tmp_path / "nope.ckpt"
    bogus.write_bytes(b"not a checkpoint at all")
    r = runner.invoke(main, ["map-class", "--ckpt", str(bogus),
                             "--text", "x", "--classes", "a,b"])
    assert r.exit_code == 1
    assert "FormatError" in r.stderr


def test_leakage_error_is_typed(workspace, runner):
    root, data, lm_ckpt, _ = workspace
    r = runner.invoke(main, ["eval", "ood",
                             "--train-manifest", str(data / "manifest.jsonl"),
                             "--test-manifest", str(data / "manifest.jsonl"),
                             "--lm", str(lm_ckpt)])
    assert r.exit_code == 1
    assert "LeakageError" in r.stderr


def test_train_writes_jsonl_report(workspace):
    root, data, lm_ckpt, selm_ckpt = workspace
    report = Path(str(selm_ckpt) + ".report.jsonl")
    rows = [json.loads(l) for l in report.read_text().splitlines()]
    assert len(rows) == 6
    assert all(set(r) == {"epoch", "mean_loss", "lr", "wall_ms"} for r in rows)


def test_eval_ood_and_fsl_cli(workspace, runner, tmp_path):
    root, data, lm_ckpt, _ = workspace
    tgt_cfg = tmp_path / "tgt.json"
    tgt_cfg.write_text(json.dumps({
        "classes": ["happy", "sad", "angry"], "d_a": 8, "examples_per_class": 6,
        "views": ["categorical"], "seed": 9, "geometry_seed": 0,
        "shift_delta": 2.0, "name": "tgt",
    }))
    tgt = tmp_path / "tgt"
    r = runner.invoke(main, ["synth", "--config", str(tgt_cfg), "--out", str(tgt)])
    assert r.exit_code == 0, r.stderr
    eval_cfg = tmp_path / "eval.json"
    eval_cfg.write_text(json.dumps({
        "train": {"epochs": 3, "batch_size": 8, "lr": 3e-3, "k": 4},
        "fewshot": {"epochs": 2, "lr": 1e-3},
    }))
    src_ckpt = tmp_path / "source.ckpt"
    r = runner.invoke(main, ["eval", "ood",
                             "--train-manifest", str(data / "manifest.jsonl"),
                             "--test-manifest", str(tgt / "manifest.jsonl"),
                             "--lm", str(lm_ckpt), "--config", str(eval_cfg),
                             "--save-ckpt", str(src_ckpt)])
    assert r.exit_code == 0, r.stderr
    assert 0.0 <= json.loads(r.stdout)["ua"] <= 1.0
    r = runner.invoke(main, ["eval", "fsl", "--ckpt", str(src_ckpt),
                             "--test-manifest", str(tgt / "manifest.jsonl"),
                             "--shots", "2", "--groups", "TT", "--seeds", "0,1",
                             "--config", str(eval_cfg)])
    assert r.exit_code == 0, r.stderr
    rep = json.loads(r.stdout)
    assert rep["n_per_class"] == 2 and len(rep["per_seed"]) == 2
