"""Benchmark the compiled kernels against the NumPy fallback.

Times each fused kernel on training-shaped inputs, then a full
forward+backward training step through the assembled model on each backend.

    python bench/bench_backends.py [--repeats 200]
"""

import argparse
import time

import numpy as np

import selm.backend as backend
import selm.tensor as T
from selm.bpe import Vocabulary
from selm.lm import LMConfig
from selm.model import SelmConfig, SelmModel
from selm.trainer import example_loss


def timeit(fn, repeats):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e6  # microseconds


def kernel_cases(rng):
    x = rng.normal(size=(40, 64))
    gy = rng.normal(size=(40, 64))
    gain, bias = np.ones(64), np.zeros(64)
    _, mu, rstd = backend.layer_norm_fwd(x, gain, bias, 1e-5)
    scores = rng.normal(size=(2, 40, 40))
    probs = backend.softmax_fwd(scores, True)
    gp = rng.normal(size=(2, 40, 40))
    logits = rng.normal(size=(40, 512))
    targets = rng.integers(0, 512, size=40)
    mask = np.ones(40, dtype=bool)
    _, ce_probs = backend.cross_entropy_fwd(logits, targets, mask)
    p = rng.normal(size=(64, 640))
    g = rng.normal(size=(64, 640))
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    return {
        "gelu_fwd (40x256)": lambda: backend.gelu_fwd(x),
        "gelu_bwd": lambda: backend.gelu_bwd(x, gy),
        "layer_norm_fwd (40x64)": lambda: backend.layer_norm_fwd(x, gain, bias, 1e-5),
        "layer_norm_bwd": lambda: backend.layer_norm_bwd(x, gain, mu, rstd, gy),
        "softmax_fwd causal (2x40x40)": lambda: backend.softmax_fwd(scores, True),
        "softmax_bwd": lambda: backend.softmax_bwd(probs, gp),
        "cross_entropy_fwd (40x512)": lambda: backend.cross_entropy_fwd(logits, targets, mask),
        "cross_entropy_bwd": lambda: backend.cross_entropy_bwd(ce_probs, targets, mask, 1.0),
        "adam_update (64x640)": lambda: backend.adam_update(p, g, m, v, 5, 1e-3, 0.9, 0.999, 1e-8),
    }


def train_step_case():
    model = SelmModel(LMConfig(), SelmConfig(k=10, d_a=32), Vocabulary(), seed=0)
    feat = np.random.default_rng(1).normal(size=(12, 32))

    def step():
        model.tree.zero_grad()
        loss = example_loss(model, feat, "This person is", "feeling emotion of happy")
        loss.backward()
    return step


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    names = backend.available()
    if "cython" not in names:
        print("compiled kernels not built; run pip install -e . --no-build-isolation")
    rng = np.random.default_rng(0)
    results = {}
    for name in names:
        backend.select(name)
        row = {label: timeit(fn, args.repeats) for label, fn in kernel_cases(rng).items()}
        row["full train step (fwd+bwd)"] = timeit(train_step_case(), max(20, args.repeats // 10))
        results[name] = row
    backend.select("auto")

    labels = list(next(iter(results.values())))
    width = max(len(l) for l in labels)
    header = f"{'kernel':<{width}}" + "".join(f"{n:>14}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label in labels:
        line = f"{label:<{width}}"
        for n in names:
            line += f"{results[n][label]:>12.1f}us"
        if len(names) == 2:
            line += f"{results[names[0]][label] / results[names[1]][label]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
