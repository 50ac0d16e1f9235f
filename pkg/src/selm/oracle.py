"""Discrete-probability check of the acoustic/language factorization.

Over a finite joint p(e, x, w), the best emotion index under the direct
posterior p(e|x,w) must equal the argmax of p(x|e,w) * p(e|w): the evidence
term p(x|w) dropped between the two scores is constant in e, so rankings
match. posterior_rank and factored_rank compute the two sides independently
(factored_rank multiplies the two conditionals literally; no algebraic
simplification) so their pointwise equality is a real verification.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InvalidValueError, UndefinedConditionalError


class JointDistribution:
    """Finite joint table p[e, x, w]; non-negative, sums to 1 within 1e-9."""

    def __init__(self, table):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 3:
            raise ConfigError(f"joint table must be (E, X, W), got {table.shape}")
        if not np.all(np.isfinite(table)):
            raise InvalidValueError("joint table has non-finite entries")
        if table.min() < 0:
            raise ConfigError("joint table has negative entries")
        total = float(table.sum())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"joint table sums to {total}, expected 1 within 1e-9")
        self.table = table

    @classmethod
    def random(cls, rng, n_e, n_x, n_w):
        t = rng.uniform(0.0, 1.0, size=(n_e, n_x, n_w))
        return cls(t / t.sum())

    @property
    def shape(self):
        return self.table.shape


def posterior_rank(joint: JointDistribution, x, w):
    """argmax_e p(e | x, w), ties toward the lowest index."""
    scores = joint.table[:, x, w]
    evidence = float(scores.sum())  # p(x, w)
    if evidence <= 0.0:
        raise UndefinedConditionalError(f"p(x={x}, w={w}) = 0; posterior undefined")
    posterior = scores / evidence
    return int(np.argmax(posterior))


def factored_rank(joint: JointDistribution, x, w):
    """argmax_e p(x | e, w) * p(e | w), computed from the two conditionals."""
    p_ew = joint.table.sum(axis=1)[:, w]          # p(e, w) for each e
    p_w = float(joint.table[:, :, w].sum())       # p(w)
    if p_w <= 0.0:
        raise UndefinedConditionalError(f"p(w={w}) = 0; conditionals undefined")
    n_e = joint.table.shape[0]
    scores = np.empty(n_e)
    for e in range(n_e):
        if p_ew[e] <= 0.0:
            # impossible hypothesis given w: p(e|w)=0 forces the product to 0
            scores[e] = 0.0
            continue
        p_x_given_ew = joint.table[e, x, w] / p_ew[e]
        p_e_given_w = p_ew[e] / p_w
        scores[e] = p_x_given_ew * p_e_given_w
    if scores.sum() <= 0.0:
        raise UndefinedConditionalError(f"p(x={x}, w={w}) = 0; ranking undefined")
    return int(np.argmax(scores))


def ranks_agree(joint: JointDistribution, x, w):
    return posterior_rank(joint, x, w) == factored_rank(joint, x, w)


def exhaustive_agreement(n_trials, seed, max_size=6):
    """Random joints of every size up to max_size; counts posterior==factored checks.

    Returns (n_queries, n_agreements).
    """
    rng = np.random.default_rng(seed)
    n_q = 0
    n_ok = 0
    for _ in range(n_trials):
        n_e = int(rng.integers(1, max_size + 1))
        n_x = int(rng.integers(1, max_size + 1))
        n_w = int(rng.integers(1, max_size + 1))
        joint = JointDistribution.random(rng, n_e, n_x, n_w)
        for x in range(n_x):
            for w in range(n_w):
                n_q += 1
                if ranks_agree(joint, x, w):
                    n_ok += 1
    return n_q, n_ok
