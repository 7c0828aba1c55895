"""Shared test utilities."""
from __future__ import annotations

from handover_ie import tensor as T


def probed(loss_fn, params, rng):
    """Add a random linear term over every parameter to a scalar loss.

    Central differences cannot resolve coordinates whose true gradient is
    below ~1e-6 (the quotient noise floor at 64-bit); the probe keeps every
    coordinate's gradient O(0.1) while the backprop path under test is
    unchanged.
    """
    probes = [
        T.constant(rng.uniform(0.05, 0.2, p.data.shape) * rng.choice([-1.0, 1.0], p.data.shape))
        for p in params
    ]

    def f():
        total = loss_fn()
        for p, pr in zip(params, probes):
            n = p.data.size
            dot = T.matmul(T.reshape(p, (1, n)), T.reshape(pr, (n, 1)))
            total = T.add(total, T.reshape(dot, ()))
        return total

    return f


def randomize(params, rng, scale=0.5):
    for p in params:
        p.data = rng.normal(0.0, scale, p.data.shape)


def word_accuracy(gold, pred) -> float:
    total = correct = 0
    for g, p in zip(gold.records, pred.records):
        assert g.words == p.words
        for a, b in zip(g.labels, p.labels):
            total += 1
            correct += a == b
    return correct / total
