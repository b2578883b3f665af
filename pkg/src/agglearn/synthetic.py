"""Synthetic categorical datasets for verification and sweeps.

Features are uniform over per-column vocabularies. Labels can be pure
noise (for gradient-identity checks, where any labels do) or drawn from
a ground-truth additive model so the trained model class is
well-specified and trend experiments isolate the aggregation method.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset, FeatureSchema
from .losses import sigmoid, softmax


def _schema(vocab_sizes: Sequence[int]) -> FeatureSchema:
    return FeatureSchema(
        names=tuple(f"F{i + 1}" for i in range(len(vocab_sizes))),
        vocabularies=tuple(
            tuple(f"v{j}" for j in range(size)) for size in vocab_sizes
        ),
    )


def synthetic_dataset(
    n: int,
    vocab_sizes: Sequence[int],
    K: int,
    rng: np.random.Generator,
    labels: str = "logistic",
    table_scale: float = 1.2,
) -> Dataset:
    """Sample a dataset with the requested label mechanism.

    labels:
      * "logistic"       - K=1; y ~ Ber(sigmoid(sum of per-feature tables))
      * "softmax"        - one-hot y sampled from softmax of K-wide tables
      * "uniform"        - iid Ber(0.5) entries, no structure
      * "onehot_uniform" - uniformly random one-hot rows
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sizes = [int(v) for v in vocab_sizes]
    features = np.column_stack([rng.integers(0, v, size=n) for v in sizes])

    if labels == "logistic":
        if K != 1:
            raise ValueError("logistic labels are scalar; use softmax for K > 1")
        score = np.zeros(n)
        for c, v in enumerate(sizes):
            table = rng.uniform(-table_scale, table_scale, size=v)
            score += table[features[:, c]]
        y = (rng.random(n) < sigmoid(score)).astype(np.float64)[:, None]
    elif labels == "softmax":
        scores = np.zeros((n, K))
        for c, v in enumerate(sizes):
            table = rng.uniform(-table_scale, table_scale, size=(v, K))
            scores += table[features[:, c]]
        probs = softmax(scores)
        picks = (probs.cumsum(axis=1) > rng.random(n)[:, None]).argmax(axis=1)
        y = np.zeros((n, K))
        y[np.arange(n), picks] = 1.0
    elif labels == "uniform":
        y = (rng.random((n, K)) < 0.5).astype(np.float64)
    elif labels == "onehot_uniform":
        picks = rng.integers(0, K, size=n)
        y = np.zeros((n, K))
        y[np.arange(n), picks] = 1.0
    else:
        raise ValueError(f"unknown label mechanism {labels!r}")

    return Dataset(
        schema=_schema(sizes),
        features=features,
        labels=y,
        label_names=tuple(f"y{k + 1}" for k in range(K)) if K > 1 else ("y",),
    )


def separable_dataset(
    n: int,
    vocab_size: int,
    rng: np.random.Generator,
    positive_values: Optional[set] = None,
) -> Dataset:
    """One feature whose value determines the label deterministically."""
    if positive_values is None:
        positive_values = set(range(vocab_size // 2, vocab_size))
    features = rng.integers(0, vocab_size, size=(n, 1))
    y = np.isin(features[:, 0], sorted(positive_values)).astype(np.float64)[:, None]
    return Dataset(
        schema=_schema([vocab_size]),
        features=features,
        labels=y,
        label_names=("y",),
    )
