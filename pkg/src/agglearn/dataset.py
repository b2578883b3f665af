"""Categorical datasets with multilabel binary targets.

Features are index-encoded against per-column vocabularies built in
first-appearance order, so loading the same file twice yields identical
encodings. Labels are {0,1} vectors unless real-valued targets are
explicitly requested (which disables the Bernoulli aggregation path).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature columns with their vocabularies."""

    names: tuple[str, ...]
    vocabularies: tuple[tuple[str, ...], ...]
    numeric_buckets: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.names) != len(self.vocabularies):
            raise ValueError("names and vocabularies must align")
        for name, vocab in zip(self.names, self.vocabularies):
            if len(vocab) == 0:
                raise ValueError(f"column {name!r} has an empty vocabulary")
            if len(set(vocab)) != len(vocab):
                raise ValueError(f"column {name!r} has duplicate vocabulary values")

    @property
    def d(self) -> int:
        return len(self.names)

    def vocab_sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.vocabularies)

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown column {name!r}; have {list(self.names)}") from None

    def encode_value(self, col: int, value: str) -> int:
        try:
            return self.vocabularies[col].index(value)
        except ValueError:
            raise ValueError(
                f"value {value!r} not in the vocabulary of column {self.names[col]!r}"
            ) from None


@dataclass(frozen=True)
class Example:
    """A single encoded row: vocabulary indices plus a binary label vector."""

    features: np.ndarray
    label: np.ndarray


@dataclass
class Dataset:
    """Encoded examples stored column-major friendly as two arrays.

    `features` is (N, d) int64, `labels` is (N, K) float64. Read-only
    after construction; safe to share across threads.
    """

    schema: FeatureSchema
    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...]
    binary_labels: bool = True

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("features and labels must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels row counts differ")
        if self.features.shape[1] != self.schema.d:
            raise ValueError("feature width does not match schema")
        sizes = np.asarray(self.schema.vocab_sizes())
        if self.features.size and (self.features.min() < 0 or (self.features >= sizes).any()):
            raise ValueError("feature index out of vocabulary range")
        if self.binary_labels and self.labels.size:
            if not np.isin(self.labels, (0.0, 1.0)).all():
                raise ValueError("labels must be in {0,1}; pass real_valued_labels to disable")

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def K(self) -> int:
        return self.labels.shape[1]

    def example(self, i: int) -> Example:
        return Example(self.features[i], self.labels[i])

    def decode_row(self, i: int) -> list[str]:
        """Original string values of row i, recovered from the vocabularies."""
        return [
            self.schema.vocabularies[c][self.features[i, c]]
            for c in range(self.d)
        ]


def load_csv(
    path,
    label_columns: list[str],
    delimiter: str = ",",
    real_valued_labels: bool = False,
) -> Dataset:
    """Load a header-ed CSV into an encoded Dataset.

    Vocabularies are built from observed values in first-appearance
    order. Label columns must parse to {0,1} unless
    `real_valued_labels` is set, in which case any float is accepted
    and the Bernoulli sampling path is disabled downstream.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if not label_columns:
        raise ValueError("at least one label column is required")

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("no examples: file is empty") from None
        if len(set(header)) != len(header):
            raise ValueError("duplicate column names in header")
        for lc in label_columns:
            if lc not in header:
                raise ValueError(f"label column {lc!r} not found in header {header}")
        label_pos = [header.index(lc) for lc in label_columns]
        feature_pos = [i for i in range(len(header)) if i not in label_pos]
        feature_names = [header[i] for i in feature_pos]

        vocabs: list[dict[str, int]] = [dict() for _ in feature_pos]
        feature_rows: list[list[int]] = []
        label_rows: list[list[float]] = []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValueError(
                    f"ragged row {row_no}: expected {len(header)} fields, got {len(row)}"
                )
            enc = []
            for j, pos in enumerate(feature_pos):
                value = row[pos]
                idx = vocabs[j].setdefault(value, len(vocabs[j]))
                enc.append(idx)
            lab = []
            for lc, pos in zip(label_columns, label_pos):
                raw = row[pos].strip()
                if real_valued_labels:
                    try:
                        lab.append(float(raw))
                    except ValueError:
                        raise ValueError(
                            f"row {row_no}, column {lc!r}: cannot parse {raw!r} as float"
                        ) from None
                else:
                    if raw not in ("0", "1"):
                        raise ValueError(
                            f"row {row_no}, column {lc!r}: label {raw!r} is not 0 or 1"
                        )
                    lab.append(float(raw))
            feature_rows.append(enc)
            label_rows.append(lab)

    if not feature_rows:
        raise ValueError("no examples: file has a header but no data rows")

    schema = FeatureSchema(
        names=tuple(feature_names),
        vocabularies=tuple(tuple(v.keys()) for v in vocabs),
    )
    return Dataset(
        schema=schema,
        features=np.asarray(feature_rows, dtype=np.int64),
        labels=np.asarray(label_rows, dtype=np.float64),
        label_names=tuple(label_columns),
        binary_labels=not real_valued_labels,
    )


def bucketize(values, n_buckets: int) -> list[str]:
    """Map a real-valued column to equal-frequency quantile buckets.

    Values equal to a bucket edge go to the lower bucket. The output
    vocabulary has at most `n_buckets` distinct categories (fewer when
    quantiles collide on ties or tiny columns).
    """
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("values must be a non-empty 1-D column")
    qs = np.arange(1, n_buckets) / n_buckets
    edges = np.unique(np.quantile(values, qs)) if n_buckets > 1 else np.array([])
    # side="left": a value equal to an edge lands in the bucket below it
    idx = np.searchsorted(edges, values, side="left")
    return [f"b{i}" for i in idx]


def bucket_edges(values, n_buckets: int) -> tuple[float, ...]:
    """The quantile edges `bucketize` uses, for recording in a schema."""
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    qs = np.arange(1, n_buckets) / n_buckets
    return tuple(float(e) for e in np.unique(np.quantile(values, qs)))
