"""Bag construction: feature-value partitions and random draws.

Curated bags group examples that agree on a selected set of feature
columns; each bag carries the exact mean of the transformed labels of
its members. Random bags are without-replacement draws whose aggregate
label is a per-entry Bernoulli sample of the within-bag label mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import Dataset
from .util import read_jsonl, write_jsonl


@dataclass(frozen=True)
class FeatureSet:
    """A sorted, non-empty set of feature column indices."""

    column_indices: tuple[int, ...]

    def __post_init__(self):
        cols = tuple(sorted(set(int(c) for c in self.column_indices)))
        if not cols:
            raise ValueError("feature set must be non-empty")
        if cols[0] < 0:
            raise ValueError("feature indices must be non-negative")
        object.__setattr__(self, "column_indices", cols)

    def validate_against(self, d: int) -> None:
        if self.column_indices[-1] >= d:
            raise ValueError(f"feature index {self.column_indices[-1]} out of range for d={d}")

    def __contains__(self, col: int) -> bool:
        return col in self.column_indices

    def issuperset(self, cols: Sequence[int]) -> bool:
        return set(cols) <= set(self.column_indices)


@dataclass
class AggregateBag:
    """Examples sharing one feature-value combination, plus their mean label.

    `aggregate_label` is the left-to-right mean of T(y) over members (in
    member order) unless `noised` is set.
    """

    key: tuple[int, ...]
    member_indices: np.ndarray
    aggregate_label: np.ndarray
    noised: bool = False

    @property
    def size(self) -> int:
        return len(self.member_indices)


@dataclass
class BagCollection:
    """All bags from partitioning one dataset by one feature set."""

    feature_set: FeatureSet
    bags: list[AggregateBag]
    filtered_count: int = 0
    epsilon: Optional[float] = None

    @property
    def retained(self) -> int:
        return sum(b.size for b in self.bags)


@dataclass(frozen=True)
class RandomBagSample:
    """m distinct example indices with a Bernoulli-sampled binary label."""

    member_indices: np.ndarray
    aggregate_label: np.ndarray


def _exact_mean(transformed_rows: np.ndarray) -> np.ndarray:
    # strict left-to-right accumulation so re-aggregation is bit-reproducible
    acc = np.zeros(transformed_rows.shape[1], dtype=np.float64)
    for row in transformed_rows:
        acc = acc + row
    return acc / transformed_rows.shape[0]


def curated_bags(
    dataset: Dataset,
    feature_set: FeatureSet,
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    min_bag_size: int = 1,
) -> BagCollection:
    """Partition the dataset by the observed value combinations on C.

    One bag per combination that actually occurs; bags smaller than
    `min_bag_size` are dropped and counted in `filtered_count`. Bags are
    sorted by key so downstream accumulation order is deterministic.
    """
    if dataset.N == 0:
        raise ValueError("cannot bag an empty dataset")
    if min_bag_size < 1:
        raise ValueError("min_bag_size must be >= 1")
    feature_set.validate_against(dataset.d)

    cols = list(feature_set.column_indices)
    keyed: dict[tuple[int, ...], list[int]] = {}
    sub = dataset.features[:, cols]
    for i in range(dataset.N):
        keyed.setdefault(tuple(int(v) for v in sub[i]), []).append(i)

    t = transform if transform is not None else (lambda y: y)
    bags: list[AggregateBag] = []
    filtered = 0
    for key in sorted(keyed):
        members = keyed[key]
        if len(members) < min_bag_size:
            filtered += len(members)
            continue
        transformed = np.asarray(
            [np.asarray(t(dataset.labels[i]), dtype=np.float64) for i in members]
        )
        bags.append(
            AggregateBag(
                key=key,
                member_indices=np.asarray(members, dtype=np.int64),
                aggregate_label=_exact_mean(transformed),
            )
        )
    return BagCollection(feature_set=feature_set, bags=bags, filtered_count=filtered)


def multi_curated_bags(
    dataset: Dataset,
    feature_sets: Sequence[FeatureSet],
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    min_bag_size: int = 1,
) -> list[BagCollection]:
    """One independent partition per feature set.

    Duplicate feature sets are rejected: the same partition twice would
    double-count its gradient contributions.
    """
    if not feature_sets:
        raise ValueError("feature_sets must be non-empty")
    seen = set()
    for fs in feature_sets:
        if fs.column_indices in seen:
            raise ValueError(f"duplicate feature set {fs.column_indices}")
        seen.add(fs.column_indices)
    return [curated_bags(dataset, fs, transform, min_bag_size) for fs in feature_sets]


def add_dp_noise(
    collection: BagCollection,
    epsilon: float,
    label_range: float,
    rng: np.random.Generator,
) -> BagCollection:
    """Return a copy with double-exponential noise on every aggregate entry.

    One label flip moves a bag mean by at most label_range / m_b, so
    scale = label_range / (m_b * epsilon) gives epsilon-label-DP for a
    single release of this collection. Noise is drawn bag by bag in key
    order, so a fixed generator state reproduces the exact output.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if label_range <= 0:
        raise ValueError("label_range must be positive")
    noised_bags = []
    for bag in collection.bags:
        if bag.size < 1:
            raise ValueError("cannot noise an empty bag")
        scale = label_range / (bag.size * epsilon)
        noise = rng.laplace(0.0, scale, size=bag.aggregate_label.shape)
        noised_bags.append(
            replace(bag, aggregate_label=bag.aggregate_label + noise, noised=True)
        )
    return BagCollection(
        feature_set=collection.feature_set,
        bags=noised_bags,
        filtered_count=collection.filtered_count,
        epsilon=epsilon,
    )


def random_bag_sample(dataset: Dataset, m: int, rng: np.random.Generator) -> RandomBagSample:
    """Draw m distinct examples uniformly and a Bernoulli aggregate label.

    Each call resamples from the full dataset, so the same example can
    appear in many bags. Uses a partial Fisher-Yates shuffle, which is
    uniform over ordered m-subsets.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > dataset.N:
        raise ValueError(f"m={m} exceeds dataset size N={dataset.N}")
    if not dataset.binary_labels:
        raise ValueError("Bernoulli aggregation requires binary labels")

    idx = sample_without_replacement(dataset.N, m, rng)
    p = dataset.labels[idx].mean(axis=0)
    agg = (rng.random(dataset.K) < p).astype(np.float64)
    return RandomBagSample(member_indices=idx, aggregate_label=agg)


def sample_without_replacement(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Partial Fisher-Yates shuffle: uniform over size-m index subsets."""
    if not (1 <= m <= n):
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    arr = np.arange(n, dtype=np.int64)
    for i in range(m):
        j = i + int(rng.integers(0, n - i))
        arr[i], arr[j] = arr[j], arr[i]
    return arr[:m].copy()


def check_partition(collection: BagCollection, n: int) -> None:
    """Raise unless bags plus filtered examples exactly partition [n]."""
    seen: set[int] = set()
    total = 0
    for bag in collection.bags:
        members = set(int(i) for i in bag.member_indices)
        if len(members) != bag.size:
            raise ValueError(f"bag {bag.key} has repeated members")
        if members & seen:
            raise ValueError(f"bag {bag.key} overlaps another bag")
        seen |= members
        total += bag.size
    if total + collection.filtered_count != n:
        raise ValueError(
            f"partition broken: {total} bagged + {collection.filtered_count} filtered != {n}"
        )


def write_bag_collection(
    path,
    collection: BagCollection,
    feature_names: Sequence[str],
    min_bag_size: int,
    seed: Optional[int] = None,
) -> None:
    """Serialize one collection as JSON lines: a header record, then bags."""
    header = {
        "type": "header",
        "feature_set": list(collection.feature_set.column_indices),
        "feature_names": [feature_names[c] for c in collection.feature_set.column_indices],
        "epsilon": collection.epsilon,
        "min_bag_size": min_bag_size,
        "seed": seed,
        "filtered_count": collection.filtered_count,
    }
    records = [header]
    for bag in collection.bags:
        records.append(
            {
                "key": list(bag.key),
                "members": [int(i) for i in bag.member_indices],
                "aggregate_label": [float(v) for v in bag.aggregate_label],
                "noised": bag.noised,
            }
        )
    write_jsonl(path, records)


def read_bag_collection(path) -> tuple[BagCollection, dict]:
    """Inverse of write_bag_collection; returns (collection, header)."""
    records = read_jsonl(path)
    if not records or records[0].get("type") != "header":
        raise ValueError(f"{path}: missing header record")
    header = records[0]
    bags = [
        AggregateBag(
            key=tuple(int(v) for v in rec["key"]),
            member_indices=np.asarray(rec["members"], dtype=np.int64),
            aggregate_label=np.asarray(rec["aggregate_label"], dtype=np.float64),
            noised=bool(rec["noised"]),
        )
        for rec in records[1:]
    ]
    collection = BagCollection(
        feature_set=FeatureSet(tuple(header["feature_set"])),
        bags=bags,
        filtered_count=int(header["filtered_count"]),
        epsilon=header["epsilon"],
    )
    return collection, header
