"""Gradient engines and the descent loop.

Two routes to the same full-dataset gradient of a semilinear loss over
an additive model:

* `individual_gradient` walks examples with their labels (the oracle);
* `aggregate_gradient` walks curated bags and never touches a label -
  it receives feature rows and BagCollections only. Within a bag every
  member shares the assigned sub-model's Jacobian, so the bag's summed
  residual sum_x (grad_b(yhat_x) - ybar) carries all the information
  the per-example labels would have.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .bagging import BagCollection
from .dataset import Dataset
from .gam import GamModel, LinearCross, validate_phi
from .losses import SemilinearLoss


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, what: str):
        where = f" at step {step}" if step >= 0 else ""
        super().__init__(f"non-finite {what}{where}")
        self.step = step


@dataclass
class GradientReport:
    grad: np.ndarray
    loss_proxy: Optional[float]
    bags_visited: int
    mode: str  # "individual" | "aggregate"

    def __post_init__(self):
        self.grad = np.asarray(self.grad, dtype=np.float64)
        if not np.isfinite(self.grad).all():
            raise TrainingDiverged(-1, "gradient")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    seed: int = 0
    batch_bags: Optional[int] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass(frozen=True)
class AggregateData:
    """Label-free training source: feature rows plus bag collections."""

    features: np.ndarray
    collections: tuple[BagCollection, ...]
    phi: tuple[int, ...]


def individual_gradient(
    model: GamModel, dataset: Dataset, sl: SemilinearLoss
) -> GradientReport:
    """Exact chain-rule gradient summed over every example.

    grad = sum_x J(x)^T (grad_b(yhat_x) - T(y_x)); also reports the
    total loss, which makes this the finite-difference-checkable oracle.
    """
    preds = model.forward_many(dataset.features)
    if not np.isfinite(preds).all():
        raise TrainingDiverged(-1, "forward value")
    residuals = sl.grad_b(preds) - sl.transform(dataset.labels)
    grad = np.zeros(model.p)
    model.accumulate_weighted_jacobians(dataset.features, residuals, grad)
    total_loss = float(
        (sl.b(preds) - (sl.transform(dataset.labels) * preds).sum(axis=-1)
         + sl.offset(dataset.labels)).sum()
    )
    return GradientReport(grad=grad, loss_proxy=total_loss, bags_visited=0,
                          mode="individual")


def aggregate_gradient(
    model: GamModel,
    features: np.ndarray,
    collections: Sequence[BagCollection],
    sl: SemilinearLoss,
    phi: Sequence[int],
) -> GradientReport:
    """Full-dataset gradient from aggregate labels alone.

    For each bag X with aggregate label ybar, the K-vector
    s_X = sum_{x in X} grad_b(yhat_x) - |X| * ybar is accumulated once;
    every sub-model assigned to X's collection adds J_j(X)^T s_X into
    its parameter entries. Individual labels are structurally absent:
    only `features` and the collections' aggregate labels are read.
    """
    if phi is None:
        raise ValueError("phi assignment is required; run validate_phi first")
    features = np.asarray(features, dtype=np.int64)
    n_rows = features.shape[0]
    grad = np.zeros(model.p)
    bags_visited = 0

    by_collection: dict[int, list[int]] = {}
    for j, ci in enumerate(phi):
        by_collection.setdefault(int(ci), []).append(j)

    for ci in sorted(by_collection):
        coll = collections[ci]
        subs_here = by_collection[ci]
        if not coll.bags:
            continue
        member_concat = np.concatenate([b.member_indices for b in coll.bags])
        if member_concat.min() < 0 or member_concat.max() >= n_rows:
            raise ValueError("bag references an out-of-range example index")
        preds = model.forward_many(features[member_concat])
        if not np.isfinite(preds).all():
            raise TrainingDiverged(-1, "forward value")
        gb = sl.grad_b(preds)
        sizes = np.array([b.size for b in coll.bags])
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        # per-bag residual sums; reduceat keeps a fixed evaluation order
        seg = np.add.reduceat(gb, starts, axis=0)
        s_matrix = seg - sizes[:, None] * np.asarray([b.aggregate_label for b in coll.bags])
        bags_visited += len(coll.bags)

        key_cols = coll.feature_set.column_indices
        keys = np.asarray([b.key for b in coll.bags], dtype=np.int64)
        for j in subs_here:
            sub = model.sub_models[j]
            col_pos = [key_cols.index(c) for c in sub.feature_cols]
            bag_values = keys[:, col_pos]
            idx = model.param_indices[j]
            if isinstance(sub, LinearCross):
                rows = sub.rows_of(bag_values)
                block = np.zeros((len(sub.combos), sub.K))
                np.add.at(block, rows, s_matrix)
                np.add.at(grad, idx, block.ravel())
            else:
                beta_sub = model.beta[idx]
                uniq, inv = np.unique(bag_values, axis=0, return_inverse=True)
                wsum = np.zeros((uniq.shape[0], sub.K))
                np.add.at(wsum, inv, s_matrix)
                for u in range(uniq.shape[0]):
                    jac = sub.jacobian(beta_sub, uniq[u])
                    np.add.at(grad, idx, jac.T @ wsum[u])

    return GradientReport(grad=grad, loss_proxy=None, bags_visited=bags_visited,
                          mode="aggregate")


def eval_metrics(model: GamModel, dataset: Dataset, sl: SemilinearLoss) -> dict:
    """Mean loss and Hamming risk on a labeled dataset.

    Hamming risk is the average count of label entries the thresholded
    prediction gets wrong; None when the loss has no prediction map.
    """
    if dataset.N == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = model.forward_many(dataset.features)
    mean_loss = sl.mean_loss(dataset.labels, preds)
    if sl.predict is None:
        hamming = None
    else:
        decisions = sl.predict(preds)
        hamming = float((decisions != dataset.labels).sum(axis=-1).mean())
    return {"mean_loss": mean_loss, "hamming_risk": hamming}


TrainData = Union[Dataset, AggregateData]


def train_loop(
    model: GamModel,
    data: TrainData,
    sl: SemilinearLoss,
    cfg: TrainConfig,
    eval_dataset: Optional[Dataset] = None,
) -> tuple[GamModel, list[dict]]:
    """Plain gradient descent: beta <- beta - lr * grad / n_eff.

    `data` selects the engine: a Dataset runs the individual-label
    oracle; an AggregateData runs the label-free path. n_eff is the
    number of retained examples so learning rates transfer across N.
    With `batch_bags`, aggregate steps sample that many bags per
    collection and rescale for unbiasedness; the default is full batch.
    """
    aggregate = isinstance(data, AggregateData)
    rng = None
    if aggregate and cfg.batch_bags is not None:
        from .util import make_rng

        rng = make_rng(cfg.seed, 0xBA9)

    model = model.copy()
    trace: list[dict] = []
    for step in range(cfg.steps):
        try:
            if aggregate:
                source = data if rng is None else _bag_subsample(data, cfg.batch_bags, rng)
                report = aggregate_gradient(
                    model, source.features, source.collections, sl, source.phi
                )
                used = sorted(set(source.phi))
                n_eff = max(source.collections[ci].retained for ci in used)
            else:
                report = individual_gradient(model, data, sl)
                n_eff = data.N
        except TrainingDiverged as exc:
            raise TrainingDiverged(step, "gradient") from exc
        if n_eff == 0:
            raise ValueError("no retained examples to train on")
        model.beta = model.beta - cfg.learning_rate * (report.grad / n_eff)
        entry = {"step": step, "grad_norm": float(np.linalg.norm(report.grad / n_eff))}
        if eval_dataset is not None:
            metrics = eval_metrics(model, eval_dataset, sl)
            if metrics["mean_loss"] is not None and not np.isfinite(metrics["mean_loss"]):
                raise TrainingDiverged(step, "evaluation loss")
            entry.update(metrics)
        trace.append(entry)
    return model, trace


def _bag_subsample(data: AggregateData, batch_bags: int, rng) -> AggregateData:
    """Uniformly sample `batch_bags` bags from each used collection.

    The step then descends the mean loss over the sampled bags'
    examples (n_eff is recomputed from the sample), which is the usual
    mean-per-mini-batch semantics.
    """
    new_collections = []
    for coll in data.collections:
        if batch_bags >= len(coll.bags):
            new_collections.append(coll)
            continue
        chosen = sorted(int(i) for i in rng.choice(len(coll.bags), size=batch_bags,
                                                   replace=False))
        new_collections.append(
            BagCollection(
                feature_set=coll.feature_set,
                bags=[coll.bags[bi] for bi in chosen],
                filtered_count=coll.filtered_count,
                epsilon=coll.epsilon,
            )
        )
    return AggregateData(
        features=data.features,
        collections=tuple(new_collections),
        phi=data.phi,
    )


def lossless_max_deviation(
    model: GamModel,
    dataset: Dataset,
    collections: Sequence[BagCollection],
    sl: SemilinearLoss,
    phi: Optional[Sequence[int]] = None,
) -> float:
    """Relative infinity-norm gap between the two gradient engines."""
    if phi is None:
        phi = validate_phi(model, collections)
    g_ind = individual_gradient(model, dataset, sl).grad
    g_agg = aggregate_gradient(model, dataset.features, collections, sl, phi).grad
    return float(np.abs(g_agg - g_ind).max() / (1.0 + np.abs(g_ind).max()))
