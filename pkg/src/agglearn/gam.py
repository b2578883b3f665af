"""Additive models: a sum of sub-models over feature subsets.

Each sub-model j reads the feature columns E'_j and owns the parameter
indices E_j of the shared flat vector beta; E_j sets may overlap
(parameter sharing). Two kinds are supported:

* LinearCross - a lookup table with one K-wide output row per observed
  value combination of E'_j. Its Jacobian is a 0/1 selection matrix.
* Mlp - tanh hidden layers over the concatenated one-hot encoding of
  the E'_j values, with a final linear layer of width K.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .bagging import BagCollection
from .dataset import Dataset, FeatureSchema
from .util import config_hash


class UnseenCombinationError(ValueError):
    """A LinearCross sub-model met a feature combination absent at build time."""


@dataclass
class LinearCross:
    """Lookup-table sub-model: one beta row of width K per observed combo.

    Parameters are laid out row-major: the row for combination r spans
    beta_sub[r*K : (r+1)*K].
    """

    feature_cols: tuple[int, ...]
    combos: dict[tuple[int, ...], int]
    vocab_sizes: tuple[int, ...]
    K: int

    @property
    def n_params(self) -> int:
        return len(self.combos) * self.K

    def rows_of(self, values: np.ndarray) -> np.ndarray:
        """Map (B, |E'|) value combinations to table rows; -1 never escapes."""
        values = np.atleast_2d(np.asarray(values, dtype=np.int64))
        rows = np.empty(values.shape[0], dtype=np.int64)
        for i, v in enumerate(values):
            key = tuple(int(x) for x in v)
            row = self.combos.get(key)
            if row is None:
                raise UnseenCombinationError(
                    f"combination {key} on columns {self.feature_cols} was not observed"
                )
            rows[i] = row
        return rows

    def forward_batch(self, beta_sub: np.ndarray, values: np.ndarray) -> np.ndarray:
        rows = self.rows_of(values)
        table = beta_sub.reshape(len(self.combos), self.K)
        return table[rows]

    def jacobian(self, beta_sub: np.ndarray, values: np.ndarray) -> np.ndarray:
        row = int(self.rows_of(values)[0])
        jac = np.zeros((self.K, self.n_params))
        for k in range(self.K):
            jac[k, row * self.K + k] = 1.0
        return jac


@dataclass
class Mlp:
    """Tanh multilayer perceptron over one-hot encoded categorical inputs."""

    feature_cols: tuple[int, ...]
    vocab_sizes: tuple[int, ...]
    hidden: tuple[int, ...]
    K: int

    def __post_init__(self):
        self.input_dim = int(sum(self.vocab_sizes))
        self.offsets = np.concatenate([[0], np.cumsum(self.vocab_sizes)[:-1]]).astype(np.int64)
        widths = [self.input_dim, *self.hidden, self.K]
        self.shapes: list[tuple[tuple[int, int], tuple[int]]] = [
            ((widths[i + 1], widths[i]), (widths[i + 1],)) for i in range(len(widths) - 1)
        ]

    @property
    def n_params(self) -> int:
        return sum(w[0] * w[1] + b[0] for w, b in self.shapes)

    def unpack(self, beta_sub: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        layers = []
        pos = 0
        for wshape, bshape in self.shapes:
            wsize = wshape[0] * wshape[1]
            w = beta_sub[pos : pos + wsize].reshape(wshape)
            pos += wsize
            b = beta_sub[pos : pos + bshape[0]]
            pos += bshape[0]
            layers.append((w, b))
        return layers

    def encode(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=np.int64))
        onehot = np.zeros((values.shape[0], self.input_dim))
        onehot[np.arange(values.shape[0])[:, None], self.offsets + values] = 1.0
        return onehot

    def forward_batch(self, beta_sub: np.ndarray, values: np.ndarray) -> np.ndarray:
        a = self.encode(values)
        layers = self.unpack(beta_sub)
        for w, b in layers[:-1]:
            a = np.tanh(a @ w.T + b)
        w, b = layers[-1]
        return a @ w.T + b

    def jacobian(self, beta_sub: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Exact d(output)/d(beta_sub), by reverse accumulation per output."""
        layers = self.unpack(beta_sub)
        acts = [self.encode(values)[0]]
        for w, b in layers[:-1]:
            acts.append(np.tanh(w @ acts[-1] + b))
        jac = np.zeros((self.K, self.n_params))
        n_layers = len(layers)
        for k in range(self.K):
            grads: list[tuple[np.ndarray, np.ndarray]] = [None] * n_layers
            w_last, _ = layers[-1]
            delta = np.zeros(self.K)
            delta[k] = 1.0
            grads[-1] = (np.outer(delta, acts[-1]), delta)
            g = w_last.T @ delta
            for li in range(n_layers - 2, -1, -1):
                g = g * (1.0 - acts[li + 1] ** 2)
                grads[li] = (np.outer(g, acts[li]), g.copy())
                if li > 0:
                    g = layers[li][0].T @ g
            pos = 0
            for (dw, db) in grads:
                jac[k, pos : pos + dw.size] = dw.ravel()
                pos += dw.size
                jac[k, pos : pos + db.size] = db
                pos += db.size
        return jac


SubModel = Union[LinearCross, Mlp]


@dataclass
class GamModel:
    """A sum of sub-models over a shared flat parameter vector.

    phi optionally records, per sub-model, the index of the bag
    collection used for its aggregate gradients.
    """

    K: int
    beta: np.ndarray
    sub_models: list[SubModel]
    param_indices: list[np.ndarray]
    phi: Optional[list[int]] = None
    config: Optional[dict] = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if len(self.sub_models) != len(self.param_indices):
            raise ValueError("one param index set per sub-model required")
        used = set()
        for sub, idx in zip(self.sub_models, self.param_indices):
            idx = np.asarray(idx, dtype=np.int64)
            if idx.size != sub.n_params:
                raise ValueError(
                    f"sub-model expects {sub.n_params} params, got {idx.size} indices"
                )
            used.update(int(i) for i in idx)
        if used != set(range(self.p)):
            raise ValueError("every beta entry must be used by some sub-model")

    @property
    def p(self) -> int:
        return len(self.beta)

    @property
    def n_sub_models(self) -> int:
        return len(self.sub_models)

    def forward_many(self, features: np.ndarray) -> np.ndarray:
        """Model outputs for (B, d) encoded feature rows, shape (B, K)."""
        features = np.atleast_2d(np.asarray(features, dtype=np.int64))
        out = np.zeros((features.shape[0], self.K))
        for sub, idx in zip(self.sub_models, self.param_indices):
            out += sub.forward_batch(self.beta[idx], features[:, list(sub.feature_cols)])
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_many(np.asarray(x)[None, :])[0]

    def sub_jacobian(self, j: int, values: np.ndarray) -> np.ndarray:
        """Jacobian of sub-model j w.r.t. its own parameters, K x |E_j|."""
        if not (0 <= j < self.n_sub_models):
            raise ValueError(f"sub-model index {j} out of range")
        sub = self.sub_models[j]
        return sub.jacobian(self.beta[self.param_indices[j]], np.asarray(values))

    def full_jacobian(self, x: np.ndarray) -> np.ndarray:
        """d(forward)/d(beta) for one example; sharing contributions add."""
        x = np.asarray(x, dtype=np.int64)
        jac = np.zeros((self.K, self.p))
        for j, (sub, idx) in enumerate(zip(self.sub_models, self.param_indices)):
            jac[:, idx] += self.sub_jacobian(j, x[list(sub.feature_cols)])
        return jac

    def accumulate_weighted_jacobians(
        self, features: np.ndarray, weights: np.ndarray, grad: np.ndarray
    ) -> None:
        """Add sum_r J(x_r)^T w_r into grad, vectorized where possible.

        LinearCross rows scatter-add directly; Mlp rows are grouped by
        their (few) distinct input combinations, with one Jacobian per
        group. Accumulation order is fixed, so results are reproducible.
        """
        features = np.atleast_2d(np.asarray(features, dtype=np.int64))
        weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        for sub, idx in zip(self.sub_models, self.param_indices):
            vals = features[:, list(sub.feature_cols)]
            if isinstance(sub, LinearCross):
                rows = sub.rows_of(vals)
                block = np.zeros((len(sub.combos), sub.K))
                np.add.at(block, rows, weights)
                np.add.at(grad, idx, block.ravel())
            else:
                uniq, inv = np.unique(vals, axis=0, return_inverse=True)
                wsum = np.zeros((uniq.shape[0], sub.K))
                np.add.at(wsum, inv, weights)
                beta_sub = self.beta[idx]
                for u in range(uniq.shape[0]):
                    jac = sub.jacobian(beta_sub, uniq[u])
                    np.add.at(grad, idx, jac.T @ wsum[u])

    def copy(self) -> "GamModel":
        return GamModel(
            K=self.K,
            beta=self.beta.copy(),
            sub_models=self.sub_models,
            param_indices=self.param_indices,
            phi=None if self.phi is None else list(self.phi),
            config=self.config,
        )


def validate_phi(model: GamModel, collections: Sequence[BagCollection]) -> list[int]:
    """Assign each sub-model a collection whose feature set covers E'_j.

    When several collections qualify, the one with the smallest feature
    set wins (coarsest partition, largest bags); ties break on index.
    """
    phi: list[int] = []
    for j, sub in enumerate(model.sub_models):
        candidates = [
            (len(coll.feature_set.column_indices), ci)
            for ci, coll in enumerate(collections)
            if coll.feature_set.issuperset(sub.feature_cols)
        ]
        if not candidates:
            raise ValueError(
                f"sub-model {j} reads columns {sub.feature_cols} but no bag "
                f"collection's feature set contains them"
            )
        phi.append(min(candidates)[1])
    return phi


def observed_combos(dataset: Dataset, cols: Sequence[int]) -> dict[tuple[int, ...], int]:
    """Distinct value combinations on `cols`, numbered in sorted order."""
    uniq = np.unique(dataset.features[:, list(cols)], axis=0)
    return {tuple(int(v) for v in row): r for r, row in enumerate(uniq)}


def build_model(
    config: dict,
    dataset: Dataset,
    rng: Optional[np.random.Generator] = None,
    init_scale: float = 0.05,
) -> GamModel:
    """Construct a GamModel from a JSON-style architecture config.

    Config shape::

        {"K": 1,
         "sub_models": [
            {"kind": "linear_cross", "features": ["F1", "F2"]},
            {"kind": "mlp", "features": ["F3"], "hidden": [4],
             "param_group": "shared-a"}]}

    Sub-models with the same `param_group` (and identical shape) share
    one parameter region. LinearCross tables start at zero; Mlp weights
    start uniform in [-init_scale, init_scale] drawn from `rng`.
    """
    schema = dataset.schema
    K = int(config["K"])
    subs: list[SubModel] = []
    groups: dict[str, tuple[np.ndarray, int]] = {}
    param_indices: list[np.ndarray] = []
    init_chunks: list[np.ndarray] = []
    p = 0
    for spec_entry in config["sub_models"]:
        cols = tuple(schema.column_index(name) for name in spec_entry["features"])
        vocab = tuple(len(schema.vocabularies[c]) for c in cols)
        kind = spec_entry["kind"]
        if kind == "linear_cross":
            sub: SubModel = LinearCross(
                feature_cols=cols, combos=observed_combos(dataset, cols),
                vocab_sizes=vocab, K=K,
            )
        elif kind == "mlp":
            sub = Mlp(
                feature_cols=cols, vocab_sizes=vocab,
                hidden=tuple(int(h) for h in spec_entry.get("hidden", [4])), K=K,
            )
        else:
            raise ValueError(f"unknown sub-model kind {kind!r}")
        subs.append(sub)

        group = spec_entry.get("param_group")
        if group is not None and group in groups:
            idx, n_prev = groups[group]
            if n_prev != sub.n_params:
                raise ValueError(f"param_group {group!r} shapes differ")
            param_indices.append(idx)
            continue
        idx = np.arange(p, p + sub.n_params, dtype=np.int64)
        p += sub.n_params
        param_indices.append(idx)
        if group is not None:
            groups[group] = (idx, sub.n_params)
        if kind == "linear_cross":
            init_chunks.append(np.zeros(sub.n_params))
        else:
            if rng is None:
                raise ValueError("mlp sub-models need an rng for initialization")
            init_chunks.append(rng.uniform(-init_scale, init_scale, size=sub.n_params))

    beta = np.concatenate(init_chunks) if init_chunks else np.zeros(0)
    return GamModel(K=K, beta=beta, sub_models=subs, param_indices=param_indices,
                    config=config)


def model_config_hash(config: dict) -> str:
    return config_hash(config)


def save_checkpoint(path, model: GamModel) -> None:
    """Persist beta as a flat float64 array keyed by the config hash."""
    if model.config is None:
        raise ValueError("model carries no config; cannot checkpoint")
    path = str(path)
    if not path.endswith(".npz"):
        path += ".npz"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        beta=model.beta.astype(np.float64),
        config_hash=np.array(model_config_hash(model.config)),
        config_json=np.array(json.dumps(model.config, sort_keys=True)),
    )


def load_checkpoint(path, model: GamModel) -> GamModel:
    """Load beta into a freshly built model; the config hash must match."""
    path = str(path)
    if not path.endswith(".npz"):
        path += ".npz"
    data = np.load(path)
    stored_hash = str(data["config_hash"])
    if model.config is None or model_config_hash(model.config) != stored_hash:
        raise ValueError("checkpoint config hash does not match this model")
    out = model.copy()
    out.beta = np.asarray(data["beta"], dtype=np.float64)
    if out.beta.shape != (model.p,):
        raise ValueError("checkpoint beta length mismatch")
    return out
