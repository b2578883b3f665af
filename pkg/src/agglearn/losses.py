"""Semilinear losses: l(y, yhat) = b(yhat) - T(y)^T yhat + c(y).

The label enters only linearly through the transform T, which is what
makes summed gradients over a bag recoverable from the bag's mean
transformed label. `b` maps R^K to R; `grad_b` is its gradient and is
vectorized over leading axes (rows of predictions).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


def logsumexp(yhat: np.ndarray) -> np.ndarray:
    """Row-wise log(sum(exp(yhat))) with max subtraction."""
    yhat = np.asarray(yhat, dtype=np.float64)
    m = yhat.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(yhat - m).sum(axis=-1, keepdims=True))).squeeze(-1)


def softmax(yhat: np.ndarray) -> np.ndarray:
    yhat = np.asarray(yhat, dtype=np.float64)
    e = np.exp(yhat - yhat.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def is_one_hot(y: np.ndarray) -> bool:
    y = np.asarray(y)
    return bool(np.isin(y, (0.0, 1.0)).all() and np.all(y.sum(axis=-1) == 1.0))


@dataclass(frozen=True)
class SemilinearLoss:
    """The triple (b, T, c) plus grad_b, with an optional prediction map.

    `predict` turns raw model outputs into binary label predictions for
    Hamming-risk reporting; None means the loss has no natural
    thresholding rule (e.g. count regression).
    """

    name: str
    b: Callable[[np.ndarray], np.ndarray]
    grad_b: Callable[[np.ndarray], np.ndarray]
    transform: Callable[[np.ndarray], np.ndarray]
    offset: Callable[[np.ndarray], np.ndarray]
    requires_one_hot: bool = False
    predict: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def loss(self, y: np.ndarray, yhat: np.ndarray) -> float:
        """Scalar loss b(yhat) - T(y).yhat + c(y) for one example."""
        y = np.asarray(y, dtype=np.float64)
        yhat = np.asarray(yhat, dtype=np.float64)
        if y.shape != yhat.shape:
            raise ValueError(f"shape mismatch: y {y.shape} vs yhat {yhat.shape}")
        if self.requires_one_hot and not is_one_hot(y):
            raise ValueError(f"{self.name} requires a one-hot label, got {y}")
        return float(self.b(yhat) - self.transform(y) @ yhat + self.offset(y))

    def mean_loss(self, labels: np.ndarray, preds: np.ndarray) -> float:
        labels = np.asarray(labels, dtype=np.float64)
        preds = np.asarray(preds, dtype=np.float64)
        if self.requires_one_hot and not is_one_hot(labels):
            raise ValueError(f"{self.name} requires one-hot labels")
        t = self.transform(labels)
        per_row = self.b(preds) - (t * preds).sum(axis=-1) + self.offset(labels)
        return float(per_row.mean())


def _identity(y):
    return np.asarray(y, dtype=np.float64)


def mse() -> SemilinearLoss:
    """Squared error: b = ||yhat||^2/2, T = id, c = ||y||^2/2."""
    return SemilinearLoss(
        name="mse",
        b=lambda yhat: 0.5 * (np.asarray(yhat) ** 2).sum(axis=-1),
        grad_b=lambda yhat: np.asarray(yhat, dtype=np.float64),
        transform=_identity,
        offset=lambda y: 0.5 * (np.asarray(y) ** 2).sum(axis=-1),
        predict=lambda yhat: (np.asarray(yhat) >= 0.5).astype(np.float64),
    )


def _argmax_one_hot(yhat):
    yhat = np.asarray(yhat)
    single = yhat.ndim == 1
    rows = np.atleast_2d(yhat)
    out = np.zeros_like(rows, dtype=np.float64)
    out[np.arange(rows.shape[0]), rows.argmax(axis=-1)] = 1.0
    return out[0] if single else out


def log_loss() -> SemilinearLoss:
    """Multiclass log loss: b = LogSumExp, T = id, c = 0; y must be one-hot."""
    return SemilinearLoss(
        name="logloss",
        b=logsumexp,
        grad_b=softmax,
        transform=_identity,
        offset=lambda y: np.zeros(np.asarray(y).shape[:-1]),
        requires_one_hot=True,
        predict=_argmax_one_hot,
    )


def poisson() -> SemilinearLoss:
    """Poisson regression loss: b = sum(exp(yhat)), T = id, c = 0.

    No thresholding rule, so Hamming risk is reported absent.
    """
    return SemilinearLoss(
        name="poisson",
        b=lambda yhat: np.exp(np.asarray(yhat, dtype=np.float64)).sum(axis=-1),
        grad_b=lambda yhat: np.exp(np.asarray(yhat, dtype=np.float64)),
        transform=_identity,
        offset=lambda y: np.zeros(np.asarray(y).shape[:-1]),
        predict=None,
    )


def binary_logistic() -> SemilinearLoss:
    """Per-entry logistic loss: b = sum(softplus(yhat)), T = id, c = 0.

    softplus(t) - y*t equals the binary cross-entropy of sigmoid(t)
    against y, entry by entry, so this is the K-independent-entries
    analogue of log loss and the natural fit for {0,1}^K targets.
    """
    def softplus_sum(yhat):
        yhat = np.asarray(yhat, dtype=np.float64)
        return (np.maximum(yhat, 0.0) + np.log1p(np.exp(-np.abs(yhat)))).sum(axis=-1)

    return SemilinearLoss(
        name="bce",
        b=softplus_sum,
        grad_b=sigmoid,
        transform=_identity,
        offset=lambda y: np.zeros(np.asarray(y).shape[:-1]),
        predict=lambda yhat: (np.asarray(yhat) >= 0.0).astype(np.float64),
    )


def custom(name, b, grad_b, transform=None, offset=None, predict=None) -> SemilinearLoss:
    """Assemble a user-supplied semilinear loss. grad_b is trusted;
    verify it against finite differences in tests, not here."""
    return SemilinearLoss(
        name=name,
        b=b,
        grad_b=grad_b,
        transform=transform or _identity,
        offset=offset or (lambda y: np.zeros(np.asarray(y).shape[:-1])),
        predict=predict,
    )


_BUILTINS = {"mse": mse, "logloss": log_loss, "poisson": poisson, "bce": binary_logistic}


def by_name(name: str) -> SemilinearLoss:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(_BUILTINS)}") from None
