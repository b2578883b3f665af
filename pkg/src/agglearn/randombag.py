"""Learning from random bags: the bias-corrected bag-level objective,
its gradient-descent fit through a sigmoid relaxation, Monte-Carlo
Rademacher estimators, the excess-risk bound evaluator, and brute-force
oracles for the without-replacement moment identities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .bagging import RandomBagSample, random_bag_sample
from .dataset import Dataset
from .gam import GamModel
from .losses import sigmoid
from .train import TrainConfig, TrainingDiverged


def correction_factor(m: int, N: int) -> float:
    """(m-1)N / (m(N-1)): the debiasing coefficient; 0 at m=1, 1 at m=N."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if not (1 <= m <= N):
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={N}")
    return (m - 1) * N / (m * (N - 1))


@dataclass
class RandomBagBatch:
    """n bags of m distinct indices each, with Bernoulli aggregate labels."""

    members: np.ndarray          # (n, m) int64
    aggregate_labels: np.ndarray  # (n, K) float64 in {0,1}
    N: int

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.int64)
        self.aggregate_labels = np.asarray(self.aggregate_labels, dtype=np.float64)
        if self.members.ndim != 2 or self.aggregate_labels.ndim != 2:
            raise ValueError("members must be (n, m) and labels (n, K)")
        if self.members.shape[0] != self.aggregate_labels.shape[0]:
            raise ValueError("bag count mismatch between members and labels")
        for row in self.members:
            if len(set(int(i) for i in row)) != len(row):
                raise ValueError("bag members must be distinct")
        if not (1 <= self.m <= self.N):
            raise ValueError("need 1 <= m <= N")
        if not np.isin(self.aggregate_labels, (0.0, 1.0)).all():
            raise ValueError("aggregate labels must be binary")

    @property
    def n(self) -> int:
        return self.members.shape[0]

    @property
    def m(self) -> int:
        return self.members.shape[1]

    @property
    def K(self) -> int:
        return self.aggregate_labels.shape[1]


def sample_batch(dataset: Dataset, m: int, n: int, rng: np.random.Generator) -> RandomBagBatch:
    """Draw n independent random bags from the dataset."""
    if n < 1:
        raise ValueError("n must be >= 1")
    samples: list[RandomBagSample] = [random_bag_sample(dataset, m, rng) for _ in range(n)]
    return RandomBagBatch(
        members=np.stack([s.member_indices for s in samples]),
        aggregate_labels=np.stack([s.aggregate_label for s in samples]),
        N=dataset.N,
    )


@dataclass
class CorrectedObjectiveValue:
    """r1_hat minus the corrected centering term.

    The decomposition objective = r1_hat - correction_factor * r_hat
    holds by construction.
    """

    r1_hat: float
    r_hat: float
    correction_factor: float
    objective: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.r1_hat < 0 or self.r_hat < 0:
            raise ValueError("squared-norm terms cannot be negative")
        if not (0.0 <= self.correction_factor <= 1.0):
            raise ValueError("correction factor must lie in [0, 1]")
        derived = self.r1_hat - self.correction_factor * self.r_hat
        if self.objective is None:
            self.objective = derived
        elif self.objective != derived:
            raise ValueError("objective must equal r1_hat - factor * r_hat")


def _bag_residuals(model: GamModel, batch: RandomBagBatch, features: np.ndarray):
    feats = np.asarray(features, dtype=np.int64)
    flat = batch.members.reshape(-1)
    preds = model.forward_many(feats[flat])
    probs = sigmoid(preds)
    h = probs.reshape(batch.n, batch.m, batch.K).mean(axis=1)
    e = h - batch.aggregate_labels
    return preds, probs, e


def corrected_objective(
    model: GamModel, batch: RandomBagBatch, features: np.ndarray
) -> CorrectedObjectiveValue:
    """Evaluate the bag-level squared error minus its correction term.

    The model's raw outputs are mapped entrywise through the logistic
    function so predictions live in [0,1]^K like the labels do.
    """
    if batch.n == 0:
        raise ValueError("empty batch")
    _, _, e = _bag_residuals(model, batch, features)
    r1 = float((e ** 2).sum(axis=1).mean())
    r = float((e.mean(axis=0) ** 2).sum())
    return CorrectedObjectiveValue(
        r1_hat=r1, r_hat=r, correction_factor=correction_factor(batch.m, batch.N)
    )


def corrected_objective_gradient(
    model: GamModel, batch: RandomBagBatch, features: np.ndarray
) -> tuple[CorrectedObjectiveValue, np.ndarray]:
    """Objective value and its exact gradient w.r.t. beta."""
    if batch.n == 0:
        raise ValueError("empty batch")
    feats = np.asarray(features, dtype=np.int64)
    preds, probs, e = _bag_residuals(model, batch, feats)
    cf = correction_factor(batch.m, batch.N)
    value = CorrectedObjectiveValue(
        r1_hat=float((e ** 2).sum(axis=1).mean()),
        r_hat=float((e.mean(axis=0) ** 2).sum()),
        correction_factor=cf,
    )
    ebar = e.mean(axis=0)
    per_bag = (2.0 / (batch.n * batch.m)) * (e - cf * ebar)  # (n, K)
    sig_prime = probs * (1.0 - probs)                        # (n*m, K)
    flat_weights = sig_prime * np.repeat(per_bag, batch.m, axis=0)
    grad = np.zeros(model.p)
    model.accumulate_weighted_jacobians(
        feats[batch.members.reshape(-1)], flat_weights, grad
    )
    return value, grad


def fit_random_bags(
    model: GamModel,
    batch: RandomBagBatch,
    features: np.ndarray,
    cfg: TrainConfig,
    eval_data: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[GamModel, list[dict]]:
    """Gradient descent on the corrected objective.

    `eval_data`, when given, is (features, labels); Hamming risk uses
    sigmoid outputs thresholded at 0.5.
    """
    model = model.copy()
    trace: list[dict] = []
    for step in range(cfg.steps):
        value, grad = corrected_objective_gradient(model, batch, features)
        if not (np.isfinite(grad).all() and math.isfinite(value.objective)):
            raise TrainingDiverged(step, "objective")
        model.beta = model.beta - cfg.learning_rate * grad
        entry = {
            "step": step,
            "objective": value.objective,
            "r1_hat": value.r1_hat,
            "r_hat": value.r_hat,
        }
        if eval_data is not None:
            ef, el = eval_data
            probs = sigmoid(model.forward_many(ef))
            decisions = (probs >= 0.5).astype(np.float64)
            entry["hamming_risk"] = float((decisions != el).sum(axis=-1).mean())
        trace.append(entry)
    return model, trace


def _hypothesis_matrix(hypotheses: Sequence[Callable], points: Sequence) -> np.ndarray:
    if len(hypotheses) == 0:
        raise ValueError("need at least one hypothesis")
    return np.asarray([[float(h(x)) for x in points] for h in hypotheses])


def rademacher_trial_values(
    hypotheses: Sequence[Callable],
    points: Sequence,
    trials: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-trial suprema sup_h (1/n) sum_i sigma_i h(x_i), one per sign draw."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    H = _hypothesis_matrix(hypotheses, points)
    n = H.shape[1]
    out = np.empty(trials)
    chunk = 20000
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        signs = rng.integers(0, 2, size=(size, n)) * 2 - 1
        out[start : start + size] = (signs @ H.T).max(axis=1) / n
    return out


def empirical_rademacher(
    hypotheses: Sequence[Callable],
    points: Sequence,
    trials: int = 10000,
    rng: Optional[np.random.Generator] = None,
    exact: bool = False,
) -> float:
    """Rademacher complexity of a finite class on fixed points.

    Monte-Carlo over sign draws by default; `exact` enumerates all 2^n
    sign patterns (n <= 20).
    """
    H = _hypothesis_matrix(hypotheses, points)
    n = H.shape[1]
    if exact:
        if n > 20:
            raise ValueError("exact enumeration is limited to n <= 20 points")
        total = 0.0
        for signs in itertools.product((-1.0, 1.0), repeat=n):
            total += (np.asarray(signs) @ H.T).max() / n
        return total / 2 ** n
    if rng is None:
        raise ValueError("Monte-Carlo mode needs an rng")
    return float(rademacher_trial_values(hypotheses, points, trials, rng).mean())


def _flat_matrix(hypotheses: Sequence[Callable], points: Sequence) -> tuple[np.ndarray, int]:
    if len(hypotheses) == 0:
        raise ValueError("need at least one hypothesis")
    rows = []
    K = None
    for h in hypotheses:
        vals = [np.atleast_1d(np.asarray(h(x), dtype=np.float64)) for x in points]
        K = len(vals[0]) if K is None else K
        if any(len(v) != K for v in vals):
            raise ValueError("hypotheses must share one output width")
        rows.append(np.concatenate(vals))
    return np.asarray(rows), K


def flattened_trial_values(
    hypotheses: Sequence[Callable],
    points: Sequence,
    trials: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Suprema with one independent sign per (point, output entry) pair."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    H, _ = _flat_matrix(hypotheses, points)
    n = len(points)
    out = np.empty(trials)
    chunk = 20000
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        signs = rng.integers(0, 2, size=(size, H.shape[1])) * 2 - 1
        out[start : start + size] = (signs @ H.T).max(axis=1) / n
    return out


def flattened_rademacher(
    hypotheses: Sequence[Callable],
    points: Sequence,
    trials: int = 10000,
    rng: Optional[np.random.Generator] = None,
    exact: bool = False,
) -> float:
    """Flattened complexity: signs indexed by (i, k), normalizer still 1/n."""
    H, _ = _flat_matrix(hypotheses, points)
    n = len(points)
    if exact:
        if H.shape[1] > 20:
            raise ValueError("exact enumeration is limited to n*K <= 20")
        total = 0.0
        for signs in itertools.product((-1.0, 1.0), repeat=H.shape[1]):
            total += (np.asarray(signs) @ H.T).max() / n
        return total / 2 ** H.shape[1]
    if rng is None:
        raise ValueError("Monte-Carlo mode needs an rng")
    return float(flattened_trial_values(hypotheses, points, trials, rng).mean())


@dataclass(frozen=True)
class BoundInputs:
    """Everything the excess-risk bound needs.

    `flat_rademacher_pop` is a plug-in estimate computed on the N
    training points, standing in for the population quantity.
    """

    rademacher_per_class: tuple[float, ...]
    flat_rademacher_emp: float
    flat_rademacher_pop: float
    delta: float
    m: int
    N: int
    n: int
    K: int

    def __post_init__(self):
        if len(self.rademacher_per_class) != self.K:
            raise ValueError("need one per-class complexity per output entry")
        if any(r < 0 for r in self.rademacher_per_class) or min(
            self.flat_rademacher_emp, self.flat_rademacher_pop
        ) < 0:
            raise ValueError("complexities must be non-negative")
        if not (0 < self.delta <= 0.25):
            raise ValueError("delta must lie in (0, 0.25] for a meaningful guarantee")
        if self.m >= self.N:
            raise ValueError("bound requires m < N")
        if min(self.m, self.n, self.K) < 1:
            raise ValueError("m, n, K must be positive")


def excess_risk_bound(inp: BoundInputs) -> float:
    """Three-term excess-risk bound for the corrected-objective minimizer."""
    m, N, n, K, delta = inp.m, inp.N, inp.n, inp.K, inp.delta
    term1 = (
        8.0 * (m - 1) * N / (N - m)
        * (sum(inp.rademacher_per_class) + K * math.sqrt(math.log(2 * m * K / delta) / (2 * n)))
    )
    term2 = 2.0 * (
        4.0 * math.sqrt(2 * K) * inp.flat_rademacher_pop
        + math.sqrt(math.log(2 / delta) / (2 * N))
    )
    term3 = (
        2.0 * m * (N - 1) / (N - m)
        * (4.0 * math.sqrt(2 * K) * inp.flat_rademacher_emp
           + math.sqrt(math.log(2 / delta) / (2 * n)))
    )
    return term1 + term2 + term3


def wor_mean_sqnorm(vectors: np.ndarray, m: int) -> float:
    """Closed form for E||mean of m without-replacement draws||^2.

    Equals ((m-1)N ||mean||^2 + (N-m) mean(||x||^2)) / (m(N-1)) for a
    finite set of N vectors.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    N = vectors.shape[0]
    if N < 2:
        raise ValueError("need at least two vectors")
    if not (1 <= m <= N):
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={N}")
    mean_sq = float((vectors.mean(axis=0) ** 2).sum())
    sq_mean = float((vectors ** 2).sum(axis=1).mean())
    return ((m - 1) * N * mean_sq + (N - m) * sq_mean) / (m * (N - 1))


def wor_mean_sqnorm_bruteforce(vectors: np.ndarray, m: int) -> float:
    """Oracle: average ||subset mean||^2 over all C(N, m) subsets."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    N = vectors.shape[0]
    if N < 2:
        raise ValueError("need at least two vectors")
    if not (1 <= m <= N):
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={N}")
    total = 0.0
    count = 0
    for subset in itertools.combinations(range(N), m):
        mean = vectors[list(subset)].mean(axis=0)
        total += float((mean ** 2).sum())
        count += 1
    return total / count


def r1_closed_form(predictions: np.ndarray, labels: np.ndarray, m: int) -> float:
    """Exact E||bag prediction mean - Bernoulli aggregate||^2.

    First term: the without-replacement moment identity applied to the
    residual vectors h(x)-y. Second term: the expected conditional
    variance of the Bernoulli aggregate, sum_k E[p_k(1-p_k)], which for
    {0,1} labels under without-replacement bag means reduces to the
    correction factor times the summed per-entry label variance.
    """
    predictions = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal shapes")
    N = labels.shape[0]
    if N < 2:
        raise ValueError("need at least two examples")
    if not (1 <= m <= N):
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={N}")
    resid = predictions - labels
    first = wor_mean_sqnorm(resid, m)
    label_var = float((labels.var(axis=0)).sum())
    return first + correction_factor(m, N) * label_var


def r1_monte_carlo(
    predictions: np.ndarray,
    labels: np.ndarray,
    m: int,
    trials: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """(estimate, standard error) of the bag-level risk by simulation."""
    predictions = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    N, K = labels.shape
    if trials < 1:
        raise ValueError("trials must be >= 1")
    # argpartition of iid uniforms picks a uniform m-subset per row
    keys = rng.random((trials, N))
    idx = np.argpartition(keys, m - 1, axis=1)[:, :m]
    p = labels[idx].mean(axis=1)
    agg = (rng.random((trials, K)) < p).astype(np.float64)
    pred_mean = predictions[idx].mean(axis=1)
    vals = ((pred_mean - agg) ** 2).sum(axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials))


def r1_closed_form_check(
    predictions: np.ndarray,
    labels: np.ndarray,
    m: int,
    trials: int,
    rng: np.random.Generator,
    strict: bool = True,
) -> dict:
    """Monte-Carlo risk vs the closed form, with the comparison scale."""
    predictions = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    if strict and not np.isin(predictions, (0.0, 1.0)).all():
        raise ValueError("strict mode requires a binary-output hypothesis")
    if trials < 10_000:
        raise ValueError("need at least 10^4 trials for a meaningful check")
    closed = r1_closed_form(predictions, labels, m)
    estimate, stderr = r1_monte_carlo(predictions, labels, m, trials, rng)
    return {
        "mc_estimate": estimate,
        "closed_form": closed,
        "abs_diff": abs(estimate - closed),
        "std_error": stderr,
    }
