"""Synthetic non-IID task, local softmax-regression SGD and server-side aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class TaskConfig:
    num_labels: int = 35
    labels_per_client: int = 4
    feature_dim: int = 32
    samples_per_client: int = 400
    # shard sizes are drawn uniformly from samples_per_client * [1 - spread, 1 + spread]
    size_spread: float = 0.8
    label_noise: float = 0.0
    # class means are scaled vertices of the {-1, +1}^d hypercube
    cluster_scale: float = 0.8
    test_samples_per_label: int = 40

    def __post_init__(self):
        if self.num_labels < 2:
            raise ValueError("num_labels must be >= 2")
        if not 1 <= self.labels_per_client <= self.num_labels:
            raise ValueError(
                f"labels_per_client must lie in [1, num_labels={self.num_labels}], "
                f"got {self.labels_per_client}"
            )
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not 0.0 <= self.size_spread < 1.0:
            raise ValueError("size_spread must lie in [0, 1)")
        if self.size_bounds[0] < self.labels_per_client:
            raise ValueError("smallest shard must hold at least labels_per_client samples")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must lie in [0, 1)")
        if not self.cluster_scale > 0:
            raise ValueError("cluster_scale must be > 0")
        if self.test_samples_per_label < 1:
            raise ValueError("test_samples_per_label must be >= 1")

    @property
    def size_bounds(self) -> tuple[int, int]:
        lo = round(self.samples_per_client * (1.0 - self.size_spread))
        hi = round(self.samples_per_client * (1.0 + self.size_spread))
        return lo, hi

    @property
    def n_params(self) -> int:
        return self.feature_dim * self.num_labels


@dataclass
class DataShard:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError("a data shard must hold at least one sample")
        if self.features.shape[0] != len(self.labels):
            raise ValueError("features and labels disagree on sample count")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def label_set(self) -> set[int]:
        return set(int(y) for y in np.unique(self.labels))


@dataclass
class FleetData:
    shards: list[DataShard]
    test_set: DataShard
    class_means: np.ndarray


def _class_means(task: TaskConfig, rng: np.random.Generator) -> np.ndarray:
    L, d = task.num_labels, task.feature_dim
    if 2 ** min(d, 62) < L:
        raise ValueError(f"feature_dim={d} cannot host {L} distinct hypercube means")
    means = rng.choice([-1.0, 1.0], size=(L, d))
    while True:
        _, first = np.unique(means, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(L), first)
        if dup.size == 0:
            break
        means[dup] = rng.choice([-1.0, 1.0], size=(dup.size, d))
    return means * task.cluster_scale


def generate_fleet_data(task: TaskConfig, n_clients: int, seed: int) -> FleetData:
    """Draw Gaussian-cluster shards where each client sees ``labels_per_client`` labels."""
    if n_clients < 1:
        raise ValueError(f"n_clients must be >= 1, got {n_clients}")
    rng = np.random.default_rng([seed, 0xDA7A])
    means = _class_means(task, rng)
    L, d, lpc = task.num_labels, task.feature_dim, task.labels_per_client
    lo, hi = task.size_bounds

    shards = []
    for _ in range(n_clients):
        n = int(rng.integers(lo, hi + 1))
        own = rng.choice(L, size=lpc, replace=False)
        y = np.concatenate([own, rng.choice(own, size=n - lpc)])
        rng.shuffle(y)
        x = means[y] + rng.standard_normal((n, d))
        if task.label_noise > 0:
            flip = rng.random(n) < task.label_noise
            y = y.copy()
            y[flip] = rng.choice(own, size=int(flip.sum()))
        shards.append(DataShard(x, y.astype(np.int64)))

    y_test = np.repeat(np.arange(L), task.test_samples_per_label)
    x_test = means[y_test] + rng.standard_normal((len(y_test), d))
    return FleetData(shards, DataShard(x_test, y_test.astype(np.int64)), means)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def per_sample_loss(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross-entropy of each sample under a (d, L) weight matrix."""
    logits = x @ weights
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return log_norm - z[np.arange(len(y)), y]


def loss_and_grad(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the (d, L) weights."""
    probs = softmax(x @ weights)
    n = len(y)
    loss = float(-np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean())
    probs[np.arange(n), y] -= 1.0
    return loss, x.T @ probs / n


@dataclass
class TrainResult:
    delta: np.ndarray
    avg_loss: float
    sum_sq_loss: float
    samples_used: int


def local_train(
    model_weights: np.ndarray,
    shard: DataShard,
    lr: float,
    local_epochs: int,
    batch_size: int,
    seed,
    num_labels: int | None = None,
) -> TrainResult:
    """Mini-batch SGD on the shard starting from the received flat weight vector."""
    if len(shard) == 0:
        raise ValueError("cannot train on an empty shard")
    if lr <= 0:
        raise ValueError("lr must be > 0")
    if batch_size < 1 or local_epochs < 1:
        raise ValueError("batch_size and local_epochs must be >= 1")
    d = shard.features.shape[1]
    L = num_labels if num_labels is not None else model_weights.size // d
    w0 = np.asarray(model_weights, dtype=np.float64).reshape(d, L)
    w = w0.copy()
    x, y = shard.features, shard.labels

    first_pass = per_sample_loss(w0, x, y)
    sum_sq = float(np.dot(first_pass, first_pass))

    rng = np.random.default_rng(seed)
    n = len(y)
    batch_losses = []
    for _ in range(local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grad = loss_and_grad(w, x[idx], y[idx])
            batch_losses.append(loss * len(idx))
            w -= lr * grad
    avg_loss = float(sum(batch_losses) / (n * local_epochs))
    return TrainResult((w - w0).ravel(), avg_loss, sum_sq, n * local_epochs)


class EmptyAggregationError(ValueError):
    """No client update reached the server this round."""


def aggregate_fedavg(updates: Iterable[tuple[int, np.ndarray, int]]) -> np.ndarray:
    """Sample-weighted mean of ``(client_id, delta, samples_used)`` updates.

    Summation runs in ascending client id so the result ignores arrival order.
    """
    ordered = sorted(updates, key=lambda u: u[0])
    if not ordered:
        raise EmptyAggregationError("no updates to aggregate")
    total = sum(u[2] for u in ordered)
    if total <= 0:
        raise EmptyAggregationError("updates carry no samples")
    acc = np.zeros_like(np.asarray(ordered[0][1], dtype=np.float64))
    for _, delta, samples in ordered:
        acc += samples * np.asarray(delta, dtype=np.float64)
    return acc / total


@dataclass
class ModelState:
    weights: np.ndarray
    server_m: np.ndarray
    server_v: np.ndarray

    @classmethod
    def zeros(cls, n_params: int, tau: float = 1e-3) -> "ModelState":
        return cls(np.zeros(n_params), np.zeros(n_params), np.full(n_params, tau * tau))

    def copy(self) -> "ModelState":
        return ModelState(self.weights.copy(), self.server_m.copy(), self.server_v.copy())


@dataclass(frozen=True)
class YogiParams:
    eta: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 <= 1.0):
            raise ValueError("beta1 must lie in [0, 1) and beta2 in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


def yogi_server_update(
    model: ModelState,
    agg_delta: np.ndarray,
    eta: float,
    beta1: float,
    beta2: float,
    tau: float,
) -> ModelState:
    """One adaptive server step that treats the averaged client delta as a pseudo-gradient."""
    delta = np.asarray(agg_delta, dtype=np.float64)
    if delta.shape != model.weights.shape:
        raise ValueError(f"delta shape {delta.shape} does not match model {model.weights.shape}")
    if eta <= 0 or tau <= 0:
        raise ValueError("eta and tau must be > 0")
    m = beta1 * model.server_m + (1.0 - beta1) * delta
    sq = delta * delta
    v = model.server_v - (1.0 - beta2) * sq * np.sign(model.server_v - sq)
    weights = model.weights + eta * m / (np.sqrt(v) + tau)
    return ModelState(weights, m, v)


def evaluate(model_weights: np.ndarray, test_set: DataShard, num_labels: int | None = None) -> tuple[float, float]:
    if len(test_set) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    d = test_set.features.shape[1]
    L = num_labels if num_labels is not None else model_weights.size // d
    w = np.asarray(model_weights, dtype=np.float64).reshape(d, L)
    logits = test_set.features @ w
    accuracy = float(np.mean(logits.argmax(axis=1) == test_set.labels))
    loss = float(per_sample_loss(w, test_set.features, test_set.labels).mean())
    return accuracy, loss
