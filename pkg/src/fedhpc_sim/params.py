"""Parameter vectors, synthetic non-IID data and the local softmax-regression trainer.

Parameters are flat float64 numpy arrays laid out as a ``(n_classes,
n_features + 1)`` matrix in row-major order; the last column of each row is
that class's bias.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    InvalidDimensionError,
    PartitionError,
)

ParamVector = np.ndarray


@dataclass(frozen=True)
class SyntheticTask:
    n_features: int
    n_classes: int
    class_centers: np.ndarray
    noise_sigma: float
    seed: int

    @property
    def param_dim(self) -> int:
        return param_dim(self.n_features, self.n_classes)

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one feature row per label around the matching class center."""
        x = self.class_centers[labels]
        if self.noise_sigma > 0:
            x = x + rng.normal(0.0, self.noise_sigma, size=x.shape)
        return x


@dataclass(frozen=True)
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray
    client_id: str

    @property
    def sample_count(self) -> int:
        return int(self.labels.shape[0])

    def label_histogram(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=n_classes)


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.05
    micro_batch: int = 32
    momentum: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.micro_batch < 1:
            raise ValueError("micro_batch must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")


def param_dim(n_features: int, n_classes: int) -> int:
    return n_classes * (n_features + 1)


def zeros(n_features: int, n_classes: int) -> ParamVector:
    return np.zeros(param_dim(n_features, n_classes))


def assert_finite(params: ParamVector) -> ParamVector:
    if not np.all(np.isfinite(params)):
        raise FloatingPointError("parameter vector contains NaN or Inf")
    return params


def generate_task(n_features: int, n_classes: int, noise_sigma: float, seed: int) -> SyntheticTask:
    """Gaussian class clusters with standard-normal centers.

    Centers are redrawn (same stream) in the measure-zero event that two
    coincide, so distinctness holds for every seed.
    """
    if n_features < 1:
        raise InvalidDimensionError("n_features must be >= 1")
    if n_classes < 2:
        raise InvalidDimensionError("n_classes must be >= 2")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    while True:
        centers = rng.standard_normal((n_classes, n_features))
        if len({c.tobytes() for c in centers}) == n_classes:
            break
    centers.setflags(write=False)
    return SyntheticTask(n_features, n_classes, centers, float(noise_sigma), int(seed))


def split_counts(client_weights: Sequence[float], samples_total: int) -> list[int]:
    """Round each client's share half-up; the remainder goes to the largest weight."""
    w = np.asarray(client_weights, dtype=float)
    if w.ndim != 1 or len(w) == 0 or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise PartitionError("client weights must be a nonempty list of positive reals")
    if samples_total < len(w):
        raise PartitionError("samples_total must be at least the number of clients")
    total_w = math.fsum(w)
    counts = [math.floor(samples_total * wi / total_w + 0.5) for wi in w]
    # argmax returns the lowest index among ties
    counts[int(np.argmax(w))] += samples_total - sum(counts)
    if min(counts) < 1:
        raise PartitionError(f"a client would receive no samples: counts={counts}")
    return counts


def label_mixture(n_clients: int, n_classes: int, skew: float) -> np.ndarray:
    """Per-client label distribution: (1 - skew) * uniform + skew * own labels.

    Labels are dealt round-robin, client ``i`` owning labels ``i, i + k, ...``.
    With more clients than classes the owned sets wrap and overlap.
    """
    if not 0.0 <= skew <= 1.0:
        raise PartitionError("skew must be in [0, 1]")
    probs = np.full((n_clients, n_classes), (1.0 - skew) / n_classes)
    for i in range(n_clients):
        if n_classes >= n_clients:
            owned = np.arange(i, n_classes, n_clients)
        else:
            owned = np.array([i % n_classes])
        probs[i, owned] += skew / len(owned)
    return probs


def partition_noniid(
    task: SyntheticTask,
    client_weights: Sequence[float],
    samples_total: int,
    skew: float,
    seed: int,
    client_ids: Sequence[str] | None = None,
) -> list[ClientDataset]:
    counts = split_counts(client_weights, samples_total)
    if client_ids is None:
        client_ids = [f"client{i}" for i in range(len(counts))]
    if len(client_ids) != len(counts):
        raise PartitionError("client_ids and client_weights differ in length")
    probs = label_mixture(len(counts), task.n_classes, skew)
    rng = np.random.default_rng(seed)
    out = []
    for cid, n, p in zip(client_ids, counts, probs):
        labels = rng.choice(task.n_classes, size=n, p=p)
        features = task.sample(labels, rng)
        features.setflags(write=False)
        labels.setflags(write=False)
        out.append(ClientDataset(features, labels, str(cid)))
    return out


def _check_shape(params: ParamVector, n_features: int) -> int:
    params = np.asarray(params)
    if params.ndim != 1:
        raise DimensionMismatchError("params must be one-dimensional")
    width = n_features + 1
    if params.size == 0 or params.size % width:
        raise DimensionMismatchError(
            f"params dim {params.size} is not a multiple of n_features + 1 = {width}"
        )
    return params.size // width


def _logits(params: ParamVector, features: np.ndarray) -> np.ndarray:
    n_features = features.shape[1]
    n_classes = _check_shape(params, n_features)
    m = params.reshape(n_classes, n_features + 1)
    return features @ m[:, :-1].T + m[:, -1]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DimensionMismatchError(f"labels outside [0, {n_classes})")


def gradient(params: ParamVector, batch: tuple[np.ndarray, np.ndarray]) -> ParamVector:
    """Analytic gradient of the mean cross-entropy over ``batch = (features, labels)``."""
    features, labels = batch
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels)
    if features.shape[0] != labels.shape[0]:
        raise DimensionMismatchError("features and labels differ in length")
    if features.shape[0] == 0:
        raise EmptyDatasetError("empty batch")
    n_classes = _check_shape(params, features.shape[1])
    _check_labels(labels, n_classes)
    probs = np.exp(_log_softmax(_logits(params, features)))
    probs[np.arange(len(labels)), labels] -= 1.0
    probs /= len(labels)
    grad_w = probs.T @ features
    grad_b = probs.sum(axis=0)
    return np.concatenate([grad_w, grad_b[:, None]], axis=1).ravel()


def local_train(
    params: ParamVector,
    dataset: ClientDataset,
    steps: int,
    cfg: TrainerConfig,
    rng_seed: int | Sequence[int],
) -> ParamVector:
    """Run exactly ``steps`` mini-batch SGD steps and return new parameters.

    Batches come from a seeded permutation of the client's rows; when a pass
    runs out the rows are reshuffled and the batch continues into the next
    pass.
    """
    n = dataset.sample_count
    if n == 0:
        raise EmptyDatasetError(f"client {dataset.client_id} has no samples")
    n_features = dataset.features.shape[1]
    n_classes = _check_shape(params, n_features)
    _check_labels(dataset.labels, n_classes)
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    w = np.array(params, dtype=float, copy=True)
    if steps == 0:
        return w

    rng = np.random.default_rng(rng_seed)
    batch = min(cfg.micro_batch, n)
    order = rng.permutation(n)
    pos = 0
    velocity = np.zeros_like(w)
    for _ in range(steps):
        if pos + batch <= n:
            idx = order[pos:pos + batch]
            pos += batch
        else:
            head = order[pos:]
            order = rng.permutation(n)
            pos = batch - len(head)
            idx = np.concatenate([head, order[:pos]])
        g = gradient(w, (dataset.features[idx], dataset.labels[idx]))
        if cfg.l2:
            g += cfg.l2 * w
        if cfg.momentum:
            velocity = cfg.momentum * velocity + g
            g = velocity
        w -= cfg.learning_rate * g
    return assert_finite(w)


def evaluate(params: ParamVector, datasets: Sequence[ClientDataset]) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over the union of ``datasets``.

    Per-sample losses are summed with ``math.fsum`` so the result does not
    depend on the order of the datasets.
    """
    losses = []
    correct = 0
    total = 0
    for ds in datasets:
        if ds.sample_count == 0:
            continue
        z = _logits(params, np.asarray(ds.features, dtype=float))
        _check_labels(ds.labels, z.shape[1])
        logp = _log_softmax(z)
        rows = np.arange(ds.sample_count)
        losses.append(-logp[rows, ds.labels])
        correct += int(np.count_nonzero(z.argmax(axis=1) == ds.labels))
        total += ds.sample_count
    if total == 0:
        raise EmptyDatasetError("evaluation union is empty")
    loss = math.fsum(np.concatenate(losses).tolist()) / total
    return loss, correct / total


def dump_datasets_csv(datasets: Sequence[ClientDataset], path) -> None:
    """Write ``client_id,row,feature_0..feature_{k-1},label`` rows for debugging."""
    if not datasets:
        raise EmptyDatasetError("nothing to dump")
    k = datasets[0].features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "row", *(f"feature_{j}" for j in range(k)), "label"])
        for ds in datasets:
            for r in range(ds.sample_count):
                w.writerow([ds.client_id, r, *map(repr, ds.features[r].tolist()), int(ds.labels[r])])
