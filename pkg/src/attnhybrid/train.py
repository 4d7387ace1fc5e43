"""Loss, optimizer, metric, and the minibatch training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import AugmentPolicy, Dataset, augment
from .tensor import Tensor, log_softmax, no_grad

__all__ = [
    "Hyperparameters",
    "TrainingRun",
    "cross_entropy",
    "sgd_step",
    "SGD",
    "predict",
    "balanced_accuracy",
    "train_model",
]


@dataclass
class Hyperparameters:
    learning_rate: float
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainingRun:
    """What one training produced: per-epoch mean losses and health."""

    epoch_losses: list = field(default_factory=list)
    diverged: bool = False


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the integer labels under softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (N, classes), got shape {logits.shape}")
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    log_probs = log_softmax(logits, axis=1)
    return -(log_probs[np.arange(n), labels].mean())


def sgd_step(params, grads, lr: float, weight_decay: float = 0.0) -> list:
    """p <- p - lr * (g + weight_decay * p), elementwise over the lists."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    out = []
    for p, g in zip(params, grads):
        p_arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        g_arr = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        out.append(p_arr - lr * (g_arr + weight_decay * p_arr))
    return out


class SGD:
    """Plain stochastic gradient descent with decoupled-free weight decay
    folded into the gradient (no momentum)."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            p.data -= self.lr * (p.grad + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def predict(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Argmax class per image, evaluated without building a graph."""
    model.eval()
    out = []
    with no_grad():
        for start in range(0, images.shape[0], batch_size):
            logits = model(Tensor(images[start : start + batch_size]))
            out.append(np.argmax(logits.data, axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def balanced_accuracy(predictions, labels, class_count: int) -> float:
    """Mean per-class recall over the classes that appear in ``labels``."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"predictions {predictions.shape} and labels {labels.shape} differ"
        )
    if predictions.size == 0:
        raise ValueError("balanced_accuracy needs at least one sample")
    recalls = []
    for cls in range(class_count):
        members = labels == cls
        if members.any():
            recalls.append(float(np.mean(predictions[members] == cls)))
    return float(np.mean(recalls))


def train_model(
    model,
    data: Dataset,
    hp: Hyperparameters,
    policy: AugmentPolicy | None = None,
) -> TrainingRun:
    """Minibatch SGD over the given split; stops early if loss leaves the
    finite range and reports that instead of hiding it."""
    rng = np.random.default_rng(np.random.SeedSequence([hp.seed, 4]))
    optimizer = SGD(model.parameters(), hp.learning_rate, hp.weight_decay)
    run = TrainingRun()
    n = len(data)
    model.train()
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            if policy is None:
                batch = data.images[idx]
            else:
                batch = np.stack(
                    [augment(data.images[i], rng, policy) for i in idx]
                )
            optimizer.zero_grad()
            loss = cross_entropy(model(Tensor(batch)), data.labels[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                run.diverged = True
                model.eval()
                return run
            loss.backward()
            optimizer.step()
            batch_losses.append(value)
        run.epoch_losses.append(float(np.mean(batch_losses)))
    model.eval()
    return run
