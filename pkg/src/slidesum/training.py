"""Optimization loop: SGD with momentum, inverse-frequency category weighting,
deterministic epoch shuffling, and evaluation against the metrics kit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .categories import NUM_CATEGORIES
from .metrics import Metrics, confusion_matrix, prf1
from .network import Network
from .tensor import ShapeError, Tensor

ZERO_COUNT_WEIGHT_CAP = 10.0

WEIGHTINGS = ("uniform", "inverse_frequency")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 16
    shuffle_seed: int = 0
    weighting: str = "uniform"
    stop_at_accuracy: float | None = None  # optional early exit once reached

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0,1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    val_accuracy: float | None = None


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].accuracy if self.records else 0.0

    @property
    def best_accuracy(self) -> float:
        return max((r.accuracy for r in self.records), default=0.0)

    def export_table(self) -> str:
        """Line-delimited table (epoch, loss, accuracy) for plotting."""
        lines = ["epoch\tloss\taccuracy"]
        for r in self.records:
            lines.append(f"{r.epoch}\t{r.loss!r}\t{r.accuracy!r}")
        return "\n".join(lines) + "\n"


def sgd_step(
    weights: dict[str, Tensor],
    gradients: dict[str, Tensor],
    velocity: dict[str, Tensor],
    lr: float,
    momentum: float,
) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
    """v <- momentum*v - lr*g; w <- w + v.  Updates buffers in place."""
    for name, w in weights.items():
        g = gradients[name]
        v = velocity[name]
        if g.shape != w.shape or v.shape != w.shape:
            raise ShapeError(f"misaligned shapes for {name}")
        v.data[...] = momentum * v.data - lr * g.data.astype(v.dtype)
        w.data[...] += v.data
    return weights, velocity


def category_weights(histogram) -> Tensor:
    """Inverse-frequency weights normalized to mean 1 over observed categories;
    categories with zero count get the fixed cap weight."""
    counts = np.asarray(histogram, dtype=np.float64)
    if counts.ndim != 1 or counts.size != NUM_CATEGORIES:
        raise ValueError(f"histogram must have {NUM_CATEGORIES} entries")
    if np.any(counts < 0):
        raise ValueError("histogram counts must be non-negative")
    if counts.sum() == 0:
        raise ValueError("histogram is all zero")
    weights = np.full(counts.shape, ZERO_COUNT_WEIGHT_CAP, dtype=np.float64)
    observed = counts > 0
    inv = 1.0 / counts[observed]
    weights[observed] = inv / inv.mean()
    return Tensor(weights.astype(np.float32))


def stack_volumes(volumes: Sequence) -> tuple[Tensor, np.ndarray]:
    """Stack labeled frame volumes into a batch tensor and a target vector."""
    if len(volumes) == 0:
        raise ValueError("empty dataset")
    arrays = []
    labels = []
    for v in volumes:
        arrays.append(v.data.data if isinstance(v.data, Tensor) else np.asarray(v.data))
        if v.category is None:
            raise ValueError("volume is unlabeled")
        labels.append(int(v.category))
    x = np.stack(arrays).astype(np.float32)
    return Tensor(x), np.asarray(labels, dtype=np.int64)


def predict_probs(net: Network, x: Tensor, batch_size: int = 32) -> np.ndarray:
    """Forward the whole set in batches; rows of category probabilities."""
    out = []
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    for i in range(0, data.shape[0], batch_size):
        out.append(net.forward(Tensor(data[i:i + batch_size])).data)
    return np.concatenate(out).astype(np.float64)


def _predict_all(net: Network, x: np.ndarray, batch_size: int) -> np.ndarray:
    return np.argmax(predict_probs(net, Tensor(x), batch_size), axis=1)


def train(
    net: Network,
    volumes: Sequence,
    config: TrainConfig,
    val_volumes: Sequence | None = None,
) -> tuple[Network, History]:
    """Run the epoch loop; deterministic given initial weights, dataset order,
    and config.  epochs=0 leaves the weights untouched."""
    x, y = stack_volumes(volumes)
    if tuple(x.shape[1:]) != tuple(net.config.input_shape):
        raise ShapeError(
            f"volumes have shape {x.shape[1:]}, network expects {net.config.input_shape}"
        )
    if config.weighting == "inverse_frequency":
        weights = category_weights(np.bincount(y, minlength=NUM_CATEGORIES))
    else:
        weights = Tensor(np.ones(NUM_CATEGORIES, dtype=np.float32))

    if val_volumes is not None:
        val_x, val_y = stack_volumes(val_volumes)

    velocity = {name: Tensor.zeros(t.shape) for name, t in net.weights.items()}
    history = History()
    n = x.shape[0]
    for epoch in range(config.epochs):
        order = np.random.default_rng(config.shuffle_seed + epoch).permutation(n)
        total_loss = 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, grads = net.backward(Tensor(x.data[idx]), y[idx], weights)
            sgd_step(net.weights, grads, velocity, config.learning_rate, config.momentum)
            total_loss += loss * idx.size
        preds = _predict_all(net, x.data, config.batch_size)
        accuracy = float((preds == y).mean())
        record = EpochRecord(epoch=epoch, loss=total_loss / n, accuracy=accuracy)
        if val_volumes is not None:
            val_preds = _predict_all(net, val_x.data, config.batch_size)
            record.val_accuracy = float((val_preds == val_y).mean())
        history.records.append(record)
        if config.stop_at_accuracy is not None and accuracy >= config.stop_at_accuracy:
            break
    return net, history


def evaluate(net: Network, volumes: Sequence, batch_size: int = 32) -> Metrics:
    """Accuracy, per-category precision/recall/F1, and the confusion matrix."""
    x, y = stack_volumes(volumes)
    preds = _predict_all(net, x.data, batch_size)
    return prf1(confusion_matrix(preds, y))
