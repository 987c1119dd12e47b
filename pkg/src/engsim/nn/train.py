"""Mini-batch training loop with validation-accuracy early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Softmax
from .losses import CrossEntropyLoss, one_hot
from .model import ModelGraph
from .optim import Adam


@dataclass
class TrainConfig:
    max_epochs: int = 50
    patience: int = 8
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    val_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if self.patience < 1:
            raise ValueError("patience must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = 0
    n_epochs: int = 0
    stopped_early: bool = False


def split_validation(
    labels: np.ndarray, val_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified shuffle split; returns (train_idx, val_idx).

    Per class, ceil(val_fraction * count) examples go to validation so every
    class is represented even when counts are small.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    train_parts, val_parts = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_val = int(np.ceil(val_fraction * idx.size))
        if idx.size > 1:
            n_val = min(n_val, idx.size - 1)
        val_parts.append(idx[:n_val])
        train_parts.append(idx[n_val:])
    train_idx = np.sort(np.concatenate(train_parts))
    val_idx = np.sort(np.concatenate(val_parts))
    return train_idx, val_idx


def evaluate_accuracy(
    model: ModelGraph, windows: np.ndarray, labels: np.ndarray,
    batch_size: int = 64,
) -> float:
    preds = model.predict(windows, batch_size=batch_size)
    return float((preds == np.asarray(labels)).mean())


def train(
    model: ModelGraph,
    windows: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig | None = None,
    val_windows: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
) -> TrainHistory:
    """Train a built maps-input model on labelled windows (n, K, T).

    When no validation set is passed, a stratified val_fraction share of the
    training windows is held out. Early stopping watches validation accuracy:
    a strict improvement resets the patience counter, and once the counter
    reaches the patience limit training stops. The parameters from the best
    validation epoch are restored before returning.
    """
    config = config or TrainConfig()
    windows = np.asarray(windows)
    labels = np.asarray(labels)
    if windows.ndim != 3:
        raise ValueError("windows must be (n, contacts, samples)")
    if labels.shape != (windows.shape[0],):
        raise ValueError("labels must match windows")
    if not model.built:
        k, t = windows.shape[1], windows.shape[2]
        model.build(("maps", 1, k, t), dtype=np.float32, seed=config.seed)
    if model.output_shape[0] != "vec":
        raise ValueError("model must end in a probability vector")
    n_classes = model.output_shape[1]

    if val_windows is None:
        train_idx, val_idx = split_validation(
            labels, config.val_fraction, config.seed
        )
        val_windows = windows[val_idx]
        val_labels = labels[val_idx]
        windows = windows[train_idx]
        labels = labels[train_idx]
    elif val_labels is None:
        raise ValueError("val_labels required with val_windows")

    x_all = np.asarray(windows, dtype=model.dtype)
    y_all = one_hot(labels, n_classes, dtype=model.dtype)
    loss_fn = CrossEntropyLoss()
    # With a softmax head the cross-entropy gradient is injected below it
    # as (p - y)/batch. Chaining through the softmax Jacobian instead would
    # return an exact zero once float32 probabilities saturate to one-hot.
    fused_head = len(model.layers) > 0 and isinstance(model.layers[-1], Softmax)
    optimizer = Adam(
        model.parameters(),
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
    )
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, 0xBA7C4])
    )

    history = TrainHistory()
    best_acc = -np.inf
    best_state = None
    stale = 0
    n = x_all.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, config.batch_size):
            take = order[start:start + config.batch_size]
            xb = np.ascontiguousarray(x_all[take])[None, :, :, :]
            yb = y_all[take]
            model.zero_grad()
            probs = model.forward(xb, training=True)
            total_loss += loss_fn.value(probs, yb) * take.size
            if fused_head:
                model.backward(
                    (probs - yb) / yb.shape[0], start=len(model.layers) - 2
                )
            else:
                model.backward(loss_fn.gradient(probs, yb))
            optimizer.step()
        history.train_loss.append(total_loss / n)

        val_acc = evaluate_accuracy(model, val_windows, val_labels)
        history.val_accuracy.append(val_acc)
        history.n_epochs = epoch
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = model.get_state()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                history.stopped_early = True
                break

    if best_state is not None:
        model.set_state(best_state)
    return history
