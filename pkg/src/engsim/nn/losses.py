"""Classification loss on probability outputs."""

from __future__ import annotations

import numpy as np

_CLIP = 1e-12


def one_hot(labels: np.ndarray, n_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be 1-D")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(
            f"labels must lie in [0, {n_classes}), got "
            f"[{labels.min()}, {labels.max()}]"
        )
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


class CrossEntropyLoss:
    """Mean cross-entropy against one-hot targets, on probabilities.

    Probabilities are clipped away from zero before the log. Composed with a
    softmax output layer the end-to-end input gradient reduces to
    (p - target) / batch.
    """

    def value(self, probs: np.ndarray, targets: np.ndarray) -> float:
        p = np.clip(probs, _CLIP, None)
        return float(-(targets * np.log(p)).sum() / probs.shape[0])

    def gradient(self, probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
        p = np.clip(probs, _CLIP, None)
        return (-targets / p) / probs.shape[0]
