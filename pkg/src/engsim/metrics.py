"""Classification metrics and inference timing."""

from __future__ import annotations

import platform
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - present in the declared environment
    threadpool_limits = None


def _check_pair(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValueError(
            f"predictions and labels must be equal-length 1-D arrays, "
            f"got {predictions.shape} and {labels.shape}"
        )
    if predictions.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return predictions, labels


def accuracy(predictions, labels) -> float:
    predictions, labels = _check_pair(predictions, labels)
    return float(np.mean(predictions == labels))


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    predictions, labels = _check_pair(predictions, labels)
    if n_classes <= 0:
        raise ValueError(f"n_classes must be positive, got {n_classes}")
    for name, arr in (("predictions", predictions), ("labels", labels)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"{name} contain ids outside [0, {n_classes})")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (labels, predictions), 1)
    return matrix


def macro_f1(predictions, labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1 scores.

    A class that never occurs in either predictions or labels contributes an
    F1 of zero and triggers a warning, so a degenerate split cannot silently
    inflate the mean.
    """
    matrix = confusion_matrix(predictions, labels, n_classes)
    scores = np.zeros(n_classes)
    for c in range(n_classes):
        tp = matrix[c, c]
        fp = matrix[:, c].sum() - tp
        fn = matrix[c, :].sum() - tp
        if tp + fp + fn == 0:
            warnings.warn(
                f"class {c} absent from both labels and predictions; "
                "its F1 counts as 0",
                stacklevel=2,
            )
            continue
        denom = 2 * tp + fp + fn
        scores[c] = 2 * tp / denom if denom else 0.0
    return float(scores.mean())


def hardware_descriptor() -> str:
    import os

    cpu = platform.processor() or platform.machine() or "unknown-cpu"
    return f"{cpu}/{os.cpu_count()}core/{platform.system().lower()}"


@dataclass(frozen=True)
class TimingReport:
    """Median per-window inference time with its measurement context."""

    seconds_per_window: float
    repeats: int
    n_windows: int
    hardware: str


def measure_test_time(
    predict_fn, windows: np.ndarray, repeats: int = 5, warmup: int = 1
) -> TimingReport:
    """Median wall-clock time to classify one window, single-threaded.

    ``predict_fn`` must accept the full ``windows`` batch; the per-window
    figure divides each repeat by the batch size. BLAS pools are pinned to
    one thread during measurement so numbers are comparable across hosts.
    """
    if repeats < 5:
        raise ValueError(f"need at least 5 repeats for a stable median, got {repeats}")
    windows = np.asarray(windows)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, K, W) stack, got {windows.shape}")

    def _run():
        samples = []
        for _ in range(warmup):
            predict_fn(windows)
        for _ in range(repeats):
            t0 = time.perf_counter()
            predict_fn(windows)
            samples.append((time.perf_counter() - t0) / windows.shape[0])
        return samples

    if threadpool_limits is not None:
        with threadpool_limits(limits=1):
            samples = _run()
    else:  # pragma: no cover
        samples = _run()
    return TimingReport(
        seconds_per_window=float(np.median(samples)),
        repeats=repeats,
        n_windows=int(windows.shape[0]),
        hardware=hardware_descriptor(),
    )


@dataclass
class EvalReport:
    """Cross-validated evaluation summary for one architecture."""

    architecture: str
    window_ms: float
    fold_accuracy: list[float] = field(default_factory=list)
    fold_macro_f1: list[float] = field(default_factory=list)
    confusion: np.ndarray | None = None
    timing: TimingReport | None = None
    parameter_count: int = 0

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean(self.fold_macro_f1))

    @property
    def std_macro_f1(self) -> float:
        return float(np.std(self.fold_macro_f1))

    def rows(self) -> list[dict]:
        """Long-format rows (one per fold) ready for CSV emission."""
        out = []
        for i, (acc, f1) in enumerate(zip(self.fold_accuracy, self.fold_macro_f1)):
            out.append(
                {
                    "architecture": self.architecture,
                    "window_ms": self.window_ms,
                    "fold": i,
                    "accuracy": acc,
                    "macro_f1": f1,
                    "parameter_count": self.parameter_count,
                    "test_time_s": (
                        self.timing.seconds_per_window if self.timing else float("nan")
                    ),
                }
            )
        return out
