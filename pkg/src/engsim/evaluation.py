"""Cross-validated training and scoring of the window classifiers."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import ArchSpec, build_architecture
from .dataset import FoldPlan, LabeledWindowSet, kfold_split
from .metrics import (
    EvalReport,
    accuracy,
    confusion_matrix,
    macro_f1,
    measure_test_time,
)
from .nn.model import ModelGraph, save_checkpoint
from .nn.train import TrainConfig, TrainHistory, train


def fold_seed(base_seed: int, fold: int) -> int:
    """Stable per-fold training seed."""
    return int(
        np.random.SeedSequence([base_seed, fold]).generate_state(1)[0]
    )


def majority_baseline_f1(
    train_labels, test_labels, n_classes: int
) -> float:
    """Macro F1 of always predicting the training set's most common class."""
    train_labels = np.asarray(train_labels)
    counts = np.bincount(train_labels, minlength=n_classes)
    majority = int(counts.argmax())
    preds = np.full(np.asarray(test_labels).shape, majority)
    import warnings

    with warnings.catch_warnings():
        # Absent classes are the whole point of this baseline.
        warnings.simplefilter("ignore")
        return macro_f1(preds, test_labels, n_classes)


@dataclass
class CrossValRun:
    """Everything one cross-validation pass produced."""

    report: EvalReport
    histories: list[TrainHistory] = field(default_factory=list)
    baseline_macro_f1: float = 0.0
    fold_plan: FoldPlan | None = None
    checkpoint_paths: list[str] = field(default_factory=list)


def run_cross_validation(
    dset: LabeledWindowSet,
    spec: ArchSpec,
    k: int = 5,
    seed: int = 0,
    train_config: TrainConfig | None = None,
    fold_subset=None,
    measure_timing: bool = True,
    timing_windows: int = 128,
    checkpoint_dir=None,
    progress=None,
) -> CrossValRun:
    """Train and score one architecture across stratified folds.

    ``fold_subset`` restricts which folds actually run (indices into the
    canonical k-fold plan); metrics then cover only those folds. Timing is
    measured once, on the first trained fold's model. Checkpoints, when a
    directory is given, carry the fold index and training history.
    """
    if dset.windows.shape[2] != spec.window_samples:
        raise ValueError(
            f"dataset windows have {dset.windows.shape[2]} samples, "
            f"architecture expects {spec.window_samples}"
        )
    if dset.windows.shape[1] != spec.n_channels:
        raise ValueError(
            f"dataset has {dset.windows.shape[1]} contacts, architecture "
            f"expects {spec.n_channels}"
        )
    base_config = train_config or TrainConfig()
    plan = kfold_split(dset.labels, k=k, seed=seed)
    folds_to_run = list(range(k)) if fold_subset is None else list(fold_subset)
    n_classes = spec.n_classes

    report = EvalReport(architecture=spec.kind, window_ms=dset.window_ms)
    run = CrossValRun(report=report, fold_plan=plan)
    confusion_total = np.zeros((n_classes, n_classes), dtype=np.int64)
    baselines = []

    for fold in folds_to_run:
        train_idx, test_idx = plan.folds[fold]
        model = build_architecture(spec)
        config = TrainConfig(
            max_epochs=base_config.max_epochs,
            patience=base_config.patience,
            batch_size=base_config.batch_size,
            learning_rate=base_config.learning_rate,
            beta1=base_config.beta1,
            beta2=base_config.beta2,
            val_fraction=base_config.val_fraction,
            seed=fold_seed(seed, fold),
        )
        history = train(
            model, dset.windows[train_idx], dset.labels[train_idx], config
        )
        if not all(np.isfinite(history.train_loss)):
            raise FloatingPointError(
                f"{spec.kind} fold {fold}: training loss diverged"
            )
        preds = model.predict(dset.windows[test_idx])
        test_labels = dset.labels[test_idx]
        fold_acc = accuracy(preds, test_labels)
        fold_f1 = macro_f1(preds, test_labels, n_classes)
        report.fold_accuracy.append(fold_acc)
        report.fold_macro_f1.append(fold_f1)
        confusion_total += confusion_matrix(preds, test_labels, n_classes)
        baselines.append(
            majority_baseline_f1(
                dset.labels[train_idx], test_labels, n_classes
            )
        )
        run.histories.append(history)

        if measure_timing and report.timing is None:
            sample = dset.windows[test_idx][:timing_windows]
            report.timing = measure_test_time(
                lambda w: model.predict(w), sample
            )
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / (
                f"{spec.kind}_w{int(dset.window_ms)}ms_fold{fold}.ckpt"
            )
            path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(
                model,
                path,
                meta={
                    "architecture": spec.kind,
                    "window_ms": dset.window_ms,
                    "fold": fold,
                    "seed": seed,
                    "train_seed": config.seed,
                    "n_epochs": history.n_epochs,
                    "best_epoch": history.best_epoch,
                    "val_accuracy": history.val_accuracy,
                    "test_accuracy": fold_acc,
                    "test_macro_f1": fold_f1,
                },
            )
            run.checkpoint_paths.append(str(path))
        if progress is not None:
            progress(spec.kind, fold, fold_acc, fold_f1, history)
        report.parameter_count = model.param_count()

    report.confusion = confusion_total
    run.baseline_macro_f1 = float(np.mean(baselines)) if baselines else 0.0
    return run


def rebuild_for_checkpoint(
    spec: ArchSpec, window_samples: int, n_channels: int
) -> ModelGraph:
    """Fresh built model matching a checkpoint's geometry, for inference."""
    model = build_architecture(spec)
    model.build(("maps", 1, n_channels, window_samples), dtype=np.float32)
    return model
