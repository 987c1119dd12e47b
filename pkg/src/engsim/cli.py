"""Command-line pipeline: simulate, preprocess, train, eval, budget, report.

One JSON config file describes an experiment; every subcommand reads the
slice of it that it needs. Flags override config keys, and the ENGSIM_SEED
environment variable overrides the seed everywhere. Exit codes: 0 success,
2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .classifiers import ARCHITECTURES, ArchSpec
from .dataset import (
    CLASS_NAMES,
    DEFAULT_DISTORTION,
    LabeledWindowSet,
    REST_LABEL,
    Scene,
    load_dataset,
    load_recording,
    make_default_recipes,
    make_default_scene,
    save_dataset,
    span_plan,
    scale_windows,
)
from .dsp import PreprocessConfig, preprocess
from .evaluation import rebuild_for_checkpoint, run_cross_validation
from .latency import (
    LinkBudget,
    StageTimes,
    SUPPORTED_WINDOWS_MS,
    default_uplink_table,
    feasibility_report,
    residual_latency,
    uplink_time,
)
from .metrics import accuracy as accuracy_metric
from .metrics import macro_f1
from .dataset import kfold_split
from .nn.model import load_checkpoint
from .nn.train import TrainConfig
from .signal_model import DistortionConfig, MultiChannelSignal


class ConfigError(Exception):
    exit_code = 2


class DataError(Exception):
    exit_code = 3


class NumericError(Exception):
    exit_code = 4


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

_NUM = (int, float)

SCHEMA = {
    "seed": int,
    "output_dir": str,
    "scene": {
        "n_axons": int,
        "seed": int,
        "target_rms_v": _NUM,
    },
    "scenario": {
        "on_seconds": _NUM,
        "replicates": int,
        "classes": ("list", str),
    },
    "distortion": {
        "emg_sigma_v": _NUM,
        "noise_sigma_v": _NUM,
        "line_amp_v": _NUM,
        "line_freq_hz": _NUM,
    },
    "preprocess": {
        "f_low_hz": _NUM,
        "f_high_hz": _NUM,
        "filter_order": int,
        "target_fs_hz": _NUM,
        "threshold_v": _NUM,
        "notch_enabled": bool,
        "notch_freq_hz": _NUM,
        "notch_q": _NUM,
    },
    "windows_ms": ("list", _NUM),
    "train": {
        "max_epochs": int,
        "patience": int,
        "batch_size": int,
        "learning_rate": _NUM,
        "beta1": _NUM,
        "beta2": _NUM,
        "val_fraction": _NUM,
    },
    "evaluation": {
        "architectures": ("list", str),
        "k_folds": int,
        "folds": ("list", int),
        "measure_timing": bool,
        "arch_options": dict,
    },
    "latency": {
        "rate_bps": _NUM,
        "bits_per_sample": int,
        "n_channels": int,
        "fs_hz": _NUM,
        "t_acquire_s": _NUM,
        "t_decode_s": _NUM,
        "t_stimulate_s": _NUM,
        "deadline_s": _NUM,
        "windows_ms": ("list", _NUM),
    },
}

DEFAULTS = {
    "seed": 0,
    "output_dir": "engsim-run",
    "scene": {"n_axons": 20, "seed": 0, "target_rms_v": 5.0e-5},
    "scenario": {
        "on_seconds": 30.0,
        "replicates": 3,
        "classes": list(CLASS_NAMES),
    },
    "distortion": {
        "emg_sigma_v": DEFAULT_DISTORTION.emg_sigma_v,
        "noise_sigma_v": DEFAULT_DISTORTION.noise_sigma_v,
        "line_amp_v": DEFAULT_DISTORTION.line_amp_v,
        "line_freq_hz": DEFAULT_DISTORTION.line_freq_hz,
    },
    "preprocess": {},
    "windows_ms": [100.0],
    "train": {},
    "evaluation": {
        "architectures": ["cnn", "it", "engnet", "lstm"],
        "k_folds": 5,
        "measure_timing": True,
        "arch_options": {},
    },
    "latency": {"windows_ms": list(SUPPORTED_WINDOWS_MS)},
}


def _validate(cfg: dict, schema: dict, path: str = "config"):
    for key, val in cfg.items():
        if key not in schema:
            hint = difflib.get_close_matches(key, schema.keys(), n=1)
            extra = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise ConfigError(f"{path}.{key}: unknown key{extra}")
        want = schema[key]
        where = f"{path}.{key}"
        if isinstance(want, dict) and want:
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected an object")
            _validate(val, want, where)
        elif want is dict:
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected an object")
        elif isinstance(want, tuple) and want and want[0] == "list":
            elem = want[1]
            if not isinstance(val, list):
                raise ConfigError(f"{where}: expected a list")
            elem_types = elem if isinstance(elem, tuple) else (elem,)
            for i, item in enumerate(val):
                if not isinstance(item, elem_types) or isinstance(item, bool):
                    raise ConfigError(
                        f"{where}[{i}]: expected "
                        f"{'/'.join(t.__name__ for t in elem_types)}"
                    )
        else:
            types = want if isinstance(want, tuple) else (want,)
            ok = isinstance(val, types)
            if bool not in types and isinstance(val, bool):
                ok = False
            if not ok:
                raise ConfigError(
                    f"{where}: expected "
                    f"{'/'.join(t.__name__ for t in types)}, "
                    f"got {type(val).__name__}"
                )


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None, args) -> dict:
    raw = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    _validate(raw, SCHEMA)
    cfg = _merge(DEFAULTS, raw)
    if getattr(args, "output_dir", None):
        cfg["output_dir"] = args.output_dir
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "window_ms", None):
        cfg["windows_ms"] = [float(w) for w in args.window_ms]
    if getattr(args, "arch", None):
        cfg["evaluation"]["architectures"] = list(args.arch)
    env_seed = os.environ.get("ENGSIM_SEED")
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(
                f"ENGSIM_SEED must be an integer, got {env_seed!r}"
            )
    return cfg


def _build_scene(cfg: dict) -> Scene:
    sc = cfg["scene"]
    return make_default_scene(
        n_axons=sc["n_axons"],
        seed=sc.get("seed", cfg["seed"]),
        target_rms_v=sc["target_rms_v"],
    )


def _build_recipes(cfg: dict):
    all_recipes = make_default_recipes(cfg["scene"]["n_axons"])
    by_name = {r.name: r for r in all_recipes}
    chosen = []
    for name in cfg["scenario"]["classes"]:
        if name not in by_name:
            raise ConfigError(
                f"config.scenario.classes: unknown class {name!r}; "
                f"available: {sorted(by_name)}"
            )
        chosen.append(by_name[name])
    if not chosen:
        raise ConfigError("config.scenario.classes: empty class list")
    return chosen


def _build_distortion(cfg: dict) -> DistortionConfig:
    try:
        return DistortionConfig(**cfg["distortion"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.distortion: {exc}")


def _build_preprocess(cfg: dict) -> PreprocessConfig:
    try:
        return PreprocessConfig(**cfg["preprocess"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.preprocess: {exc}")


def _build_train_config(cfg: dict, seed: int) -> TrainConfig:
    try:
        return TrainConfig(seed=seed, **cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.train: {exc}")


def _build_link_and_stages(cfg: dict) -> tuple[LinkBudget, StageTimes, list]:
    lat = dict(cfg["latency"])
    windows = lat.pop("windows_ms")
    stage_keys = {"t_acquire_s", "t_decode_s", "t_stimulate_s", "deadline_s"}
    stages_kwargs = {k: lat.pop(k) for k in list(lat) if k in stage_keys}
    try:
        link = LinkBudget(**lat)
        stages = StageTimes(**stages_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.latency: {exc}")
    return link, stages, windows


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _rep_seed(seed: int, label: int, rep: int) -> int:
    return int(
        np.random.SeedSequence([seed, label, rep]).generate_state(1)[0]
    )


def _scenario_duration(recipe, on_seconds: float) -> float:
    n_cycles = int(np.ceil(on_seconds / recipe.on_seconds))
    return n_cycles * recipe.cycle_seconds


def _write_csv(path: Path, rows: list[dict]):
    if not rows:
        path.write_text("")
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    out = _out_dir(cfg) / "signals"
    out.mkdir(parents=True, exist_ok=True)
    scene = _build_scene(cfg)
    recipes = _build_recipes(cfg)
    distortion = _build_distortion(cfg)
    on_seconds = cfg["scenario"]["on_seconds"]
    replicates = cfg["scenario"]["replicates"]
    from .dataset import generate_scenario_signal

    for recipe in recipes:
        duration = _scenario_duration(recipe, on_seconds)
        for rep in range(replicates):
            seed = _rep_seed(cfg["seed"], recipe.label, rep)
            signal, _track = generate_scenario_signal(
                scene, recipe, duration, distortion, seed
            )
            stem = f"{recipe.name}_rep{rep}"
            io.write_recording(
                out / f"{stem}.engs", signal.data, int(signal.fs_hz)
            )
            intervals = [
                [span.start_s, span.end_s, recipe.label]
                for span in span_plan(recipe, duration)
                if span.stimulated
            ]
            manifest = {
                "n_channels": signal.data.shape[0],
                "fs_hz": int(signal.fs_hz),
                "labels": intervals,
                "class_names": list(CLASS_NAMES),
                "class": recipe.name,
                "replicate": rep,
                "seed": seed,
                "duration_s": duration,
            }
            with open(out / f"{stem}.json", "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")
            print(f"wrote {stem}.engs ({duration:.0f} s)")
    return 0


def _dataset_dir(out: Path, window_ms: float) -> Path:
    return out / f"dataset_w{int(round(window_ms))}ms"


def cmd_preprocess(cfg: dict) -> int:
    out = _out_dir(cfg)
    signals = out / "signals"
    if not signals.is_dir():
        raise DataError(
            f"no signals directory at {signals}; run `engsim simulate` first"
        )
    recipes = _build_recipes(cfg)
    pre_cfg = _build_preprocess(cfg)
    replicates = cfg["scenario"]["replicates"]
    for window_ms in cfg["windows_ms"]:
        all_windows, all_labels = [], []
        dropped = 0
        for recipe in sorted(recipes, key=lambda r: r.label):
            for rep in range(replicates):
                stem = signals / f"{recipe.name}_rep{rep}"
                engs = stem.with_suffix(".engs")
                meta = stem.with_suffix(".json")
                if not engs.exists() or not meta.exists():
                    raise DataError(f"missing scenario files for {stem.name}")
                with open(meta, encoding="utf-8") as fh:
                    manifest = json.load(fh)
                try:
                    signal, track = load_recording(engs, manifest)
                except (io.FormatError, ValueError) as exc:
                    raise DataError(f"{engs}: {exc}")
                wins, report = preprocess(signal, window_ms, pre_cfg, track)
                dropped += report.n_dropped_boundary
                all_windows.append(
                    np.asarray(wins.windows, dtype=np.float32)
                )
                all_labels.append(np.asarray(wins.labels, dtype=np.int64))
        windows = np.concatenate(all_windows, axis=0)
        labels = np.concatenate(all_labels)
        keep = labels != REST_LABEL
        windows, labels = windows[keep], labels[keep]
        # A class subset keeps its recipe labels in the track; pack them
        # down so labels always index the emitted class_names tuple.
        ordered = sorted(recipes, key=lambda r: r.label)
        lut = np.full(max(r.label for r in ordered) + 1, -1, dtype=np.int64)
        for i, recipe in enumerate(ordered):
            lut[recipe.label] = i
        labels = lut[labels]
        windows = scale_windows(windows)
        order = np.random.default_rng(
            np.random.SeedSequence([cfg["seed"], 0x5F0F])
        ).permutation(windows.shape[0])
        dset = LabeledWindowSet(
            windows=windows[order],
            labels=labels[order],
            window_ms=window_ms,
            fs_hz=pre_cfg.target_fs_hz,
            class_names=tuple(r.name for r in sorted(recipes, key=lambda r: r.label)),
            n_dropped_boundary=dropped,
        )
        ddir = _dataset_dir(out, window_ms)
        save_dataset(
            ddir,
            dset,
            extra={"seed": cfg["seed"], "source": "cli-preprocess"},
        )
        print(
            f"dataset_w{int(round(window_ms))}ms: {dset.n_windows} windows, "
            f"histogram {dset.histogram().tolist()}, "
            f"{dropped} boundary windows dropped"
        )
    return 0


def _load_dataset_or_fail(out: Path, window_ms: float) -> LabeledWindowSet:
    ddir = _dataset_dir(out, window_ms)
    if not ddir.is_dir():
        raise DataError(
            f"no dataset at {ddir}; run `engsim preprocess` first"
        )
    try:
        return load_dataset(ddir)
    except (io.FormatError, ValueError, KeyError) as exc:
        raise DataError(f"{ddir}: {exc}")


def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    eval_cfg = cfg["evaluation"]
    arch_names = eval_cfg["architectures"]
    for name in arch_names:
        if name not in ARCHITECTURES:
            raise ConfigError(
                f"config.evaluation.architectures: unknown architecture "
                f"{name!r}; choose from {list(ARCHITECTURES)}"
            )
    rows = []
    timing: dict[str, dict[str, float]] = {}
    summary_lines = []
    for window_ms in cfg["windows_ms"]:
        dset = _load_dataset_or_fail(out, window_ms)
        k_contacts, width = dset.windows.shape[1], dset.windows.shape[2]
        for name in arch_names:
            options = eval_cfg["arch_options"].get(name, {})
            try:
                spec = ArchSpec(
                    kind=name,
                    n_channels=k_contacts,
                    window_samples=width,
                    n_classes=dset.n_classes,
                    options=options,
                )
            except ValueError as exc:
                raise ConfigError(f"config.evaluation.arch_options: {exc}")

            def progress(kind, fold, acc, f1, history):
                print(
                    f"{kind} w={window_ms:g}ms fold {fold}: "
                    f"acc {acc:.3f} f1 {f1:.3f} "
                    f"({history.n_epochs} epochs, best {history.best_epoch})",
                    flush=True,
                )

            try:
                run = run_cross_validation(
                    dset,
                    spec,
                    k=eval_cfg["k_folds"],
                    seed=cfg["seed"],
                    train_config=_build_train_config(cfg, cfg["seed"]),
                    fold_subset=eval_cfg.get("folds"),
                    measure_timing=eval_cfg["measure_timing"],
                    checkpoint_dir=out / "checkpoints",
                    progress=progress,
                )
            except FloatingPointError as exc:
                raise NumericError(str(exc))
            report = run.report
            rows.extend(report.rows())
            if report.timing is not None:
                timing.setdefault(name, {})[str(int(round(window_ms)))] = (
                    report.timing.seconds_per_window
                )
            epochs = [h.n_epochs for h in run.histories]
            summary_lines.append(
                f"{name:>7} w={window_ms:g}ms: "
                f"F1 {report.mean_macro_f1:.3f} +/- {report.std_macro_f1:.3f} "
                f"acc {report.mean_accuracy:.3f} "
                f"params {report.parameter_count} "
                f"baseline {run.baseline_macro_f1:.3f} "
                f"epochs/fold {epochs}"
            )
            print(summary_lines[-1], flush=True)
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    _write_csv(reports / "eval.csv", rows)
    if timing:
        with open(reports / "timing.json", "w", encoding="utf-8") as fh:
            json.dump(timing, fh, indent=2, sort_keys=True)
            fh.write("\n")
    (reports / "eval_summary.txt").write_text(
        "\n".join(summary_lines) + "\n", encoding="utf-8"
    )
    print(f"reports written to {reports}")
    return 0


def cmd_eval(cfg: dict, checkpoint: str | None) -> int:
    out = _out_dir(cfg)
    ckpt_dir = out / "checkpoints"
    if checkpoint:
        paths = [Path(checkpoint)]
    else:
        if not ckpt_dir.is_dir():
            raise DataError(
                f"no checkpoints at {ckpt_dir}; run `engsim train` first"
            )
        paths = sorted(ckpt_dir.glob("*.ckpt"))
        if not paths:
            raise DataError(f"no .ckpt files in {ckpt_dir}")
    rows = []
    for path in paths:
        if not path.exists():
            raise DataError(f"checkpoint not found: {path}")
        try:
            manifest, arrays = load_checkpoint(path)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}")
        meta = manifest["meta"]
        window_ms = meta["window_ms"]
        dset = _load_dataset_or_fail(out, window_ms)
        spec = ArchSpec(
            kind=meta["architecture"],
            n_channels=dset.windows.shape[1],
            window_samples=dset.windows.shape[2],
            n_classes=dset.n_classes,
            options=cfg["evaluation"]["arch_options"].get(
                meta["architecture"], {}
            ),
        )
        model = rebuild_for_checkpoint(
            spec, dset.windows.shape[2], dset.windows.shape[1]
        )
        model.set_state(arrays)
        plan = kfold_split(
            dset.labels, k=cfg["evaluation"]["k_folds"], seed=meta["seed"]
        )
        _train_idx, test_idx = plan.folds[meta["fold"]]
        preds = model.predict(dset.windows[test_idx])
        acc = accuracy_metric(preds, dset.labels[test_idx])
        f1 = macro_f1(preds, dset.labels[test_idx], dset.n_classes)
        match = (
            abs(acc - meta.get("test_accuracy", np.nan)) < 1e-12
            and abs(f1 - meta.get("test_macro_f1", np.nan)) < 1e-12
        )
        rows.append(
            {
                "checkpoint": path.name,
                "architecture": meta["architecture"],
                "window_ms": window_ms,
                "fold": meta["fold"],
                "accuracy": acc,
                "macro_f1": f1,
                "stored_accuracy": meta.get("test_accuracy"),
                "stored_macro_f1": meta.get("test_macro_f1"),
                "matches_stored": match,
            }
        )
        print(
            f"{path.name}: acc {acc:.3f} f1 {f1:.3f} "
            f"({'matches' if match else 'DIFFERS FROM'} training-time record)"
        )
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    _write_csv(reports / "eval_from_checkpoints.csv", rows)
    return 0


def cmd_budget(cfg: dict, measured_path: str | None) -> int:
    out = _out_dir(cfg)
    link, stages, windows_ms = _build_link_and_stages(cfg)
    timing: dict[str, dict[str, float]] = {}
    source = None
    if measured_path:
        source = Path(measured_path)
    elif (out / "reports" / "timing.json").exists():
        source = out / "reports" / "timing.json"
    if source is not None:
        try:
            with open(source, encoding="utf-8") as fh:
                timing = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read measured times {source}: {exc}")

    lines = [
        f"link: {link.rate_bps / 1e6:g} Mbit/s, "
        f"{link.n_channels} ch x {link.bits_per_sample} bit @ "
        f"{link.fs_hz:g} Hz; deadline {stages.deadline_s * 1000:g} ms",
        "",
        "uplink times:",
    ]
    for w, t_ms in default_uplink_table(windows_ms, link).items():
        lines.append(f"  T_w = {w:>3d} ms -> T_u = {t_ms:6.2f} ms "
                     f"(~{round(t_ms):d} ms)")
    lines.append("")
    rows = []
    arch_names = sorted(timing) if timing else list(
        cfg["evaluation"]["architectures"]
    )
    header = (
        f"{'window':>8} {'arch':>8} {'T_u ms':>8} {'residual ms':>12} "
        f"{'T_c ms':>10} {'total ms':>10} {'verdict':>10}"
    )
    lines.append(header)
    for w_ms in windows_ms:
        per_window = {}
        missing = []
        for name in arch_names:
            t_c = timing.get(name, {}).get(str(int(round(w_ms))))
            if t_c is None:
                missing.append(name)
            else:
                per_window[name] = float(t_c)
        for row in feasibility_report([w_ms], per_window, link, stages):
            rows.append(
                {
                    "window_ms": row.window_ms,
                    "architecture": row.classifier,
                    "t_uplink_ms": row.t_uplink_s * 1000,
                    "residual_ms": row.residual_s * 1000,
                    "t_classify_ms": row.t_classify_s * 1000,
                    "t_total_ms": row.t_total_s * 1000,
                    "feasible": row.feasible,
                }
            )
            lines.append(
                f"{row.window_ms:>6.0f}ms {row.classifier:>8} "
                f"{row.t_uplink_s * 1e3:8.2f} {row.residual_s * 1e3:12.2f} "
                f"{row.t_classify_s * 1e3:10.3f} {row.t_total_s * 1e3:10.2f} "
                f"{'feasible' if row.feasible else 'INFEASIBLE':>10}"
            )
        w_s = w_ms / 1000.0
        resid = residual_latency(stages, link, w_s)
        for name in missing:
            rows.append(
                {
                    "window_ms": float(w_ms),
                    "architecture": name,
                    "t_uplink_ms": uplink_time(link, w_s) * 1000,
                    "residual_ms": resid * 1000,
                    "t_classify_ms": "",
                    "t_total_ms": "",
                    "feasible": "no measurement",
                }
            )
            lines.append(
                f"{w_ms:>6.0f}ms {name:>8} "
                f"{uplink_time(link, w_s) * 1e3:8.2f} {resid * 1e3:12.2f} "
                f"{'--':>10} {'--':>10} {'no meas.':>10}"
            )
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    text = "\n".join(lines) + "\n"
    (reports / "budget.txt").write_text(text, encoding="utf-8")
    _write_csv(reports / "budget.csv", rows)
    print(text, end="")
    return 0


def cmd_report(cfg: dict) -> int:
    out = _out_dir(cfg)
    reports = out / "reports"
    eval_csv = reports / "eval.csv"
    if not eval_csv.exists():
        raise DataError(
            f"no evaluation results at {eval_csv}; run `engsim train` first"
        )
    with open(eval_csv, newline="", encoding="utf-8") as fh:
        fold_rows = list(csv.DictReader(fh))
    if not fold_rows:
        raise DataError(f"{eval_csv} is empty")
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in fold_rows:
        groups.setdefault(
            (row["architecture"], row["window_ms"]), []
        ).append(row)
    lines = [f"engsim {__version__} evaluation summary", ""]
    lines.append(
        f"{'arch':>8} {'window':>8} {'folds':>6} {'mean F1':>9} "
        f"{'std F1':>8} {'mean acc':>9} {'params':>9} {'s/window':>10}"
    )
    long_rows = []
    for (arch, window), rows in sorted(groups.items()):
        f1s = np.array([float(r["macro_f1"]) for r in rows])
        accs = np.array([float(r["accuracy"]) for r in rows])
        t = rows[0].get("test_time_s", "nan")
        lines.append(
            f"{arch:>8} {float(window):>6.0f}ms {len(rows):>6d} "
            f"{f1s.mean():>9.3f} {f1s.std():>8.3f} {accs.mean():>9.3f} "
            f"{rows[0]['parameter_count']:>9} {float(t):>10.4g}"
        )
        long_rows.append(
            {
                "architecture": arch,
                "window_ms": window,
                "mean_macro_f1": f1s.mean(),
                "std_macro_f1": f1s.std(),
                "mean_accuracy": accs.mean(),
                "parameter_count": rows[0]["parameter_count"],
                "test_time_s": t,
            }
        )
    budget_csv = reports / "budget.csv"
    if budget_csv.exists():
        lines.append("")
        lines.append("latency feasibility: see budget.txt")
    text = "\n".join(lines) + "\n"
    (reports / "report.txt").write_text(text, encoding="utf-8")
    _write_csv(reports / "summary_by_window.csv", long_rows)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="engsim",
        description=(
            "Synthetic nerve-cuff recordings, window classifiers, and "
            "latency budgeting."
        ),
    )
    parser.add_argument(
        "--version", action="version", version=f"engsim {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--output-dir", help="override config output_dir")
        p.add_argument("--seed", type=int, help="override config seed")

    p_sim = sub.add_parser("simulate", help="write raw scenario recordings")
    common(p_sim)

    p_pre = sub.add_parser(
        "preprocess", help="filter, window, and label the recordings"
    )
    common(p_pre)
    p_pre.add_argument(
        "--window-ms", action="append", type=float,
        help="window length in ms (repeatable; overrides config)",
    )

    p_train = sub.add_parser(
        "train", help="cross-validated training of the classifiers"
    )
    common(p_train)
    p_train.add_argument(
        "--window-ms", action="append", type=float,
        help="window length in ms (repeatable)",
    )
    p_train.add_argument(
        "--arch", action="append", choices=ARCHITECTURES,
        help="architecture to train (repeatable)",
    )

    p_eval = sub.add_parser(
        "eval", help="re-score saved checkpoints on their test folds"
    )
    common(p_eval)
    p_eval.add_argument("--checkpoint", help="single checkpoint file")

    p_budget = sub.add_parser(
        "budget", help="latency feasibility table"
    )
    common(p_budget)
    p_budget.add_argument(
        "--measured", help="JSON file of measured per-window classify times"
    )

    p_report = sub.add_parser("report", help="aggregate results to a summary")
    common(p_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "preprocess":
            return cmd_preprocess(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "budget":
            return cmd_budget(cfg, args.measured)
        if args.command == "report":
            return cmd_report(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DataError, NumericError) as exc:
        print(f"engsim: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"engsim: missing file: {exc}", file=sys.stderr)
        return 3
    except io.FormatError as exc:
        print(f"engsim: bad data file: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"engsim: numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
