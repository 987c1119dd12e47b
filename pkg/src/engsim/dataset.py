"""Labeled window datasets from synthetic stimulation scenarios.

A Scene fixes the electrode geometry and the axon population; a ClassRecipe
says which axons fire, how fast, and with what stimulation cadence. Signals
alternate stimulated and rest spans, run through the preprocessing chain,
and come out as labeled windows ready for cross-validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import REST_LABEL, io
from .dsp import PreprocessConfig, preprocess
from .signal_model import (
    AxonSource,
    CuffGeometry,
    DistortionConfig,
    MultiChannelSignal,
    SpikeParams,
    add_distortion,
    calibrate_amplitudes,
    sample_scene_trains,
    synthesize_from_trains,
)

CLASS_NAMES = ("dorsiflexion", "plantarflexion", "touch", "pain")

DEFAULT_FS_HZ = 30000.0

DEFAULT_DISTORTION = DistortionConfig(
    emg_sigma_v=1.0e-4, noise_sigma_v=4.0e-6, line_amp_v=5.0e-5
)


@dataclass(frozen=True)
class Scene:
    """A fixed electrode and axon population shared by all scenarios."""

    axons: tuple[AxonSource, ...]
    cuff: CuffGeometry
    name: str = "default"

    def __post_init__(self):
        if not self.axons:
            raise ValueError("scene needs at least one axon")


def make_default_scene(
    n_axons: int = 20,
    seed: int = 0,
    target_rms_v: float = 5.0e-5,
    cuff: CuffGeometry | None = None,
) -> Scene:
    """Axon population inside the cuff with varied spike shapes.

    Positions fill the nerve cross-section (radius 80% of the cuff bore) and
    spread along the cuff axis. Decay constants jitter 10% around 3333/s,
    waveform orders draw from {1, 2, 3}, and amplitudes are rescaled as one
    group so a 50-spikes/s probe scene lands on target_rms_v.
    """
    if n_axons < 1:
        raise ValueError("n_axons must be positive")
    cuff = cuff or CuffGeometry()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    axons = []
    z_half = cuff.ring_spacing_m * (cuff.n_rings - 1) / 2 + cuff.radius_m
    for _ in range(n_axons):
        radius = 0.8 * cuff.radius_m * np.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * np.pi)
        position = (
            radius * np.cos(angle),
            radius * np.sin(angle),
            rng.uniform(-z_half, z_half),
        )
        spike = SpikeParams(
            amplitude=float(np.exp(rng.uniform(-0.3, 0.3))),
            decay=3333.0 * rng.uniform(0.9, 1.1),
            order=int(rng.integers(1, 4)),
        )
        axons.append(
            AxonSource(
                position=position,
                spike=spike,
                rate_efferent_hz=50.0,
            )
        )
    scaled, _ = calibrate_amplitudes(
        axons, cuff, target_rms_v, seed=seed
    )
    silent = tuple(
        replace(a, rate_afferent_hz=0.0, rate_efferent_hz=0.0) for a in scaled
    )
    return Scene(axons=silent, cuff=cuff)


@dataclass(frozen=True)
class ClassRecipe:
    """How one stimulus class drives the axon population."""

    name: str
    label: int
    axon_subset: tuple[int, ...]
    rate_afferent_hz: float = 0.0
    rate_efferent_hz: float = 0.0
    on_seconds: float = 3.0
    off_seconds: float = 3.0
    rest_fraction: float = 0.05

    def __post_init__(self):
        if self.label < 0:
            raise ValueError("label must be non-negative")
        if not self.axon_subset:
            raise ValueError(f"{self.name}: axon subset is empty")
        if len(set(self.axon_subset)) != len(self.axon_subset):
            raise ValueError(f"{self.name}: axon subset has duplicates")
        if self.rate_afferent_hz < 0 or self.rate_efferent_hz < 0:
            raise ValueError(f"{self.name}: rates must be non-negative")
        if self.rate_afferent_hz == 0 and self.rate_efferent_hz == 0:
            raise ValueError(f"{self.name}: needs a nonzero stimulus rate")
        if self.on_seconds <= 0 or self.off_seconds <= 0:
            raise ValueError(f"{self.name}: cadence spans must be positive")
        if not 0 <= self.rest_fraction < 1:
            raise ValueError(f"{self.name}: rest_fraction must be in [0, 1)")

    @property
    def cycle_seconds(self) -> float:
        return self.on_seconds + self.off_seconds


def make_default_recipes(n_axons: int = 20) -> tuple[ClassRecipe, ...]:
    """The four stimulus classes over a population of n_axons axons.

    Two disjoint efferent groups carry the motor classes. Touch drives the
    whole population afferently at a moderate rate; pain drives only the
    remaining axons, hard and fast, the way a dedicated nociceptive
    subpopulation would. Each class therefore has its own spatial footprint
    on the cuff in addition to its rate and cadence.
    """
    if n_axons < 4:
        raise ValueError("need at least 4 axons for the default recipes")
    third = max(1, int(round(n_axons * 0.3)))
    motor_a = tuple(range(0, third))
    motor_b = tuple(range(third, 2 * third))
    everyone = tuple(range(n_axons))
    nociceptive = tuple(range(2 * third, n_axons))
    return (
        ClassRecipe(
            "dorsiflexion", 0, motor_a, rate_efferent_hz=80.0
        ),
        ClassRecipe(
            "plantarflexion", 1, motor_b, rate_efferent_hz=80.0
        ),
        ClassRecipe(
            "touch", 2, everyone, rate_afferent_hz=40.0
        ),
        ClassRecipe(
            "pain", 3, nociceptive, rate_afferent_hz=120.0,
            on_seconds=1.0, off_seconds=1.0,
        ),
    )


@dataclass(frozen=True)
class Span:
    start_s: float
    end_s: float
    stimulated: bool


def span_plan(recipe: ClassRecipe, duration_s: float) -> list[Span]:
    """Alternating stimulated/rest spans starting stimulated at t = 0."""
    if duration_s < recipe.cycle_seconds:
        raise ValueError(
            f"duration {duration_s} s is shorter than one "
            f"{recipe.cycle_seconds} s cycle of {recipe.name}"
        )
    spans = []
    t = 0.0
    stimulated = True
    while t < duration_s - 1e-9:
        width = recipe.on_seconds if stimulated else recipe.off_seconds
        end = min(t + width, duration_s)
        spans.append(Span(t, end, stimulated))
        t = end
        stimulated = not stimulated
    return spans


def scenario_spike_trains(
    scene: Scene, recipe: ClassRecipe, duration_s: float, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-axon (afferent, efferent) arrival times over the whole scenario.

    Every span draws from its own seed-sequence child, and within a span
    each axon has its own stream, so train draws are stable under changes
    to unrelated spans or axons.
    """
    subset = set(recipe.axon_subset)
    bad = [i for i in subset if not 0 <= i < len(scene.axons)]
    if bad:
        raise ValueError(f"{recipe.name}: axon indices {bad} out of range")
    spans = span_plan(recipe, duration_s)
    children = np.random.SeedSequence(seed).spawn(len(spans))
    aff_parts = [[] for _ in scene.axons]
    eff_parts = [[] for _ in scene.axons]
    for span, child in zip(spans, children):
        gain = 1.0 if span.stimulated else recipe.rest_fraction
        span_axons = [
            replace(
                axon,
                rate_afferent_hz=(
                    gain * recipe.rate_afferent_hz if i in subset else 0.0
                ),
                rate_efferent_hz=(
                    gain * recipe.rate_efferent_hz if i in subset else 0.0
                ),
            )
            for i, axon in enumerate(scene.axons)
        ]
        width = span.end_s - span.start_s
        for i, (aff, eff) in enumerate(
            sample_scene_trains(span_axons, width, child)
        ):
            if aff.size:
                aff_parts[i].append(aff + span.start_s)
            if eff.size:
                eff_parts[i].append(eff + span.start_s)
    def merge(parts):
        if not parts:
            return np.empty(0, dtype=np.float64)
        return np.concatenate(parts)
    return [
        (merge(aff_parts[i]), merge(eff_parts[i]))
        for i in range(len(scene.axons))
    ]


def scenario_labels(
    recipe: ClassRecipe, duration_s: float, fs_hz: float
) -> np.ndarray:
    """Per-sample label track: class label on stimulated spans, rest
    label elsewhere."""
    n_samples = int(round(duration_s * fs_hz))
    labels = np.full(n_samples, REST_LABEL, dtype=np.int64)
    for span in span_plan(recipe, duration_s):
        if span.stimulated:
            i0 = int(round(span.start_s * fs_hz))
            i1 = int(round(span.end_s * fs_hz))
            labels[i0:i1] = recipe.label
    return labels


def generate_scenario_signal(
    scene: Scene,
    recipe: ClassRecipe,
    duration_s: float,
    distortion: DistortionConfig | None = None,
    seed: int = 0,
    fs_hz: float = DEFAULT_FS_HZ,
) -> tuple[MultiChannelSignal, np.ndarray]:
    """Distorted cuff recording plus its per-sample label track."""
    trains = scenario_spike_trains(scene, recipe, duration_s, seed)
    signal = synthesize_from_trains(
        scene.axons, scene.cuff, trains, duration_s, fs_hz
    )
    if distortion is not None:
        noise_seed = np.random.SeedSequence([seed, 0xD157])
        signal = add_distortion(signal, distortion, noise_seed)
    return signal, scenario_labels(recipe, duration_s, fs_hz)


WINDOW_SCALE_V = 5.0e-6
"""Fixed conversion from volts to network input units.

About the in-band deviation of a filtered recording, so scaled windows sit
near unit variance where the layer initializations behave.
"""


def scale_windows(windows: np.ndarray) -> np.ndarray:
    """Remove each window's mean and map volts to unit-order values.

    The denominator is one shared constant, not a per-window deviation:
    normalizing every window to the same variance would erase the energy
    contrast between weak and strong stimuli, which carries class
    information. Relative channel amplitudes pass through untouched.
    """
    w = np.asarray(windows, dtype=np.float32)
    if w.ndim != 3:
        raise ValueError("windows must be (n, contacts, samples)")
    mean = w.mean(axis=(1, 2), keepdims=True)
    return (w - mean) / np.float32(WINDOW_SCALE_V)


@dataclass
class LabeledWindowSet:
    """Preprocessed windows with one integer label each."""

    windows: np.ndarray
    labels: np.ndarray
    window_ms: float
    fs_hz: float
    class_names: tuple[str, ...] = CLASS_NAMES
    n_dropped_boundary: int = 0

    def __post_init__(self):
        self.windows = np.asarray(self.windows)
        self.labels = np.asarray(self.labels)
        if self.windows.ndim != 3:
            raise ValueError("windows must be (n, contacts, samples)")
        if self.labels.shape != (self.windows.shape[0],):
            raise ValueError("one label per window required")

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def histogram(self) -> np.ndarray:
        counts = np.zeros(self.n_classes, dtype=np.int64)
        for lbl in self.labels:
            if 0 <= lbl < self.n_classes:
                counts[lbl] += 1
        return counts


def build_dataset(
    scene: Scene,
    recipes,
    on_seconds: float,
    window_ms: float,
    config: PreprocessConfig | None = None,
    distortion: DistortionConfig | None = DEFAULT_DISTORTION,
    seed: int = 0,
    replicates: int = 1,
    include_rest: bool = False,
) -> LabeledWindowSet:
    """Generate, preprocess, and window every class scenario.

    ``on_seconds`` counts stimulus-on time per class per replicate; each
    recording also carries an equal amount of rest. Windows overlapping a
    stimulation boundary are dropped. Rest windows are excluded unless
    ``include_rest`` is set, in which case they form an extra class after
    the recipe classes. Every kept window is mean-removed and scaled to
    network input units, and the assembled set is shuffled
    deterministically.
    """
    if on_seconds <= 0:
        raise ValueError("on_seconds must be positive")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    config = config or PreprocessConfig()
    recipes = list(recipes)
    labels_seen = [r.label for r in recipes]
    if len(set(labels_seen)) != len(labels_seen):
        raise ValueError("recipe labels must be unique")
    all_windows = []
    all_labels = []
    dropped = 0
    for recipe in recipes:
        n_cycles = int(np.ceil(on_seconds / recipe.on_seconds))
        duration = n_cycles * recipe.cycle_seconds
        for rep in range(replicates):
            rep_seed = np.random.SeedSequence(
                [seed, recipe.label, rep]
            ).generate_state(1)[0]
            signal, track = generate_scenario_signal(
                scene, recipe, duration, distortion, int(rep_seed)
            )
            wins, report = preprocess(signal, window_ms, config, track)
            dropped += report.n_dropped_boundary
            all_windows.append(np.asarray(wins.windows, dtype=np.float32))
            all_labels.append(np.asarray(wins.labels, dtype=np.int64))
    windows = np.concatenate(all_windows, axis=0)
    labels = np.concatenate(all_labels)
    class_names = tuple(r.name for r in sorted(recipes, key=lambda r: r.label))
    if include_rest:
        rest_class = len(recipes)
        labels = np.where(labels == REST_LABEL, rest_class, labels)
        class_names = class_names + ("rest",)
    else:
        keep = labels != REST_LABEL
        windows = windows[keep]
        labels = labels[keep]
    windows = scale_windows(windows)
    order = np.random.default_rng(
        np.random.SeedSequence([seed, 0x5F0F])
    ).permutation(windows.shape[0])
    return LabeledWindowSet(
        windows=windows[order],
        labels=labels[order],
        window_ms=window_ms,
        fs_hz=config.target_fs_hz,
        class_names=class_names,
        n_dropped_boundary=dropped,
    )


def build_default_dataset(
    seeds: tuple[int, ...] = (0, 1, 2),
    on_seconds: float = 60.0,
    window_ms: float = 100.0,
    config: PreprocessConfig | None = None,
    distortion: DistortionConfig | None = DEFAULT_DISTORTION,
    n_axons: int = 20,
) -> LabeledWindowSet:
    """The benchmark window set: one scene per seed, pooled and reshuffled.

    Each seed owns an independent axon geometry and spike-train draw, so a
    classifier has to cope with several cuff layouts at once. ``on_seconds``
    counts stimulus-on time per class within each seed.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    parts = []
    for s in seeds:
        scene = make_default_scene(n_axons, seed=s)
        recipes = make_default_recipes(n_axons)
        parts.append(
            build_dataset(
                scene,
                recipes,
                on_seconds=on_seconds,
                window_ms=window_ms,
                config=config,
                distortion=distortion,
                seed=s,
            )
        )
    windows = np.concatenate([p.windows for p in parts], axis=0)
    labels = np.concatenate([p.labels for p in parts], axis=0)
    order = np.random.default_rng(
        np.random.SeedSequence([0x5F0F, *[int(s) for s in seeds]])
    ).permutation(windows.shape[0])
    return LabeledWindowSet(
        windows=windows[order],
        labels=labels[order],
        window_ms=window_ms,
        fs_hz=parts[0].fs_hz,
        class_names=parts[0].class_names,
        n_dropped_boundary=sum(p.n_dropped_boundary for p in parts),
    )


@dataclass(frozen=True)
class FoldPlan:
    """Index lists for k-fold cross-validation."""

    k: int
    folds: tuple

    def __post_init__(self):
        if len(self.folds) != self.k:
            raise ValueError("fold count must equal k")


def kfold_split(labels, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified k-fold plan over window labels.

    Shuffled per class, then dealt round-robin, so per-class test counts
    differ by at most one window across folds. Returns train/test index
    array pairs; test folds partition the data.
    """
    labels = np.asarray(labels)
    n = labels.size
    if n < k:
        raise ValueError(f"cannot split {n} windows into {k} folds")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    test_sets = [[] for _ in range(k)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for f in range(k):
            test_sets[f].append(idx[f::k])
    folds = []
    everything = np.arange(n)
    for f in range(k):
        test_idx = np.sort(np.concatenate(test_sets[f]))
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        folds.append((everything[mask], test_idx))
    return FoldPlan(k=k, folds=tuple(folds))


def stratified_holdout(
    labels, test_fraction: float = 0.2, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Single stratified train/test split; returns (train_idx, test_idx)."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    labels = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x8E1D]))
    train_parts, test_parts = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_test = max(1, int(round(test_fraction * idx.size)))
        test_parts.append(idx[:n_test])
        train_parts.append(idx[n_test:])
    return (
        np.sort(np.concatenate(train_parts)),
        np.sort(np.concatenate(test_parts)),
    )


# ---------------------------------------------------------------------------
# On-disk layout
# ---------------------------------------------------------------------------

def save_dataset(dirpath, dset: LabeledWindowSet, extra: dict | None = None):
    """Write a window set as signal blob + label sidecar + JSON manifest."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    n, contacts, width = dset.windows.shape
    flat = dset.windows.transpose(1, 0, 2).reshape(contacts, n * width)
    io.write_recording(dirpath / "windows.engs", flat, int(dset.fs_hz))
    io.write_window_labels(dirpath / "labels.csv", dset.labels)
    manifest = {
        "n_windows": int(n),
        "window_samples": int(width),
        "window_ms": float(dset.window_ms),
        "fs_hz": float(dset.fs_hz),
        "class_names": list(dset.class_names),
        "histogram": [int(c) for c in dset.histogram()],
        "n_dropped_boundary": int(dset.n_dropped_boundary),
    }
    if extra:
        manifest["generation"] = extra
    with open(dirpath / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(dirpath) -> LabeledWindowSet:
    dirpath = Path(dirpath)
    with open(dirpath / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    flat, fs = io.read_recording(dirpath / "windows.engs")
    n = manifest["n_windows"]
    width = manifest["window_samples"]
    contacts = flat.shape[0]
    if flat.shape[1] != n * width:
        raise ValueError(
            f"window blob holds {flat.shape[1]} samples per contact, "
            f"manifest expects {n} x {width}"
        )
    windows = flat.reshape(contacts, n, width).transpose(1, 0, 2)
    labels = io.read_window_labels(dirpath / "labels.csv")
    if labels.size != n:
        raise ValueError(
            f"label sidecar has {labels.size} rows, manifest expects {n}"
        )
    return LabeledWindowSet(
        windows=np.ascontiguousarray(windows, dtype=np.float32),
        labels=labels,
        window_ms=manifest["window_ms"],
        fs_hz=manifest["fs_hz"],
        class_names=tuple(manifest["class_names"]),
        n_dropped_boundary=manifest.get("n_dropped_boundary", 0),
    )


# ---------------------------------------------------------------------------
# Ingestion of external recordings
# ---------------------------------------------------------------------------

def load_recording(path, manifest: dict):
    """Read a recorded signal file against a validating manifest.

    The manifest must carry n_channels, fs_hz, and labels as a list of
    [start_s, end_s, class] entries (class by index or by name from
    ``class_names``, default the four stimulus classes). Unlabelled stretches
    are rest. Returns (MultiChannelSignal, per-sample labels).
    """
    required = {"n_channels", "fs_hz", "labels"}
    missing = required - set(manifest)
    if missing:
        raise ValueError(f"manifest missing keys: {sorted(missing)}")
    data, fs = io.read_recording(path)
    if data.shape[0] != int(manifest["n_channels"]):
        raise ValueError(
            f"file has {data.shape[0]} channels, manifest says "
            f"{manifest['n_channels']}"
        )
    if fs != int(manifest["fs_hz"]):
        raise ValueError(
            f"file sampled at {fs} Hz, manifest says {manifest['fs_hz']}"
        )
    names = tuple(manifest.get("class_names", CLASS_NAMES))
    n_samples = data.shape[1]
    duration = n_samples / fs
    track = np.full(n_samples, REST_LABEL, dtype=np.int64)
    for entry in manifest["labels"]:
        start, end, cls = entry
        if isinstance(cls, str):
            if cls not in names:
                raise ValueError(f"unknown class name {cls!r}")
            cls = names.index(cls)
        cls = int(cls)
        if not 0 <= cls < len(names):
            raise ValueError(f"class index {cls} out of range")
        if start < 0 or end > duration + 1e-9 or end <= start:
            raise ValueError(
                f"label interval [{start}, {end}] outside recording "
                f"of {duration:.3f} s"
            )
        track[int(round(start * fs)):int(round(end * fs))] = cls
    signal = MultiChannelSignal(data=data, fs_hz=float(fs))
    return signal, track
