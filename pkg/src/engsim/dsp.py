"""Preprocessing: band-pass, decimation, blanking, and windowing.

The canonical chain runs in a fixed order: optional mains notch, causal
Butterworth band-pass at the native rate, integer decimation to the target
rate, artifact blanking by absolute threshold, then segmentation into
non-overlapping windows. Filters are applied causally (no zero-phase
trickery), matching what an implant could do on streaming data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal as sps

from .signal_model import MultiChannelSignal

#: Default artifact blanking threshold, volts.
DEFAULT_THRESHOLD_V = 30e-6


@dataclass(frozen=True)
class BandpassSpec:
    """Butterworth band-pass specification.

    ``order`` is the prototype order: each band edge rolls off like an
    ``order``-th order Butterworth skirt, and the realization cascades
    ``order`` biquad sections.
    """

    f_low_hz: float = 800.0
    f_high_hz: float = 2500.0
    order: int = 8
    fs_hz: float = 30000.0

    def __post_init__(self):
        if not 0 < self.f_low_hz < self.f_high_hz:
            raise ValueError(
                f"need 0 < f_low < f_high, got ({self.f_low_hz}, {self.f_high_hz})"
            )
        if self.f_high_hz >= self.fs_hz / 2:
            raise ValueError(
                f"f_high {self.f_high_hz} Hz exceeds Nyquist for fs {self.fs_hz} Hz"
            )
        if self.order <= 0 or self.order % 2 != 0:
            raise ValueError(f"order must be a positive even integer, got {self.order}")


class BandpassFilter:
    """Designed band-pass: a cascade of second-order sections plus its rate."""

    def __init__(self, spec: BandpassSpec):
        self.spec = spec
        self.sos = sps.butter(
            spec.order,
            [spec.f_low_hz, spec.f_high_hz],
            btype="bandpass",
            fs=spec.fs_hz,
            output="sos",
        )

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    def apply(self, signal: MultiChannelSignal) -> MultiChannelSignal:
        """Causal filtering along time; output length equals input length."""
        if signal.fs_hz != self.spec.fs_hz:
            raise ValueError(
                f"filter designed for {self.spec.fs_hz} Hz, signal is {signal.fs_hz} Hz"
            )
        out = sps.sosfilt(self.sos, signal.data, axis=-1)
        return MultiChannelSignal(data=out, fs_hz=signal.fs_hz)


def design_bandpass(spec: BandpassSpec) -> BandpassFilter:
    return BandpassFilter(spec)


def design_notch(f0_hz: float, fs_hz: float, q: float = 30.0) -> np.ndarray:
    """Second-order mains notch as one SOS row."""
    if not 0 < f0_hz < fs_hz / 2:
        raise ValueError(f"notch frequency {f0_hz} Hz outside (0, Nyquist)")
    b, a = sps.iirnotch(f0_hz, q, fs=fs_hz)
    return np.hstack([b, a])[None, :]


def apply_sos(sos: np.ndarray, signal: MultiChannelSignal) -> MultiChannelSignal:
    out = sps.sosfilt(sos, signal.data, axis=-1)
    return MultiChannelSignal(data=out, fs_hz=signal.fs_hz)


def downsample(signal: MultiChannelSignal, target_fs_hz: float) -> MultiChannelSignal:
    """Keep every (fs/target)-th sample; the ratio must be an integer.

    No additional anti-alias filter is applied; the band-pass ahead of this
    step is assumed to have limited the content to below the new Nyquist.
    """
    ratio = signal.fs_hz / target_fs_hz
    step = int(round(ratio))
    if step < 1 or abs(ratio - step) > 1e-9:
        raise ValueError(
            f"fs ratio {signal.fs_hz}/{target_fs_hz} = {ratio} is not a positive integer"
        )
    return MultiChannelSignal(data=signal.data[:, ::step].copy(), fs_hz=target_fs_hz)


def threshold_clip(
    signal: MultiChannelSignal, v_max: float = DEFAULT_THRESHOLD_V
) -> tuple[MultiChannelSignal, int]:
    """Zero out samples with |x| > v_max. Returns the cleaned signal and count."""
    if v_max <= 0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    mask = np.abs(signal.data) > v_max
    out = signal.data.copy()
    out[mask] = 0.0
    return MultiChannelSignal(data=out, fs_hz=signal.fs_hz), int(mask.sum())


@dataclass
class WindowSet:
    """Non-overlapping windows cut from one recording.

    ``windows`` is (n, K, W). When a label track was attached, ``labels``
    holds one id per kept window and ``n_dropped_boundary`` counts windows
    discarded for straddling a label change.
    """

    windows: np.ndarray
    window_ms: float
    fs_hz: float
    labels: Optional[np.ndarray] = None
    n_dropped_boundary: int = 0

    def __post_init__(self):
        if self.windows.ndim != 3:
            raise ValueError(f"windows must be (n, K, W), got {self.windows.shape}")
        if self.labels is not None and len(self.labels) != len(self.windows):
            raise ValueError(
                f"{len(self.labels)} labels for {len(self.windows)} windows"
            )

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def window_samples(self) -> int:
        return self.windows.shape[2]


def make_windows(
    signal: MultiChannelSignal,
    window_ms: float,
    labels: Optional[np.ndarray] = None,
) -> WindowSet:
    """Cut the recording into non-overlapping windows, discarding the tail.

    With a per-sample label track, only windows with a uniform label are
    kept; mixed windows are dropped and counted.
    """
    w = int(round(window_ms * 1e-3 * signal.fs_hz))
    if w <= 0:
        raise ValueError(f"window of {window_ms} ms is empty at {signal.fs_hz} Hz")
    if w > signal.n_samples:
        raise ValueError(
            f"window of {w} samples longer than signal ({signal.n_samples})"
        )
    n = signal.n_samples // w
    stack = (
        signal.data[:, : n * w].reshape(signal.n_channels, n, w).transpose(1, 0, 2)
    )
    if labels is None:
        return WindowSet(np.ascontiguousarray(stack), window_ms, signal.fs_hz)
    labels = np.asarray(labels)
    if labels.shape != (signal.n_samples,):
        raise ValueError(
            f"label track shape {labels.shape} does not match {signal.n_samples} samples"
        )
    lab_w = labels[: n * w].reshape(n, w)
    uniform = np.all(lab_w == lab_w[:, :1], axis=1)
    kept = np.ascontiguousarray(stack[uniform])
    return WindowSet(
        windows=kept,
        window_ms=window_ms,
        fs_hz=signal.fs_hz,
        labels=lab_w[uniform, 0].astype(np.int64),
        n_dropped_boundary=int((~uniform).sum()),
    )


@dataclass(frozen=True)
class PreprocessConfig:
    """Parameters of the canonical preprocessing chain."""

    f_low_hz: float = 800.0
    f_high_hz: float = 2500.0
    filter_order: int = 8
    target_fs_hz: float = 5000.0
    threshold_v: float = DEFAULT_THRESHOLD_V
    notch_enabled: bool = False
    notch_freq_hz: float = 50.0
    notch_q: float = 30.0


@dataclass(frozen=True)
class ChainReport:
    n_clipped: int
    n_dropped_boundary: int
    n_windows: int


def preprocess(
    signal: MultiChannelSignal,
    window_ms: float,
    config: PreprocessConfig = PreprocessConfig(),
    labels: Optional[np.ndarray] = None,
) -> tuple[WindowSet, ChainReport]:
    """Run the full chain: [notch] -> band-pass -> decimate -> blank -> window.

    The label track, when given, is sampled at the input rate and decimated
    with the same step as the data so window labels stay aligned.
    """
    work = signal
    if config.notch_enabled:
        work = apply_sos(design_notch(config.notch_freq_hz, work.fs_hz, config.notch_q), work)
    bp = design_bandpass(
        BandpassSpec(
            f_low_hz=config.f_low_hz,
            f_high_hz=config.f_high_hz,
            order=config.filter_order,
            fs_hz=work.fs_hz,
        )
    )
    work = bp.apply(work)
    step = int(round(signal.fs_hz / config.target_fs_hz))
    work = downsample(work, config.target_fs_hz)
    if labels is not None:
        labels = np.asarray(labels)[::step]
    work, n_clipped = threshold_clip(work, config.threshold_v)
    windows = make_windows(work, window_ms, labels)
    report = ChainReport(
        n_clipped=n_clipped,
        n_dropped_boundary=windows.n_dropped_boundary,
        n_windows=windows.n_windows,
    )
    return windows, report
