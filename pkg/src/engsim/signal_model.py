"""Generative model of multi-contact cuff recordings.

A nerve carries N axons, each firing Poisson spike trains in the afferent
(toward the cord) or efferent (toward the periphery) direction. Every spike
deposits a stereotyped extracellular waveform; a cuff with K contacts picks
up a weighted sum of all axonal contributions through a quasi-static
volume-conduction gain, and the recording is corrupted by shared muscle
interference, per-contact thermal noise, and mains pickup.

Conventions: positions are in metres, times in seconds, potentials in volts.
Afferent spikes are rendered time-mirrored around their arrival instant, so
their waveform support precedes the spike time; efferent spikes follow it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

#: Waveform support used for rendering: the kernel has decayed to well under
#: 1% of its peak at 10 decay time constants.
SUPPORT_DECAY_FACTOR = 10.0


# ---------------------------------------------------------------------------
# Spike waveform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpikeParams:
    """Gamma-shaped extracellular spike template A * t^m * exp(-B t)."""

    amplitude: float = 1.0  # A, scales the waveform (V * s^-m)
    decay: float = 3333.0  # B, 1/s; controls spike duration
    order: int = 2  # m, polynomial rise order

    def __post_init__(self):
        if self.decay <= 0:
            raise ValueError(f"decay must be positive, got {self.decay}")
        if not isinstance(self.order, (int, np.integer)) or self.order < 0:
            raise ValueError(f"order must be a non-negative integer, got {self.order!r}")

    @property
    def peak_time_s(self) -> float:
        """Instant of the waveform maximum, m/B."""
        return self.order / self.decay

    @property
    def support_s(self) -> float:
        """Render support; the tail beyond this is treated as zero."""
        return SUPPORT_DECAY_FACTOR / self.decay


def spike_waveform(t, params: SpikeParams) -> np.ndarray:
    """Evaluate the spike template at times ``t`` (seconds); zero for t < 0."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t >= 0
    tp = t[pos]
    out[pos] = params.amplitude * tp**params.order * np.exp(-params.decay * tp)
    return out


def spike_spectrum(f, params: SpikeParams) -> np.ndarray:
    """Continuous-time Fourier transform of the spike template.

    X(f) = m! * A / (B + j 2 pi f)^(m+1)
    """
    f = np.asarray(f, dtype=np.float64)
    denom = (params.decay + 2j * np.pi * f) ** (params.order + 1)
    return math.factorial(params.order) * params.amplitude / denom


# ---------------------------------------------------------------------------
# Spike trains
# ---------------------------------------------------------------------------

def sample_spike_train(
    rate_hz: float, duration_s: float, rng: np.random.Generator
) -> np.ndarray:
    """Homogeneous Poisson arrival times in [0, duration).

    Drawn as cumulative exponential inter-arrival gaps, so the intervals are
    i.i.d. Exp(rate) by construction and the draw is reproducible per
    generator state.
    """
    if rate_hz < 0:
        raise ValueError(f"rate_hz must be non-negative, got {rate_hz}")
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    if rate_hz == 0:
        return np.empty(0, dtype=np.float64)
    times = []
    t = 0.0
    # Draw gaps in blocks to keep the generator call count low.
    block = max(16, int(rate_hz * duration_s * 1.2) + 16)
    while t < duration_s:
        gaps = rng.exponential(1.0 / rate_hz, size=block)
        arrivals = t + np.cumsum(gaps)
        times.append(arrivals)
        t = arrivals[-1]
    all_times = np.concatenate(times)
    return all_times[all_times < duration_s]


# ---------------------------------------------------------------------------
# Geometry and lead field
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CuffGeometry:
    """Ring cuff: ``n_rings`` rings along z, each with equispaced contacts."""

    n_rings: int = 4
    contacts_per_ring: int = 4
    radius_m: float = 0.5e-3
    ring_spacing_m: float = 1.0e-3
    sigma_s_per_m: float = 1.0  # medium conductivity
    flip_polarity: bool = False  # flip the printed (negative) gain sign

    def __post_init__(self):
        if self.n_rings <= 0 or self.contacts_per_ring <= 0:
            raise ValueError("cuff needs at least one ring and one contact per ring")
        if self.radius_m <= 0 or self.ring_spacing_m <= 0:
            raise ValueError("cuff radius and ring spacing must be positive")
        if self.sigma_s_per_m <= 0:
            raise ValueError(f"conductivity must be positive, got {self.sigma_s_per_m}")

    @property
    def n_contacts(self) -> int:
        return self.n_rings * self.contacts_per_ring

    def contact_positions(self) -> np.ndarray:
        """(K, 3) contact coordinates; rings centred on z = 0."""
        z0 = -(self.n_rings - 1) * self.ring_spacing_m / 2.0
        pos = np.empty((self.n_contacts, 3))
        for r in range(self.n_rings):
            for c in range(self.contacts_per_ring):
                theta = 2.0 * np.pi * c / self.contacts_per_ring
                k = r * self.contacts_per_ring + c
                pos[k] = (
                    self.radius_m * np.cos(theta),
                    self.radius_m * np.sin(theta),
                    z0 + r * self.ring_spacing_m,
                )
        return pos


def lead_field(
    contact_pos, axon_pos, sigma_s_per_m: float, flip_polarity: bool = False
) -> float:
    """Volume-conduction gain between one axon and one contact.

    Inverse-square kernel h = -(1 / (4 pi sigma)) / d^2, negative by
    convention; ``flip_polarity`` negates it.
    """
    d = float(np.linalg.norm(np.asarray(contact_pos, float) - np.asarray(axon_pos, float)))
    if d <= 0.0:
        raise ValueError("axon coincides with a contact; lead field is singular")
    h = -1.0 / (4.0 * np.pi * sigma_s_per_m * d * d)
    return -h if flip_polarity else h


@dataclass(frozen=True)
class AxonSource:
    """One axon: where it sits, how it fires, and what its spikes look like."""

    position: tuple[float, float, float]
    spike: SpikeParams = field(default_factory=SpikeParams)
    rate_afferent_hz: float = 0.0
    rate_efferent_hz: float = 0.0
    active: bool = True

    def __post_init__(self):
        if len(self.position) != 3:
            raise ValueError(f"position must be 3-D, got {self.position}")
        if self.rate_afferent_hz < 0 or self.rate_efferent_hz < 0:
            raise ValueError("firing rates must be non-negative")


def build_lead_field_matrix(cuff: CuffGeometry, axons) -> np.ndarray:
    """(K, N) gain matrix; inactive axons get an all-zero column."""
    contacts = cuff.contact_positions()
    h = np.zeros((cuff.n_contacts, len(axons)))
    for n, axon in enumerate(axons):
        if not axon.active:
            continue
        for k in range(cuff.n_contacts):
            h[k, n] = lead_field(
                contacts[k], axon.position, cuff.sigma_s_per_m, cuff.flip_polarity
            )
    return h


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiChannelSignal:
    """A (K, n_samples) recording in volts with its sampling rate."""

    data: np.ndarray
    fs_hz: float

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"data must be (channels, samples), got {self.data.shape}")
        if self.fs_hz <= 0:
            raise ValueError(f"fs_hz must be positive, got {self.fs_hz}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz


def render_spike_train(
    times: np.ndarray,
    params: SpikeParams,
    n_samples: int,
    fs_hz: float,
    mirrored: bool,
) -> np.ndarray:
    """Sum of spike templates on a sample grid.

    ``mirrored=False`` places each waveform after its spike time (efferent);
    ``mirrored=True`` reflects it to precede the spike time (afferent).
    """
    out = np.zeros(n_samples)
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        return out
    support = params.support_s
    n_taps = int(np.floor(support * fs_hz)) + 2
    if mirrored:
        k0 = np.ceil((times - support) * fs_hz).astype(np.int64)
    else:
        k0 = np.ceil(times * fs_hz).astype(np.int64)
    idx = k0[:, None] + np.arange(n_taps)[None, :]
    t_rel = idx / fs_hz - times[:, None]
    if mirrored:
        t_rel = -t_rel
    valid = (idx >= 0) & (idx < n_samples) & (t_rel >= 0.0) & (t_rel <= support)
    if not np.any(valid):
        return out
    flat_idx = idx[valid]
    w = (
        params.amplitude
        * t_rel[valid] ** params.order
        * np.exp(-params.decay * t_rel[valid])
    )
    return np.bincount(flat_idx, weights=w, minlength=n_samples)


def synthesize_from_trains(
    axons,
    cuff: CuffGeometry,
    trains,
    duration_s: float,
    fs_hz: float,
) -> MultiChannelSignal:
    """Clean cuff observation from explicit spike trains.

    ``trains`` holds one ``(afferent_times, efferent_times)`` pair per axon.
    Channel k sees sum_n h[k, n] * (mirrored afferent + forward efferent)
    contributions of axon n.
    """
    if len(trains) != len(axons):
        raise ValueError(f"need one train pair per axon, got {len(trains)} for {len(axons)}")
    n_samples = int(round(duration_s * fs_hz))
    h = build_lead_field_matrix(cuff, axons)
    u = np.zeros((cuff.n_contacts, n_samples))
    for n, (axon, (aff, eff)) in enumerate(zip(axons, trains)):
        if not axon.active:
            continue
        contrib = render_spike_train(aff, axon.spike, n_samples, fs_hz, mirrored=True)
        contrib += render_spike_train(eff, axon.spike, n_samples, fs_hz, mirrored=False)
        u += np.outer(h[:, n], contrib)
    return MultiChannelSignal(data=u, fs_hz=fs_hz)


def sample_scene_trains(axons, duration_s: float, seed):
    """Poisson trains for every axon at its configured rates.

    ``seed`` is an integer or a SeedSequence. Each axon draws from its own
    child generator, so adding or reordering axons elsewhere in a scene does
    not perturb the trains of the others.
    """
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    else:
        root = np.random.SeedSequence(seed)
    children = root.spawn(len(axons))
    trains = []
    for axon, ss in zip(axons, children):
        rng = np.random.default_rng(ss)
        aff = sample_spike_train(axon.rate_afferent_hz, duration_s, rng)
        eff = sample_spike_train(axon.rate_efferent_hz, duration_s, rng)
        trains.append((aff, eff))
    return trains


def synthesize_clean(
    axons, cuff: CuffGeometry, duration_s: float, fs_hz: float, seed: int
) -> MultiChannelSignal:
    """Sample spike trains at the axons' rates and render the clean signal."""
    trains = sample_scene_trains(axons, duration_s, seed)
    return synthesize_from_trains(axons, cuff, trains, duration_s, fs_hz)


# ---------------------------------------------------------------------------
# Distortion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistortionConfig:
    """Additive corruption of the clean observation.

    The muscle interference term is one Gaussian sequence shared by every
    channel; thermal noise is drawn independently per channel; mains pickup
    is a fixed-frequency sine, also common to all channels.
    """

    emg_sigma_v: float = 0.0
    noise_sigma_v: float = 0.0
    line_amp_v: float = 0.0
    line_freq_hz: float = 50.0

    def __post_init__(self):
        if self.emg_sigma_v < 0 or self.noise_sigma_v < 0 or self.line_amp_v < 0:
            raise ValueError("distortion amplitudes must be non-negative")
        if self.line_freq_hz <= 0:
            raise ValueError(f"line_freq_hz must be positive, got {self.line_freq_hz}")


def add_distortion(
    signal: MultiChannelSignal, config: DistortionConfig, seed
) -> MultiChannelSignal:
    """Corrupt a clean observation; deterministic per seed (int or
    SeedSequence)."""
    k, n = signal.data.shape
    if isinstance(seed, np.random.SeedSequence):
        rng = np.random.default_rng(seed)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
    y = signal.data.copy()
    if config.emg_sigma_v > 0:
        y += rng.normal(0.0, config.emg_sigma_v, size=n)[None, :]
    if config.noise_sigma_v > 0:
        y += rng.normal(0.0, config.noise_sigma_v, size=(k, n))
    if config.line_amp_v > 0:
        t = np.arange(n) / signal.fs_hz
        y += (config.line_amp_v * np.sin(2.0 * np.pi * config.line_freq_hz * t))[None, :]
    return MultiChannelSignal(data=y, fs_hz=signal.fs_hz)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def signal_rms(signal: MultiChannelSignal) -> float:
    """Root-mean-square over all channels and samples, volts."""
    return float(np.sqrt(np.mean(signal.data**2)))


def calibrate_amplitudes(
    axons,
    cuff: CuffGeometry,
    target_rms_v: float,
    duration_s: float = 2.0,
    fs_hz: float = 30000.0,
    seed: int = 0,
):
    """Rescale every axon's spike amplitude to hit a target clean-signal RMS.

    Returns ``(scaled_axons, scale)``. The observation is linear in the
    amplitudes, so a single probe synthesis determines the exact factor.
    """
    if target_rms_v <= 0:
        raise ValueError(f"target_rms_v must be positive, got {target_rms_v}")
    probe = synthesize_clean(axons, cuff, duration_s, fs_hz, seed)
    current = signal_rms(probe)
    if current == 0.0:
        raise ValueError("probe synthesis produced a silent scene; cannot calibrate")
    scale = target_rms_v / current
    scaled = [
        replace(axon, spike=replace(axon.spike, amplitude=axon.spike.amplitude * scale))
        for axon in axons
    ]
    return scaled, scale
