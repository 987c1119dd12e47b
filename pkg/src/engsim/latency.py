"""Round-trip latency budgeting for a decode-and-stimulate loop.

The loop timeline is: acquire, fill one observation window, uplink the raw
payload over the radio, classify, decode/decide, stimulate. The budget treats
each stage as a scalar delay in seconds and asks whether the sum stays under
the actuation deadline, and how much of the deadline is left for the
classifier once everything else is accounted for.
"""

from __future__ import annotations

from dataclasses import dataclass

#: Default radio throughput, bit/s.
DEFAULT_RATE_BPS = 1.4e6
#: Default ADC resolution, bits per sample.
DEFAULT_BITS_PER_SAMPLE = 10
#: Hard deadline for the full feed-forward path, seconds.
DEFAULT_DEADLINE_S = 0.300

SUPPORTED_WINDOWS_MS = (50, 100, 200, 500)


@dataclass(frozen=True)
class LinkBudget:
    """Uplink parameters: what gets sent, and how fast."""

    fs_hz: float = 5000.0
    n_channels: int = 16
    bits_per_sample: int = DEFAULT_BITS_PER_SAMPLE
    rate_bps: float = DEFAULT_RATE_BPS
    compression_ratio: float = 1.0  # payload multiplier; 1.0 = uncompressed

    def __post_init__(self):
        if self.fs_hz <= 0:
            raise ValueError(f"fs_hz must be positive, got {self.fs_hz}")
        if self.n_channels <= 0:
            raise ValueError(f"n_channels must be positive, got {self.n_channels}")
        if self.bits_per_sample <= 0:
            raise ValueError(f"bits_per_sample must be positive, got {self.bits_per_sample}")
        if self.rate_bps <= 0:
            raise ValueError(f"rate_bps must be positive, got {self.rate_bps}")
        if not 0.0 < self.compression_ratio <= 1.0:
            raise ValueError(
                f"compression_ratio must be in (0, 1], got {self.compression_ratio}"
            )


@dataclass(frozen=True)
class StageTimes:
    """Fixed per-stage delays of the loop, seconds."""

    t_acquire_s: float = 0.0
    t_decode_s: float = 0.002
    t_stimulate_s: float = 0.020
    deadline_s: float = DEFAULT_DEADLINE_S

    def __post_init__(self):
        for name in ("t_acquire_s", "t_decode_s", "t_stimulate_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.deadline_s <= 0:
            raise ValueError(f"deadline_s must be positive, got {self.deadline_s}")


def payload_bits(link: LinkBudget, window_s: float) -> float:
    """Bits accumulated in one observation window across all channels."""
    if window_s <= 0:
        raise ValueError(f"window_s must be positive, got {window_s}")
    return (
        link.fs_hz
        * link.n_channels
        * window_s
        * link.bits_per_sample
        * link.compression_ratio
    )


def uplink_time(link: LinkBudget, window_s: float) -> float:
    """Time to push one window's payload through the radio, seconds."""
    return payload_bits(link, window_s) / link.rate_bps


def feedforward_time(
    stages: StageTimes, window_s: float, t_uplink_s: float, t_classify_s: float
) -> float:
    """Total acquisition-to-stimulation delay for one decision, seconds."""
    if window_s <= 0:
        raise ValueError(f"window_s must be positive, got {window_s}")
    if t_uplink_s < 0 or t_classify_s < 0:
        raise ValueError("stage times must be non-negative")
    return (
        stages.t_acquire_s
        + window_s
        + t_uplink_s
        + t_classify_s
        + stages.t_decode_s
        + stages.t_stimulate_s
    )


def residual_latency(stages: StageTimes, link: LinkBudget, window_s: float) -> float:
    """Deadline headroom left for the classifier at a given window, seconds.

    Negative values mean the window is infeasible before classification even
    starts.
    """
    fixed = (
        stages.t_acquire_s
        + window_s
        + uplink_time(link, window_s)
        + stages.t_decode_s
        + stages.t_stimulate_s
    )
    return stages.deadline_s - fixed


@dataclass(frozen=True)
class FeasibilityRow:
    window_ms: float
    classifier: str
    t_uplink_s: float
    residual_s: float
    t_classify_s: float
    t_total_s: float
    feasible: bool


def feasibility_report(
    windows_ms,
    classify_times_s: dict[str, float],
    link: LinkBudget = LinkBudget(),
    stages: StageTimes = StageTimes(),
) -> list[FeasibilityRow]:
    """Cross every window size with every measured classifier time.

    A row is feasible when the full feed-forward time meets the deadline,
    which is equivalent to the classifier fitting inside the residual.
    """
    rows = []
    for w_ms in windows_ms:
        w_s = w_ms / 1000.0
        t_u = uplink_time(link, w_s)
        resid = residual_latency(stages, link, w_s)
        for name, t_c in classify_times_s.items():
            if t_c < 0:
                raise ValueError(f"negative classify time for {name}")
            total = feedforward_time(stages, w_s, t_u, t_c)
            rows.append(
                FeasibilityRow(
                    window_ms=float(w_ms),
                    classifier=name,
                    t_uplink_s=t_u,
                    residual_s=resid,
                    t_classify_s=t_c,
                    t_total_s=total,
                    feasible=bool(total <= stages.deadline_s),
                )
            )
    return rows


def default_uplink_table(
    windows_ms=SUPPORTED_WINDOWS_MS, link: LinkBudget = LinkBudget()
) -> dict[int, float]:
    """Uplink times in ms, keyed by window size in ms, for the default link."""
    return {int(w): uplink_time(link, w / 1000.0) * 1000.0 for w in windows_ms}
