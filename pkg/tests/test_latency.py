import numpy as np
import pytest

from engsim.latency import (
    FeasibilityRow,
    LinkBudget,
    StageTimes,
    SUPPORTED_WINDOWS_MS,
    default_uplink_table,
    feasibility_report,
    feedforward_time,
    payload_bits,
    residual_latency,
    uplink_time,
)


def test_payload_bits_hand_computed():
    link = LinkBudget()
    # 5000 samples/s * 16 channels * 0.1 s * 10 bit
    assert payload_bits(link, 0.1) == 80_000.0
    assert payload_bits(link, 1.0) == 800_000.0


def test_payload_rejects_nonpositive_window():
    with pytest.raises(ValueError):
        payload_bits(LinkBudget(), 0.0)


def test_uplink_times_match_hand_values():
    link = LinkBudget()
    # 800 kbit over 1.4 Mbit/s etc., worked out by hand to two decimals.
    for window_s, expect_ms in [
        (1.0, 571.43),
        (0.05, 28.57),
        (0.1, 57.14),
        (0.2, 114.29),
        (0.5, 285.71),
    ]:
        got_ms = uplink_time(link, window_s) * 1000.0
        assert abs(got_ms - expect_ms) < 0.005, (window_s, got_ms)


def test_default_uplink_table_nearest_ms():
    table = default_uplink_table()
    assert set(table) == set(SUPPORTED_WINDOWS_MS)
    rounded = {w: round(t) for w, t in table.items()}
    assert rounded == {50: 29, 100: 57, 200: 114, 500: 286}


def test_residual_latency_values_and_signs():
    link, stages = LinkBudget(), StageTimes()
    expected_ms = {0.05: 199.43, 0.1: 120.86, 0.2: -36.29, 0.5: -507.71}
    for window_s, expect in expected_ms.items():
        got = residual_latency(stages, link, window_s) * 1000.0
        assert abs(got - expect) < 0.005, (window_s, got)
    assert residual_latency(stages, link, 0.05) > 0
    assert residual_latency(stages, link, 0.1) > 0
    assert residual_latency(stages, link, 0.2) < 0
    assert residual_latency(stages, link, 0.5) < 0


def test_feedforward_time_is_stage_sum():
    stages = StageTimes(t_acquire_s=0.001, t_decode_s=0.002, t_stimulate_s=0.02)
    total = feedforward_time(stages, 0.1, t_uplink_s=0.057, t_classify_s=0.004)
    assert total == pytest.approx(0.001 + 0.1 + 0.057 + 0.004 + 0.002 + 0.02)


def test_residual_is_deadline_minus_everything_but_classify():
    link, stages = LinkBudget(), StageTimes()
    w = 0.1
    resid = residual_latency(stages, link, w)
    total = feedforward_time(stages, w, uplink_time(link, w), resid)
    assert total == pytest.approx(stages.deadline_s)


def test_feasibility_threshold():
    link, stages = LinkBudget(), StageTimes()
    resid = residual_latency(stages, link, 0.1)
    rows = feasibility_report(
        [100],
        {"fits": resid * 0.999, "close": resid - 1e-9, "over": resid + 1e-3},
        link, stages,
    )
    verdicts = {r.classifier: r.feasible for r in rows}
    assert verdicts == {"fits": True, "close": True, "over": False}
    for r in rows:
        assert isinstance(r, FeasibilityRow)
        assert r.window_ms == 100.0
        assert r.t_total_s == pytest.approx(
            stages.deadline_s - resid + r.t_classify_s
        )


def test_feasibility_full_grid_shape():
    rows = feasibility_report(SUPPORTED_WINDOWS_MS, {"a": 1e-3, "b": 2e-3})
    assert len(rows) == len(SUPPORTED_WINDOWS_MS) * 2
    # every window over 142.something ms is infeasible regardless of model
    for r in rows:
        if r.window_ms >= 200:
            assert not r.feasible


def test_compression_scales_payload():
    full = LinkBudget()
    half = LinkBudget(compression_ratio=0.5)
    assert payload_bits(half, 0.1) == pytest.approx(0.5 * payload_bits(full, 0.1))
    assert uplink_time(half, 0.1) == pytest.approx(0.5 * uplink_time(full, 0.1))


def test_validation_errors():
    with pytest.raises(ValueError):
        LinkBudget(rate_bps=0)
    with pytest.raises(ValueError):
        LinkBudget(compression_ratio=0.0)
    with pytest.raises(ValueError):
        LinkBudget(compression_ratio=1.5)
    with pytest.raises(ValueError):
        StageTimes(t_decode_s=-1e-3)
    with pytest.raises(ValueError):
        StageTimes(deadline_s=0.0)
    with pytest.raises(ValueError):
        feasibility_report([100], {"m": -1.0})


def test_uplink_grows_linearly_with_channels_and_bits():
    base = uplink_time(LinkBudget(), 0.1)
    assert uplink_time(LinkBudget(n_channels=32), 0.1) == pytest.approx(2 * base)
    assert uplink_time(LinkBudget(bits_per_sample=20), 0.1) == pytest.approx(2 * base)
    assert uplink_time(LinkBudget(rate_bps=2.8e6), 0.1) == pytest.approx(base / 2)


def test_residual_monotone_in_window():
    link, stages = LinkBudget(), StageTimes()
    windows = np.linspace(0.01, 0.5, 25)
    resid = [residual_latency(stages, link, w) for w in windows]
    assert all(a > b for a, b in zip(resid, resid[1:]))
