import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from oracles import (
    conv2d_reference,
    depthwise_conv2d_reference,
    relative_error,
)

from engsim.nn import (
    AvgPool,
    BatchNorm,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    ELU,
    Flatten,
    FrameSplit,
    InceptionModule,
    LSTMLayer,
    MaxPool,
    ReLU,
    ResidualBlock,
    SeparableConv2d,
    SlidingMaxPool,
    Softmax,
    TwinConvAdd,
    lstm_cell,
)


def _built(layer, in_shape, seed=0, dtype=np.float64):
    layer.build(in_shape, dtype, np.random.default_rng(seed))
    return layer


# ---------------------------------------------------------------------------
# Convolutions against the brute-force oracle
# ---------------------------------------------------------------------------

def test_conv2d_matches_reference_on_many_random_shapes():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 50:
        c = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        h = int(rng.integers(1, 6))
        w = int(rng.integers(1, 13))
        f = int(rng.integers(1, 5))
        padding = "same" if rng.random() < 0.5 else "valid"
        # exercise every dispatch path: pointwise, time-only, contact-only,
        # and fully 2-D kernels
        kind = rng.integers(0, 4)
        if kind == 0:
            depth, length = 1, 1
        elif kind == 1:
            depth, length = 1, int(rng.integers(1, 14))
        elif kind == 2:
            depth, length = int(rng.integers(1, 7)), 1
        else:
            depth, length = int(rng.integers(1, 7)), int(rng.integers(1, 14))
        if padding == "valid" and (depth > h or length > w):
            continue
        bias = bool(rng.integers(0, 2))
        layer = Conv2d(f, (depth, length), padding=padding, bias=bias)
        _built(layer, ("maps", c, h, w), seed=int(rng.integers(1 << 31)))
        x = rng.normal(size=(c, n, h, w))
        got = layer.forward(x)
        kernel = layer.parameters()[0].value
        b = layer.parameters()[1].value if bias else None
        want = conv2d_reference(x, kernel, b, padding)
        err = relative_error(got, want)
        assert err < 1e-6, (c, n, h, w, f, depth, length, padding, err)
        checked += 1
    assert checked == 50


def test_depthwise_conv_matches_reference():
    rng = np.random.default_rng(77)
    for _ in range(12):
        c = int(rng.integers(1, 4))
        n = int(rng.integers(1, 3))
        h = int(rng.integers(2, 7))
        w = int(rng.integers(1, 9))
        mult = int(rng.integers(1, 4))
        depth = int(rng.integers(1, h + 1))
        padding = "same" if rng.random() < 0.5 else "valid"
        bias = bool(rng.integers(0, 2))
        layer = DepthwiseConv2d(
            (depth, 1), depth_multiplier=mult, padding=padding, bias=bias
        )
        _built(layer, ("maps", c, h, w), seed=int(rng.integers(1 << 31)))
        x = rng.normal(size=(c, n, h, w))
        got = layer.forward(x)
        kernel = layer.parameters()[0].value
        b = layer.parameters()[1].value if bias else None
        want = depthwise_conv2d_reference(x, kernel, b, padding)
        assert relative_error(got, want) < 1e-6


def test_conv2d_same_padding_allows_kernel_longer_than_input():
    layer = Conv2d(2, (1, 9), padding="same")
    _built(layer, ("maps", 1, 3, 7))
    x = np.random.default_rng(0).normal(size=(1, 2, 3, 7))
    got = layer.forward(x)
    assert got.shape == (2, 2, 3, 7)
    want = conv2d_reference(x, layer.parameters()[0].value,
                            layer.parameters()[1].value, "same")
    assert relative_error(got, want) < 1e-6


def test_conv2d_valid_padding_rejects_oversized_kernel():
    layer = Conv2d(2, (1, 9), padding="valid")
    with pytest.raises(ValueError):
        _built(layer, ("maps", 1, 3, 7))


def test_separable_conv_is_depthwise_then_pointwise():
    rng = np.random.default_rng(5)
    layer = SeparableConv2d(4, (3, 1), depth_multiplier=2, padding="valid")
    _built(layer, ("maps", 2, 5, 6), seed=3)
    x = rng.normal(size=(2, 2, 5, 6))
    got = layer.forward(x)
    params = {p.name: p.value for p in layer.parameters()}
    assert set(params) == {
        "depthwise.kernel", "pointwise.kernel", "pointwise.bias"
    }
    mid = depthwise_conv2d_reference(x, params["depthwise.kernel"], None, "valid")
    want = conv2d_reference(
        mid, params["pointwise.kernel"], params["pointwise.bias"], "valid"
    )
    assert relative_error(got, want) < 1e-6
    assert got.shape == (4, 2, 3, 6)


# ---------------------------------------------------------------------------
# Pointwise nonlinearities
# ---------------------------------------------------------------------------

def test_relu_clamps_negatives():
    layer = _built(ReLU(), ("maps", 1, 2, 3))
    x = np.array([[[[-1.0, 0.0, 2.0], [3.0, -4.0, 5.0]]]])
    out = layer.forward(x)
    assert_array_equal(out, np.maximum(x, 0.0))
    dy = np.ones_like(x)
    dx = layer.backward(dy)
    assert_array_equal(dx, (x > 0).astype(float))


def test_elu_printed_form_has_knee_at_one():
    layer = _built(ELU(alpha=1.0), ("vec", 4))
    x = np.array([[2.0, 1.0, 0.5, -1.0]])
    out = layer.forward(x)
    assert out[0, 0] == 2.0
    assert out[0, 1] == 1.0
    assert out[0, 2] == pytest.approx(np.expm1(0.5))
    assert out[0, 3] == pytest.approx(np.expm1(-1.0))


def test_elu_conventional_form_has_knee_at_zero():
    layer = _built(ELU(alpha=1.0, conventional=True), ("vec", 4))
    x = np.array([[2.0, 0.5, 0.0, -1.0]])
    out = layer.forward(x)
    assert out[0, 0] == 2.0
    assert out[0, 1] == 0.5
    assert out[0, 2] == 0.0
    assert out[0, 3] == pytest.approx(np.expm1(-1.0))


def test_elu_gradient_branches():
    layer = _built(ELU(alpha=1.0, conventional=True), ("vec", 2))
    x = np.array([[3.0, -0.5]])
    out = layer.forward(x)
    dx = layer.backward(np.ones_like(x))
    assert dx[0, 0] == 1.0
    # d/dx alpha(e^x - 1) = alpha e^x = out + alpha on the low branch
    assert dx[0, 1] == pytest.approx(out[0, 1] + 1.0)


def test_softmax_rows_sum_to_one_and_shift_invariance():
    layer = _built(Softmax(), ("vec", 4))
    rng = np.random.default_rng(8)
    x = rng.normal(scale=3.0, size=(6, 4))
    p = layer.forward(x)
    assert_allclose(p.sum(axis=1), np.ones(6), rtol=1e-12)
    assert np.all(p > 0)
    p_shift = layer.forward(x + 100.0)
    assert_allclose(p_shift, p, rtol=1e-9)
    # two-logit hand value
    p2 = _built(Softmax(), ("vec", 2)).forward(np.array([[0.0, np.log(3.0)]]))
    assert_allclose(p2, [[0.25, 0.75]], rtol=1e-12)


# ---------------------------------------------------------------------------
# Normalization and regularization
# ---------------------------------------------------------------------------

def test_batchnorm_normalizes_per_map_in_training():
    layer = _built(BatchNorm(), ("maps", 3, 4, 5))
    rng = np.random.default_rng(1)
    x = rng.normal(loc=2.0, scale=4.0, size=(3, 8, 4, 5))
    out = layer.forward(x, training=True)
    means = out.mean(axis=(1, 2, 3))
    stds = out.std(axis=(1, 2, 3))
    assert_allclose(means, np.zeros(3), atol=1e-10)
    assert_allclose(stds, np.ones(3), rtol=1e-3)


def test_batchnorm_running_stats_feed_eval_mode():
    layer = _built(BatchNorm(momentum=0.5), ("maps", 1, 1, 2))
    x = np.array([[[[2.0, 4.0]], [[6.0, 8.0]]]]).reshape(1, 2, 1, 2)
    layer.forward(x, training=True)
    buffers = layer.buffers()
    # one update at momentum 0.5 moves halfway from (0, 1) to batch stats
    assert buffers["running_mean"][0] == pytest.approx(0.5 * x.mean())
    assert buffers["running_var"][0] == pytest.approx(
        0.5 * 1.0 + 0.5 * x.var()
    )
    out = layer.forward(x, training=False)
    expect = (x - buffers["running_mean"]) / np.sqrt(
        buffers["running_var"] + layer.eps
    )
    assert_allclose(out, expect, rtol=1e-12)


def test_batchnorm_rejects_vector_input():
    with pytest.raises(ValueError):
        _built(BatchNorm(), ("vec", 3))


def test_dropout_train_scales_and_eval_passes_through():
    layer = _built(Dropout(0.5), ("maps", 2, 4, 50), seed=3)
    x = np.ones((2, 3, 4, 50))
    out = layer.forward(x, training=True)
    kept = out != 0
    assert set(np.unique(out)) <= {0.0, 2.0}  # 1 / (1 - rate) scaling
    frac = kept.mean()
    assert 0.4 < frac < 0.6
    assert_array_equal(layer.forward(x, training=False), x)


def test_dropout_backward_uses_same_mask():
    layer = _built(Dropout(0.5), ("vec", 2000), seed=4)
    x = np.ones((1, 2000))
    out = layer.forward(x, training=True)
    dx = layer.backward(np.ones_like(x))
    assert_array_equal(dx, out)  # same mask, same scale on unit input


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        Dropout(1.0)
    with pytest.raises(ValueError):
        Dropout(-0.1)


# ---------------------------------------------------------------------------
# Pooling and shape plumbing
# ---------------------------------------------------------------------------

def test_maxpool_halves_time_and_routes_gradient_to_argmax():
    layer = _built(MaxPool(2), ("maps", 1, 1, 6))
    x = np.array([[[[1.0, 5.0, 2.0, 2.0, -3.0, -1.0]]]])
    out = layer.forward(x)
    assert_array_equal(out, [[[[5.0, 2.0, -1.0]]]])
    dx = layer.backward(np.array([[[[10.0, 20.0, 30.0]]]]))
    assert_array_equal(dx, [[[[0.0, 10.0, 20.0, 0.0, 0.0, 30.0]]]])


def test_maxpool_drops_odd_tail():
    layer = _built(MaxPool(2), ("maps", 1, 1, 7))
    x = np.arange(7.0).reshape(1, 1, 1, 7)
    out = layer.forward(x)
    assert out.shape == (1, 1, 1, 3)
    assert_array_equal(out[0, 0, 0], [1.0, 3.0, 5.0])
    dx = layer.backward(np.ones((1, 1, 1, 3)))
    assert dx[0, 0, 0, 6] == 0.0  # dropped tail gets no gradient


def test_sliding_maxpool_is_stride_one_same_length():
    layer = _built(SlidingMaxPool(3), ("maps", 1, 1, 5))
    x = np.array([[[[3.0, 1.0, 4.0, 1.0, 5.0]]]])
    out = layer.forward(x)
    assert out.shape == x.shape
    # centered window of three with edge padding by -inf
    assert_array_equal(out[0, 0, 0], [3.0, 4.0, 4.0, 5.0, 5.0])


def test_sliding_maxpool_backward_accumulates_ties():
    layer = _built(SlidingMaxPool(3), ("maps", 1, 1, 3))
    x = np.array([[[[1.0, 9.0, 2.0]]]])
    out = layer.forward(x)
    assert_array_equal(out[0, 0, 0], [9.0, 9.0, 9.0])
    dx = layer.backward(np.ones_like(out))
    # the middle sample wins all three windows
    assert_array_equal(dx[0, 0, 0], [0.0, 3.0, 0.0])


def test_avgpool_means_and_spreads_gradient():
    layer = _built(AvgPool(5), ("maps", 1, 1, 11))
    x = np.arange(11.0).reshape(1, 1, 1, 11)
    out = layer.forward(x)
    assert out.shape == (1, 1, 1, 2)
    assert_array_equal(out[0, 0, 0], [2.0, 7.0])
    dx = layer.backward(np.array([[[[5.0, 10.0]]]]))
    assert_allclose(dx[0, 0, 0, :5], np.full(5, 1.0))
    assert_allclose(dx[0, 0, 0, 5:10], np.full(5, 2.0))
    assert dx[0, 0, 0, 10] == 0.0


def test_flatten_orders_batch_first():
    layer = _built(Flatten(), ("maps", 2, 3, 4))
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 3, 4))
    out = layer.forward(x)
    assert out.shape == (5, 24)
    assert_array_equal(out[1], x[:, 1, :, :].ravel())
    back = layer.backward(out)
    assert_array_equal(back, x)


def test_frame_split_layout_and_tail():
    layer = _built(FrameSplit(3), ("maps", 1, 2, 7))
    x = np.arange(14.0).reshape(1, 1, 2, 7)
    seq = layer.forward(x)
    assert seq.shape == (2, 1, 6)
    # frame 0 is columns 0..2 of both contacts, contact-major
    assert_array_equal(seq[0, 0], [0.0, 1.0, 2.0, 7.0, 8.0, 9.0])
    assert_array_equal(seq[1, 0], [3.0, 4.0, 5.0, 10.0, 11.0, 12.0])
    dx = layer.backward(np.ones_like(seq))
    assert dx[0, 0, 0, 6] == 0.0  # dropped remainder
    assert dx[0, 0, 0, 0] == 1.0


# ---------------------------------------------------------------------------
# Dense and recurrent pieces
# ---------------------------------------------------------------------------

def test_dense_affine_map():
    layer = _built(Dense(3), ("vec", 4), seed=1)
    params = {p.name: p.value for p in layer.parameters()}
    x = np.random.default_rng(2).normal(size=(5, 4))
    out = layer.forward(x)
    assert_allclose(out, x @ params["weight"] + params["bias"], rtol=1e-12)
    assert layer.param_count() == 4 * 3 + 3


def test_lstm_cell_hand_checked():
    # all-zero weights: gates sigmoid(0)=0.5, g=tanh(0)=0 -> c = 0.5*c_prev
    hidden = 3
    x = np.ones((2, 4))
    h0 = np.zeros((2, hidden))
    c0 = np.full((2, hidden), 2.0)
    wx = np.zeros((4, 4 * hidden))
    wh = np.zeros((hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    h, c, _cache = lstm_cell(x, h0, c0, wx, wh, b)
    assert_allclose(c, np.full((2, hidden), 1.0), rtol=1e-12)
    assert_allclose(h, 0.5 * np.tanh(1.0) * np.ones((2, hidden)), rtol=1e-12)


def test_lstm_layer_shapes_and_determinism():
    seq_layer = _built(LSTMLayer(8, return_sequences=True), ("seq", 5, 6), seed=3)
    last_layer = _built(LSTMLayer(8), ("seq", 5, 6), seed=3)
    x = np.random.default_rng(4).normal(size=(5, 2, 6))
    seq = seq_layer.forward(x)
    last = last_layer.forward(x)
    assert seq.shape == (5, 2, 8)
    assert last.shape == (2, 8)
    assert_allclose(last, seq[-1], rtol=1e-12)
    assert seq_layer.param_count() == (6 + 8) * 4 * 8 + 4 * 8


# ---------------------------------------------------------------------------
# Composite wiring
# ---------------------------------------------------------------------------

def test_twin_conv_add_sums_branches():
    twin = TwinConvAdd(
        Conv2d(4, (1, 3), padding="same"),
        Conv2d(4, (2, 1), padding="same"),
    )
    _built(twin, ("maps", 2, 3, 6), seed=5)
    x = np.random.default_rng(6).normal(size=(2, 2, 3, 6))
    out = twin.forward(x)
    a = twin.branch_a.forward(x)
    b = twin.branch_b.forward(x)
    assert_allclose(out, a + b, rtol=1e-12)
    names = [p.name for p in twin.parameters()]
    assert all(n.startswith(("a.", "b.")) for n in names)


def test_residual_block_identity_skip_is_live():
    inner = [Conv2d(2, (1, 3), padding="same"), ReLU()]
    block = ResidualBlock(inner)
    _built(block, ("maps", 2, 1, 6), seed=7)
    x = np.random.default_rng(8).normal(size=(2, 3, 1, 6))
    out = block.forward(x)
    # silence the residual chain: output must fall back to the skip path
    for p in block.parameters():
        p.value[...] = 0.0
    assert_allclose(block.forward(x), x, rtol=1e-12)
    assert not np.allclose(out, x)


def test_residual_block_projection_skip_is_live():
    block = ResidualBlock(
        [Conv2d(3, (2, 1), padding="valid"), ReLU()],
        shortcut=Conv2d(3, (2, 1), padding="valid"),
    )
    _built(block, ("maps", 1, 2, 5), seed=9)
    x = np.random.default_rng(10).normal(size=(1, 2, 2, 5))
    shortcut_only = block.shortcut.forward(x)
    for p in block.parameters():
        if p.name.startswith("inner"):
            p.value[...] = 0.0
    assert_allclose(block.forward(x), shortcut_only, rtol=1e-12)


def test_inception_module_concatenates_four_branches():
    mod = InceptionModule(
        bottleneck_filters=4,
        branch_filters=1,
        kernel_lengths=(3, 7, 14),
        pool_filters=1,
    )
    _built(mod, ("maps", 1, 16, 40), seed=11)
    x = np.random.default_rng(12).normal(size=(1, 2, 16, 40))
    out = mod.forward(x)
    assert out.shape == (4, 2, 1, 40)  # 3 temporal branches + pool branch
    # gradient splits back to the input without shape surgery
    dx = mod.backward(np.ones_like(out))
    assert dx.shape == x.shape
