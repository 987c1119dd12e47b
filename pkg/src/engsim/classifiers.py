"""The four window classifiers, assembled from the nn layer kit.

Every builder takes the recording geometry (contact count K, window length
T_w in samples) and returns an unbuilt ModelGraph whose input shape is
("maps", 1, K, T_w) and whose output is a vector of class probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .nn.layers import (
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
    Softmax,
    TwinConvAdd,
)
from .nn.model import ModelGraph

ARCHITECTURES = ("cnn", "it", "engnet", "lstm")

DEFAULT_N_CLASSES = 4


def build_cnn(
    n_channels: int,
    window_samples: int,
    n_classes: int = DEFAULT_N_CLASSES,
    filters: int = 32,
    kernel_len: int = 9,
    dual_blocks: int = 4,
    temporal_blocks: int = 2,
    dropout: float = 0.1,
    pool: int = 2,
) -> ModelGraph:
    """Dual temporal/spatial convolution stack.

    Each of the first `dual_blocks` blocks applies a 1 x kernel_len temporal
    convolution and an n_channels x 1 spatial convolution to the same input,
    adds the two feature maps elementwise, then ReLU, dropout, and a
    max-pool along time. The next `temporal_blocks` blocks keep only the
    temporal convolution. A dense softmax head closes the stack.

    The default dropout is mild: six stacked dropout layers multiply, and
    heavier rates leave this unnormalized stack unable to learn at all.
    """
    if window_samples < kernel_len:
        raise ValueError(
            f"window of {window_samples} samples is shorter than the "
            f"temporal kernel ({kernel_len})"
        )
    layers = []
    for i in range(dual_blocks):
        layers.append(
            TwinConvAdd(
                Conv2d(filters, (1, kernel_len), "same"),
                Conv2d(filters, (n_channels, 1), "same"),
                name=f"dual{i + 1}",
            )
        )
        layers += [ReLU(), Dropout(dropout), MaxPool(pool)]
    for i in range(temporal_blocks):
        layers.append(
            Conv2d(
                filters, (1, kernel_len), "same", name=f"temporal{i + 1}"
            )
        )
        layers += [ReLU(), Dropout(dropout), MaxPool(pool)]
    layers += [Flatten(), Dense(n_classes), Softmax()]
    return ModelGraph(layers, name="cnn")


def build_inception_time(
    n_channels: int,
    window_samples: int,
    n_classes: int = DEFAULT_N_CLASSES,
    bottleneck_filters: int = 4,
    branch_filters: int = 1,
    kernel_lengths: tuple[int, ...] = (3, 7, 14),
    pool_filters: int = 1,
) -> ModelGraph:
    """Six inception modules in two residual blocks of three.

    Module 1 collapses the contact axis through its bottleneck; later
    modules see single-row maps. The first block's skip path projects the
    original input with a collapsing 1x1-style convolution; the second
    block's skip is the identity. Each block ends in a ReLU.
    """
    if window_samples < max(kernel_lengths):
        raise ValueError(
            f"window of {window_samples} samples is shorter than the "
            f"longest branch kernel ({max(kernel_lengths)})"
        )
    module_maps = len(kernel_lengths) * branch_filters + pool_filters

    def module(tag):
        return InceptionModule(
            bottleneck_filters,
            branch_filters,
            kernel_lengths,
            pool_filters,
            name=tag,
        )

    block1 = ResidualBlock(
        [module("m1"), module("m2"), module("m3")],
        shortcut=Conv2d(
            module_maps, (n_channels, 1), "valid", name="shortcut"
        ),
        name="block1",
    )
    block2 = ResidualBlock(
        [module("m4"), module("m5"), module("m6")],
        shortcut=None,
        name="block2",
    )
    layers = [
        block1,
        ReLU(),
        block2,
        ReLU(),
        Flatten(),
        Dense(n_classes),
        Softmax(),
    ]
    return ModelGraph(layers, name="it")


def build_engnet(
    n_channels: int,
    window_samples: int,
    n_classes: int = DEFAULT_N_CLASSES,
    temporal_filters: int = 16,
    depth_multiplier: int = 2,
    separable_filters: int = 32,
    kernel_len: int = 100,
    dropout: float = 0.5,
) -> ModelGraph:
    """Compact separable-convolution classifier.

    Block 1: long temporal convolution, per-channel spatial convolution with
    a depth multiplier, batch norm, ELU, average pool of kernel_len/10,
    dropout. Block 2: separable convolution collapsing the contact axis,
    batch norm, ELU, average pool of kernel_len/25, dropout. The flattened
    features feed the classification head directly.
    """
    if window_samples < kernel_len:
        raise ValueError(
            f"window of {window_samples} samples is shorter than the "
            f"temporal kernel ({kernel_len})"
        )
    pool1 = kernel_len // 10
    pool2 = kernel_len // 25
    layers = [
        Conv2d(temporal_filters, (1, kernel_len), "same", name="temporal"),
        DepthwiseConv2d(
            (n_channels, 1), depth_multiplier, "same", name="spatial"
        ),
        BatchNorm(),
        ELU(),
        AvgPool(pool1),
        Dropout(dropout),
        SeparableConv2d(
            separable_filters, (n_channels, 1), 1, "valid", name="separable"
        ),
        BatchNorm(),
        ELU(),
        AvgPool(pool2),
        Dropout(dropout),
        Flatten(),
        Dense(n_classes),
        Softmax(),
    ]
    return ModelGraph(layers, name="engnet")


def build_lstm(
    n_channels: int,
    window_samples: int,
    n_classes: int = DEFAULT_N_CLASSES,
    hidden: int = 128,
    n_layers: int = 2,
    frame_ms: float = 20.0,
    fs_hz: int = 5000,
) -> ModelGraph:
    """Stacked LSTM over 20 ms frames of the raw window.

    The window is cut into frames of frame_ms (100 samples at 5 kHz), each
    flattened across contacts into one feature vector; the final hidden
    state feeds a dense softmax.
    """
    frame_len = int(round(fs_hz * frame_ms / 1000.0))
    if window_samples < frame_len:
        raise ValueError(
            f"window of {window_samples} samples is shorter than one "
            f"{frame_ms} ms frame ({frame_len} samples)"
        )
    layers: list = [FrameSplit(frame_len)]
    for i in range(n_layers):
        layers.append(
            LSTMLayer(hidden, return_sequences=i < n_layers - 1)
        )
    layers += [Dense(n_classes), Softmax()]
    return ModelGraph(layers, name="lstm")


_BUILDERS = {
    "cnn": build_cnn,
    "it": build_inception_time,
    "engnet": build_engnet,
    "lstm": build_lstm,
}


@dataclass(frozen=True)
class ArchSpec:
    """Which classifier to build, for which recording geometry."""

    kind: str
    n_channels: int = 16
    window_samples: int = 500
    n_classes: int = DEFAULT_N_CLASSES
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.kind!r}; "
                f"choose from {ARCHITECTURES}"
            )
        if self.n_channels < 1 or self.window_samples < 1:
            raise ValueError("channels and window_samples must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")


def build_architecture(spec: ArchSpec) -> ModelGraph:
    builder = _BUILDERS[spec.kind]
    return builder(
        spec.n_channels,
        spec.window_samples,
        spec.n_classes,
        **spec.options,
    )
