"""Layer classes with explicit forward and backward passes.

Shape bookkeeping uses batchless shape tags:

* ``("maps", C, H, W)``  feature maps, realized as arrays (C, N, H, W)
* ``("vec", F)``         flat features, realized as arrays (N, F)
* ``("seq", T, F)``      timestep-major sequences, realized as (T, N, F)

Layers cache whatever the backward pass needs on ``self`` during forward, so
a layer instance supports one in-flight pass at a time. ``backward`` takes a
``need_dx`` flag; the first layer of a network can skip computing the input
gradient entirely.
"""

from __future__ import annotations

import numpy as np

from . import core


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Parameter:
    """A trainable array with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Layer:
    """Base class. Subclasses implement build/forward/backward."""

    def __init__(self):
        self.built = False
        self.name = type(self).__name__
        self.in_shape: tuple | None = None
        self.out_shape: tuple | None = None

    def build(self, in_shape: tuple, dtype, rng: np.random.Generator) -> tuple:
        raise NotImplementedError

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, need_dx: bool = True):
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that must survive a save/load round trip."""
        return {}

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def _mark_built(self, in_shape: tuple, out_shape: tuple) -> tuple:
        self.in_shape = in_shape
        self.out_shape = out_shape
        self.built = True
        return out_shape


def _expect_tag(in_shape: tuple, tag: str, layer: Layer):
    if in_shape[0] != tag:
        raise ValueError(
            f"{layer.name} expects {tag!r} input, got shape tag {in_shape[0]!r}"
        )


class Conv2d(Layer):
    """2-D convolution over maps, kernel (filters, C, depth, length).

    The kernel is applied unflipped; output index m along an axis reads input
    index m + off - i for tap i with off = size // 2 ("same") or size - 1
    ("valid"). Kernels with a singleton axis run as GEMMs; genuinely 2-D
    kernels use a reference tap loop.
    """

    def __init__(
        self,
        filters: int,
        kernel_size: tuple[int, int],
        padding: str = "same",
        bias: bool = True,
        name: str | None = None,
    ):
        super().__init__()
        if filters < 1:
            raise ValueError("filters must be positive")
        depth, length = kernel_size
        if depth < 1 or length < 1:
            raise ValueError("kernel dimensions must be positive")
        if padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {padding!r}")
        self.filters = filters
        self.depth = depth
        self.length = length
        self.padding = padding
        self.use_bias = bias
        if name:
            self.name = name
        self.kernel: Parameter | None = None
        self.bias: Parameter | None = None

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        _, c, h, w = in_shape
        # Same padding tolerates kernels longer than the input (outside taps
        # read zeros); valid padding needs at least one full placement.
        if self.padding == "valid" and (self.depth > h or self.length > w):
            raise ValueError(
                f"{self.name}: valid-padding kernel ({self.depth}, "
                f"{self.length}) larger than input maps ({h}, {w})"
            )
        fan_in = c * self.depth * self.length
        kval = core.fan_in_uniform(
            rng, (self.filters, c, self.depth, self.length), fan_in, dtype,
            gain=np.sqrt(6.0),
        )
        self.kernel = Parameter("kernel", kval)
        if self.use_bias:
            self.bias = Parameter("bias", np.zeros(self.filters, dtype=dtype))
        h_out = core.conv_out_len(self.depth, h, self.padding)
        w_out = core.conv_out_len(self.length, w, self.padding)
        return self._mark_built(in_shape, ("maps", self.filters, h_out, w_out))

    def parameters(self):
        ps = [self.kernel]
        if self.use_bias:
            ps.append(self.bias)
        return ps

    def forward(self, x, training=False):
        self._x_shape = x.shape
        k = self.kernel.value
        b = self.bias.value if self.use_bias else None
        if self.depth == 1 and self.length == 1:
            k2 = k[:, :, 0, 0]
            y = np.tensordot(k2, x, axes=(1, 0))
            if b is not None:
                y += b[:, None, None, None]
            self._cache = x
        elif self.depth == 1:
            y, self._cache = core.conv_time_forward(
                x, k[:, :, 0, :], b, self.padding
            )
        elif self.length == 1:
            y, self._cache = core.conv_rows_forward(
                x, k[:, :, :, 0], b, self.padding
            )
        else:
            y, self._cache = core.conv_general_forward(x, k, b, self.padding)
        return y

    def backward(self, dy, need_dx=True):
        k = self.kernel.value
        if self.depth == 1 and self.length == 1:
            x = self._cache
            f = self.filters
            dyf = dy.reshape(f, -1)
            xf = x.reshape(x.shape[0], -1)
            dk = (dyf @ xf.T)[:, :, None, None]
            db = dyf.sum(axis=1)
            dx = None
            if need_dx:
                dx = np.tensordot(k[:, :, 0, 0].T, dy, axes=(1, 0))
        elif self.depth == 1:
            dx, dk3, db = core.conv_time_backward(
                dy, self._x_shape, k[:, :, 0, :], self._cache,
                self.padding, need_dx,
            )
            dk = dk3[:, :, None, :]
        elif self.length == 1:
            dx, dk3, db = core.conv_rows_backward(
                dy, self._x_shape, k[:, :, :, 0], self._cache,
                self.padding, need_dx,
            )
            dk = dk3[:, :, :, None]
        else:
            dx, dk, db = core.conv_general_backward(
                dy, self._cache, k, self.padding, need_dx
            )
        self.kernel.grad += dk
        if self.use_bias:
            self.bias.grad += db
        self._cache = None
        return dx


class DepthwiseConv2d(Layer):
    """Per-channel convolution along the contact axis, kernel (C, mult, D).

    Input map c produces output maps c * mult ... c * mult + mult - 1.
    """

    def __init__(
        self,
        kernel_size: tuple[int, int],
        depth_multiplier: int = 1,
        padding: str = "same",
        bias: bool = True,
        name: str | None = None,
    ):
        super().__init__()
        depth, length = kernel_size
        if length != 1:
            raise ValueError("DepthwiseConv2d supports (depth, 1) kernels only")
        if depth < 1 or depth_multiplier < 1:
            raise ValueError("kernel depth and multiplier must be positive")
        if padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {padding!r}")
        self.depth = depth
        self.multiplier = depth_multiplier
        self.padding = padding
        self.use_bias = bias
        if name:
            self.name = name
        self.kernel: Parameter | None = None
        self.bias: Parameter | None = None

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        _, c, h, w = in_shape
        if self.padding == "valid" and self.depth > h:
            raise ValueError(
                f"{self.name}: valid-padding kernel depth {self.depth} "
                f"larger than input height {h}"
            )
        kval = core.fan_in_uniform(
            rng, (c, self.multiplier, self.depth), self.depth, dtype,
            gain=np.sqrt(6.0),
        )
        self.kernel = Parameter("kernel", kval)
        if self.use_bias:
            self.bias = Parameter(
                "bias", np.zeros(c * self.multiplier, dtype=dtype)
            )
        h_out = core.conv_out_len(self.depth, h, self.padding)
        return self._mark_built(
            in_shape, ("maps", c * self.multiplier, h_out, w)
        )

    def parameters(self):
        ps = [self.kernel]
        if self.use_bias:
            ps.append(self.bias)
        return ps

    def forward(self, x, training=False):
        self._x_shape = x.shape
        b = self.bias.value if self.use_bias else None
        y, self._cache = core.conv_depthwise_rows_forward(
            x, self.kernel.value, b, self.padding
        )
        return y

    def backward(self, dy, need_dx=True):
        dx, dk, db = core.conv_depthwise_rows_backward(
            dy, self._x_shape, self.kernel.value, self._cache,
            self.padding, need_dx,
        )
        self.kernel.grad += dk
        if self.use_bias:
            self.bias.grad += db
        self._cache = None
        return dx


class SeparableConv2d(Layer):
    """Depthwise (depth, 1) convolution followed by a 1x1 projection.

    The depthwise stage runs without bias; the pointwise stage carries it.
    """

    def __init__(
        self,
        filters: int,
        kernel_size: tuple[int, int],
        depth_multiplier: int = 1,
        padding: str = "same",
        bias: bool = True,
        name: str | None = None,
    ):
        super().__init__()
        self.depthwise = DepthwiseConv2d(
            kernel_size, depth_multiplier, padding, bias=False
        )
        self.pointwise = Conv2d(filters, (1, 1), "valid", bias=bias)
        if name:
            self.name = name

    def build(self, in_shape, dtype, rng):
        mid = self.depthwise.build(in_shape, dtype, rng)
        out = self.pointwise.build(mid, dtype, rng)
        for p in self.depthwise.parameters():
            p.name = "depthwise." + p.name
        for p in self.pointwise.parameters():
            p.name = "pointwise." + p.name
        return self._mark_built(in_shape, out)

    def parameters(self):
        return self.depthwise.parameters() + self.pointwise.parameters()

    def forward(self, x, training=False):
        return self.pointwise.forward(self.depthwise.forward(x, training), training)

    def backward(self, dy, need_dx=True):
        dmid = self.pointwise.backward(dy, need_dx=True)
        return self.depthwise.backward(dmid, need_dx=need_dx)


class ReLU(Layer):
    def build(self, in_shape, dtype, rng):
        return self._mark_built(in_shape, in_shape)

    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy, need_dx=True):
        if not need_dx:
            self._mask = None
            return None
        dx = dy * self._mask
        self._mask = None
        return dx


class ELU(Layer):
    """Exponential linear unit.

    The default form is linear for x >= 1 and alpha*(exp(x) - 1) below,
    which is discontinuous at the knee; ``conventional=True`` moves the
    switch to zero, giving the usual continuous curve.
    """

    def __init__(self, alpha: float = 1.0, conventional: bool = False):
        super().__init__()
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = float(alpha)
        self.knee = 0.0 if conventional else 1.0

    def build(self, in_shape, dtype, rng):
        return self._mark_built(in_shape, in_shape)

    def forward(self, x, training=False):
        # Branch selection runs as boolean multiply-adds; np.where costs
        # several times more per pass. Clipping at the knee before expm1
        # keeps the dead lanes finite.
        mask = x >= self.knee
        notm = ~mask
        low = np.minimum(x, self.knee)
        np.expm1(low, out=low)
        low *= self.alpha
        low *= notm
        y = x * mask
        y += low
        self._mask = mask
        self._notm = notm
        self._low = low
        return y

    def backward(self, dy, need_dx=True):
        if not need_dx:
            self._mask = None
            self._notm = None
            self._low = None
            return None
        # Consume the cached low-branch values in place: the slope there is
        # low + alpha, and the linear lanes contribute exactly one.
        g = self._low
        g += self.alpha
        g *= self._notm
        g += self._mask
        g *= dy
        self._mask = None
        self._notm = None
        self._low = None
        return g


class BatchNorm(Layer):
    """Per-map batch normalization over (batch, contact, time) axes.

    Running statistics follow r <- (1 - momentum) * r + momentum * batch,
    with the biased batch variance on both sides.
    """

    def __init__(self, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        if not 0 < momentum <= 1:
            raise ValueError("momentum must be in (0, 1]")
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.gamma: Parameter | None = None
        self.beta: Parameter | None = None

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        c = in_shape[1]
        self.gamma = Parameter("gamma", np.ones(c, dtype=dtype))
        self.beta = Parameter("beta", np.zeros(c, dtype=dtype))
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        return self._mark_built(in_shape, in_shape)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            "running_mean": self.running_mean,
            "running_var": self.running_var,
        }

    def forward(self, x, training=False):
        g = self.gamma.value[:, None, None, None]
        b = self.beta.value[:, None, None, None]
        if training:
            mean = x.mean(axis=(1, 2, 3), keepdims=True)
            var = x.var(axis=(1, 2, 3), keepdims=True)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            mom = self.momentum
            self.running_mean += mom * (mean.ravel() - self.running_mean)
            self.running_var += mom * (var.ravel() - self.running_var)
            self._train_pass = True
        else:
            mean = self.running_mean[:, None, None, None]
            inv_std = 1.0 / np.sqrt(
                self.running_var[:, None, None, None] + self.eps
            )
            self._train_pass = False
        xhat = x - mean
        xhat *= inv_std
        self._xhat = xhat
        self._inv_std = inv_std
        y = xhat * g
        y += b
        return y

    def backward(self, dy, need_dx=True):
        g = self.gamma.value[:, None, None, None]
        xhat = self._xhat
        self.beta.grad += dy.sum(axis=(1, 2, 3))
        self.gamma.grad += np.einsum(
            "cnhw,cnhw->c", dy, xhat, optimize=True
        ).astype(self.gamma.grad.dtype, copy=False)
        dx = None
        if need_dx:
            if self._train_pass:
                m = dy.shape[1] * dy.shape[2] * dy.shape[3]
                dxhat = dy * g
                s1 = dxhat.sum(axis=(1, 2, 3), keepdims=True)
                s2 = np.einsum(
                    "cnhw,cnhw->c", dxhat, xhat, optimize=True
                )[:, None, None, None]
                # The cached xhat is consumed in place; both subtractions
                # and the final scale reuse the dxhat buffer.
                xhat *= s2 * (1.0 / m)
                dxhat -= xhat
                dxhat -= s1 * (1.0 / m)
                dxhat *= self._inv_std
                dx = dxhat
            else:
                # Running statistics are constants in eval mode.
                dx = dy * g
                dx *= self._inv_std
        self._xhat = None
        self._inv_std = None
        return dx


class Dropout(Layer):
    """Inverted dropout. Rate 0.5 draws its mask from raw random bits."""

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError("rate must be in [0, 1)")
        self.rate = float(rate)
        self.freeze_mask = False
        self._mask = None

    def build(self, in_shape, dtype, rng):
        self._rng = rng
        return self._mark_built(in_shape, in_shape)

    def _draw_mask(self, shape):
        n = int(np.prod(shape))
        if self.rate == 0.5:
            raw = np.frombuffer(self._rng.bytes((n + 7) // 8), np.uint8)
            return np.unpackbits(raw, count=n).reshape(shape)
        keep = np.float32(1.0 - self.rate)
        draws = self._rng.random(size=shape, dtype=np.float32)
        return (draws < keep).view(np.uint8)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if not (self.freeze_mask and self._mask is not None
                and self._mask.shape == x.shape):
            self._mask = self._draw_mask(x.shape)
        scale = 1.0 / (1.0 - self.rate)
        y = x * self._mask
        y *= scale
        return y

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        if self._mask is None:
            return dy
        dx = dy * self._mask
        dx *= 1.0 / (1.0 - self.rate)
        return dx


class MaxPool(Layer):
    """Max pooling along the time axis, stride equal to the pool width.
    A trailing remainder narrower than the pool is dropped."""

    def __init__(self, pool: int = 2):
        super().__init__()
        if pool < 1:
            raise ValueError("pool must be positive")
        self.pool = pool

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        tag, c, h, w = in_shape
        out_w = w // self.pool
        if out_w < 1:
            raise ValueError(f"pool {self.pool} wider than input {w}")
        return self._mark_built(in_shape, ("maps", c, h, out_w))

    def forward(self, x, training=False):
        c, n, h, w = x.shape
        p = self.pool
        out_w = w // p
        self._w_in = w
        if p == 2:
            # A width-two pool needs no argmax array: a boolean right-winner
            # mask is an eighth the size and both passes stay single-sweep.
            # Ties go left, matching argmax's first-index rule.
            a = x[..., 0 : out_w * 2 : 2]
            b = x[..., 1 : out_w * 2 : 2]
            self._right = b > a
            self._idx = None
            return np.maximum(a, b)
        r = x[..., : out_w * p].reshape(c, n, h, out_w, p)
        self._idx = r.argmax(axis=-1)
        self._right = None
        return np.take_along_axis(r, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dy, need_dx=True):
        if not need_dx:
            self._idx = None
            self._right = None
            return None
        c, n, h, out_w = dy.shape
        p = self.pool
        dx = np.zeros((c, n, h, self._w_in), dtype=dy.dtype)
        if p == 2:
            right = self._right
            dx[..., 0 : out_w * 2 : 2] = dy * ~right
            dx[..., 1 : out_w * 2 : 2] = dy * right
            self._right = None
            return dx
        dxr = np.zeros((c, n, h, out_w, p), dtype=dy.dtype)
        np.put_along_axis(dxr, self._idx[..., None], dy[..., None], axis=-1)
        dx[..., : out_w * p] = dxr.reshape(c, n, h, out_w * p)
        self._idx = None
        return dx


class SlidingMaxPool(Layer):
    """Stride-1 max pooling along the time axis with same-width output."""

    def __init__(self, window: int = 3):
        super().__init__()
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        return self._mark_built(in_shape, in_shape)

    def forward(self, x, training=False):
        c, n, h, w = x.shape
        win = self.window
        left = win // 2
        pad = np.full((c, n, h, w + win - 1), -np.inf, dtype=x.dtype)
        pad[..., left:left + w] = x
        stacked = np.lib.stride_tricks.sliding_window_view(pad, win, axis=-1)
        self._arg = stacked.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(stacked, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dy, need_dx=True):
        if not need_dx:
            self._arg = None
            return None
        c, n, h, w = self._shape
        win = self.window
        left = win // 2
        dpad = np.zeros((c, n, h, w + win - 1), dtype=dy.dtype)
        for a in range(win):
            sel = self._arg == a
            if sel.any():
                dpad[..., a:a + w] += dy * sel
        self._arg = None
        return dpad[..., left:left + w]


class AvgPool(Layer):
    """Average pooling along the time axis, stride equal to the pool width.
    A trailing remainder narrower than the pool is dropped."""

    def __init__(self, pool: int):
        super().__init__()
        if pool < 1:
            raise ValueError("pool must be positive")
        self.pool = pool

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        tag, c, h, w = in_shape
        out_w = w // self.pool
        if out_w < 1:
            raise ValueError(f"pool {self.pool} wider than input {w}")
        return self._mark_built(in_shape, ("maps", c, h, out_w))

    def forward(self, x, training=False):
        c, n, h, w = x.shape
        p = self.pool
        out_w = w // p
        self._w_in = w
        return x[..., : out_w * p].reshape(c, n, h, out_w, p).mean(axis=-1)

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        c, n, h, out_w = dy.shape
        p = self.pool
        dx = np.zeros((c, n, h, self._w_in), dtype=dy.dtype)
        dx[..., : out_w * p] = np.repeat(dy / p, p, axis=-1)
        return dx


class Flatten(Layer):
    """Maps (C, N, H, W) to vectors (N, C*H*W)."""

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        tag, c, h, w = in_shape
        return self._mark_built(in_shape, ("vec", c * h * w))

    def forward(self, x, training=False):
        self._shape = x.shape
        c, n, h, w = x.shape
        return np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(n, -1)

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        c, n, h, w = self._shape
        return np.ascontiguousarray(
            dy.reshape(n, c, h, w).transpose(1, 0, 2, 3)
        )


class Dense(Layer):
    def __init__(self, units: int, bias: bool = True, name: str | None = None):
        super().__init__()
        if units < 1:
            raise ValueError("units must be positive")
        self.units = units
        self.use_bias = bias
        if name:
            self.name = name
        self.weight: Parameter | None = None
        self.bias: Parameter | None = None

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "vec", self)
        f = in_shape[1]
        self.weight = Parameter(
            "weight", core.fan_in_uniform(rng, (f, self.units), f, dtype)
        )
        if self.use_bias:
            self.bias = Parameter("bias", np.zeros(self.units, dtype=dtype))
        return self._mark_built(in_shape, ("vec", self.units))

    def parameters(self):
        ps = [self.weight]
        if self.use_bias:
            ps.append(self.bias)
        return ps

    def forward(self, x, training=False):
        self._x = x
        y = x @ self.weight.value
        if self.use_bias:
            y += self.bias.value
        return y

    def backward(self, dy, need_dx=True):
        self.weight.grad += self._x.T @ dy
        if self.use_bias:
            self.bias.grad += dy.sum(axis=0)
        self._x = None
        if not need_dx:
            return None
        return dy @ self.weight.value.T


class Softmax(Layer):
    """Row-wise softmax on (N, K) with the exact Jacobian-vector backward."""

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "vec", self)
        return self._mark_built(in_shape, in_shape)

    def forward(self, x, training=False):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._p = e / e.sum(axis=1, keepdims=True)
        return self._p

    def backward(self, dy, need_dx=True):
        if not need_dx:
            self._p = None
            return None
        p = self._p
        dx = p * (dy - (dy * p).sum(axis=1, keepdims=True))
        self._p = None
        return dx


class TwinConvAdd(Layer):
    """Two branches applied to the same input, outputs added elementwise."""

    def __init__(self, branch_a: Layer, branch_b: Layer, name: str | None = None):
        super().__init__()
        self.branch_a = branch_a
        self.branch_b = branch_b
        if name:
            self.name = name

    def build(self, in_shape, dtype, rng):
        out_a = self.branch_a.build(in_shape, dtype, rng)
        out_b = self.branch_b.build(in_shape, dtype, rng)
        if out_a != out_b:
            raise ValueError(
                f"{self.name}: branch outputs differ, {out_a} vs {out_b}"
            )
        for p in self.branch_a.parameters():
            p.name = "a." + p.name
        for p in self.branch_b.parameters():
            p.name = "b." + p.name
        return self._mark_built(in_shape, out_a)

    def parameters(self):
        return self.branch_a.parameters() + self.branch_b.parameters()

    def forward(self, x, training=False):
        return (
            self.branch_a.forward(x, training)
            + self.branch_b.forward(x, training)
        )

    def backward(self, dy, need_dx=True):
        da = self.branch_a.backward(dy, need_dx)
        db = self.branch_b.backward(dy, need_dx)
        if not need_dx:
            return None
        return da + db


class InceptionModule(Layer):
    """Bottleneck feeding parallel temporal branches plus a pooled branch.

    The bottleneck and the pooled branch's projection collapse the contact
    axis with (H, 1) valid kernels. Branch outputs and the projected pooled
    input are concatenated along the map axis.
    """

    def __init__(
        self,
        bottleneck_filters: int = 4,
        branch_filters: int = 1,
        kernel_lengths: tuple[int, ...] = (3, 7, 14),
        pool_filters: int = 1,
        pool_window: int = 3,
        name: str | None = None,
    ):
        super().__init__()
        if bottleneck_filters < 1 or branch_filters < 1 or pool_filters < 1:
            raise ValueError("filter counts must be positive")
        self.bottleneck_filters = bottleneck_filters
        self.branch_filters = branch_filters
        self.kernel_lengths = tuple(kernel_lengths)
        self.pool_filters = pool_filters
        self.pool_window = pool_window
        if name:
            self.name = name

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        tag, c, h, w = in_shape
        self.bottleneck = Conv2d(
            self.bottleneck_filters, (h, 1), "valid", name="bottleneck"
        )
        mid = self.bottleneck.build(in_shape, dtype, rng)
        self.branches = []
        outs = []
        for length in self.kernel_lengths:
            conv = Conv2d(
                self.branch_filters, (1, length), "same",
                name=f"branch{length}",
            )
            outs.append(conv.build(mid, dtype, rng))
            self.branches.append(conv)
        self.pool = SlidingMaxPool(self.pool_window)
        pooled = self.pool.build(in_shape, dtype, rng)
        self.pool_proj = Conv2d(
            self.pool_filters, (h, 1), "valid", name="pool_proj"
        )
        pool_out = self.pool_proj.build(pooled, dtype, rng)
        for sub in [self.bottleneck, *self.branches, self.pool_proj]:
            for p in sub.parameters():
                p.name = sub.name + "." + p.name
        self._split = [o[1] for o in outs] + [pool_out[1]]
        total_c = sum(self._split)
        return self._mark_built(in_shape, ("maps", total_c, 1, w))

    def parameters(self):
        ps = self.bottleneck.parameters()
        for conv in self.branches:
            ps += conv.parameters()
        ps += self.pool_proj.parameters()
        return ps

    def forward(self, x, training=False):
        z = self.bottleneck.forward(x, training)
        pieces = [conv.forward(z, training) for conv in self.branches]
        pieces.append(
            self.pool_proj.forward(self.pool.forward(x, training), training)
        )
        return np.concatenate(pieces, axis=0)

    def backward(self, dy, need_dx=True):
        edges = np.cumsum(self._split)[:-1]
        parts = np.split(dy, edges, axis=0)
        dz = None
        for conv, part in zip(self.branches, parts[:-1]):
            contrib = conv.backward(np.ascontiguousarray(part), need_dx=True)
            dz = contrib if dz is None else dz + contrib
        dx = self.bottleneck.backward(dz, need_dx)
        dproj = self.pool_proj.backward(
            np.ascontiguousarray(parts[-1]), need_dx
        )
        if not need_dx:
            return None
        return dx + self.pool.backward(dproj, need_dx=True)


class ResidualBlock(Layer):
    """A chain of layers with the input added back to the chain output.

    When in and out shapes differ a projection layer must be supplied as the
    shortcut; otherwise the identity is used.
    """

    def __init__(
        self, layers: list[Layer], shortcut: Layer | None = None,
        name: str | None = None,
    ):
        super().__init__()
        if not layers:
            raise ValueError("residual block needs at least one layer")
        self.layers = list(layers)
        self.shortcut = shortcut
        if name:
            self.name = name

    def build(self, in_shape, dtype, rng):
        shape = in_shape
        for layer in self.layers:
            shape = layer.build(shape, dtype, rng)
        if self.shortcut is not None:
            short = self.shortcut.build(in_shape, dtype, rng)
        else:
            short = in_shape
        if short != shape:
            raise ValueError(
                f"{self.name}: shortcut shape {short} does not match chain "
                f"output {shape}"
            )
        for i, layer in enumerate(self.layers):
            for p in layer.parameters():
                p.name = f"inner{i}.{p.name}"
        if self.shortcut is not None:
            for p in self.shortcut.parameters():
                p.name = "shortcut." + p.name
        return self._mark_built(in_shape, shape)

    def parameters(self):
        ps = []
        for layer in self.layers:
            ps += layer.parameters()
        if self.shortcut is not None:
            ps += self.shortcut.parameters()
        return ps

    def buffers(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.buffers().items():
                out[f"inner{i}.{k}"] = v
        if self.shortcut is not None:
            for k, v in self.shortcut.buffers().items():
                out["shortcut." + k] = v
        return out

    def forward(self, x, training=False):
        h = x
        for layer in self.layers:
            h = layer.forward(h, training)
        if self.shortcut is not None:
            return h + self.shortcut.forward(x, training)
        return h + x

    def backward(self, dy, need_dx=True):
        dh = dy
        for i, layer in enumerate(reversed(self.layers)):
            last = i == len(self.layers) - 1
            dh = layer.backward(dh, need_dx=(not last) or need_dx)
        if self.shortcut is not None:
            ds = self.shortcut.backward(dy, need_dx)
            if not need_dx:
                return None
            return dh + ds
        if not need_dx:
            return None
        return dh + dy


class FrameSplit(Layer):
    """Cuts single-map input into fixed-width frames for recurrent layers.

    (1, N, H, W) becomes a sequence (T, N, H*frame) with T = W // frame; a
    trailing remainder narrower than one frame is dropped. Each frame is a
    per-sample vector ordered contact-major.
    """

    def __init__(self, frame_len: int):
        super().__init__()
        if frame_len < 1:
            raise ValueError("frame_len must be positive")
        self.frame_len = frame_len

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "maps", self)
        tag, c, h, w = in_shape
        if c != 1:
            raise ValueError("FrameSplit expects a single input map")
        t = w // self.frame_len
        if t < 1:
            raise ValueError(
                f"frame_len {self.frame_len} wider than input {w}"
            )
        return self._mark_built(in_shape, ("seq", t, h * self.frame_len))

    def forward(self, x, training=False):
        self._shape = x.shape
        c, n, h, w = x.shape
        fl = self.frame_len
        t = w // fl
        trimmed = x[0, :, :, : t * fl].reshape(n, h, t, fl)
        return np.ascontiguousarray(
            trimmed.transpose(2, 0, 1, 3)
        ).reshape(t, n, h * fl)

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        c, n, h, w = self._shape
        fl = self.frame_len
        t = w // fl
        dx = np.zeros(self._shape, dtype=dy.dtype)
        dx[0, :, :, : t * fl] = (
            dy.reshape(t, n, h, fl).transpose(1, 2, 0, 3).reshape(n, h, t * fl)
        )
        return dx


def lstm_cell(x, h_prev, c_prev, wx, wh, b):
    """One LSTM step. Gate order along the weight columns is (i, f, g, o).

    Returns (h, c, cache) where cache feeds lstm_cell_backward.
    """
    hidden = h_prev.shape[1]
    z = x @ wx + h_prev @ wh + b
    i = _stable_sigmoid(z[:, :hidden])
    f = _stable_sigmoid(z[:, hidden:2 * hidden])
    g = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = _stable_sigmoid(z[:, 3 * hidden:])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, (x, h_prev, c_prev, i, f, g, o, tanh_c)


def lstm_cell_backward(dh, dc, cache, wx, wh):
    """Gradients of one LSTM step.

    dh, dc are gradients arriving at this step's h and c. Returns
    (dx, dh_prev, dc_prev, dwx, dwh, db).
    """
    x, h_prev, c_prev, i, f, g, o, tanh_c = cache
    do = dh * tanh_c
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    di = dc_total * g
    dg = dc_total * i
    df = dc_total * c_prev
    dc_prev = dc_total * f
    dz = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=1,
    )
    dwx = x.T @ dz
    dwh = h_prev.T @ dz
    db = dz.sum(axis=0)
    dx = dz @ wx.T
    dh_prev = dz @ wh.T
    return dx, dh_prev, dc_prev, dwx, dwh, db


class LSTMLayer(Layer):
    """Unidirectional LSTM over (T, N, F) sequences, zero initial state."""

    def __init__(
        self, hidden: int, return_sequences: bool = False,
        name: str | None = None,
    ):
        super().__init__()
        if hidden < 1:
            raise ValueError("hidden size must be positive")
        self.hidden = hidden
        self.return_sequences = return_sequences
        if name:
            self.name = name

    def build(self, in_shape, dtype, rng):
        _expect_tag(in_shape, "seq", self)
        tag, t, f = in_shape
        hid = self.hidden
        self.wx = Parameter(
            "wx", core.fan_in_uniform(rng, (f, 4 * hid), f, dtype)
        )
        self.wh = Parameter(
            "wh", core.fan_in_uniform(rng, (hid, 4 * hid), hid, dtype)
        )
        self.b = Parameter("b", np.zeros(4 * hid, dtype=dtype))
        out = ("seq", t, hid) if self.return_sequences else ("vec", hid)
        return self._mark_built(in_shape, out)

    def parameters(self):
        return [self.wx, self.wh, self.b]

    def forward(self, x, training=False):
        t_steps, n, _ = x.shape
        hid = self.hidden
        h = np.zeros((n, hid), dtype=x.dtype)
        c = np.zeros((n, hid), dtype=x.dtype)
        self._caches = []
        hs = np.empty((t_steps, n, hid), dtype=x.dtype)
        for t in range(t_steps):
            h, c, cache = lstm_cell(
                x[t], h, c, self.wx.value, self.wh.value, self.b.value
            )
            self._caches.append(cache)
            hs[t] = h
        self._n = n
        self._t = t_steps
        self._f = x.shape[2]
        if self.return_sequences:
            return hs
        return hs[-1].copy()

    def backward(self, dy, need_dx=True):
        t_steps, n, hid = self._t, self._n, self.hidden
        dtype = self.wx.value.dtype
        dh = np.zeros((n, hid), dtype=dtype)
        dc = np.zeros((n, hid), dtype=dtype)
        dx = np.empty((t_steps, n, self._f), dtype=dtype) if need_dx else None
        dwx = np.zeros_like(self.wx.value)
        dwh = np.zeros_like(self.wh.value)
        db = np.zeros_like(self.b.value)
        for t in range(t_steps - 1, -1, -1):
            if self.return_sequences:
                dh = dh + dy[t]
            elif t == t_steps - 1:
                dh = dh + dy
            dxt, dh, dc, dwx_t, dwh_t, db_t = lstm_cell_backward(
                dh, dc, self._caches[t], self.wx.value, self.wh.value
            )
            dwx += dwx_t
            dwh += dwh_t
            db += db_t
            if need_dx:
                dx[t] = dxt
        self.wx.grad += dwx
        self.wh.grad += dwh
        self.b.grad += db
        self._caches = None
        return dx
