"""Sequential CNN assembled from a plain-text architecture description.

Architecture files hold one layer per line, ``kind key=value ...``::

    conv2d out=8 kernel=3 padding=1
    maxpool window=2
    relu
    fully_connected out=10
    softmax_xent

Missing input sizes are inferred from the input shape given to ``Network``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from . import layers as L


class LayerKind(str, enum.Enum):
    CONV2D = "conv2d"
    RELU = "relu"
    MAXPOOL = "maxpool"
    FULLY_CONNECTED = "fully_connected"
    SOFTMAX_XENT = "softmax_xent"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int = 0
    out_channels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.stride < 1 or self.padding < 0 or self.window < 1:
            raise ConfigError(f"invalid extents in {self}")
        if self.kind == LayerKind.CONV2D and min(self.out_channels, self.kernel_h, self.kernel_w) < 1:
            raise ConfigError("conv2d needs positive out channels and kernel size")
        if self.kind == LayerKind.FULLY_CONNECTED and self.out_channels < 1:
            raise ConfigError("fully_connected needs out >= 1")


_INT_KEYS = {"in": "in_channels", "out": "out_channels", "stride": "stride",
             "padding": "padding", "window": "window"}


def parse_architecture(text: str) -> list[LayerSpec]:
    specs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *pairs = line.split()
        kw = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"line {lineno}: expected key=value, got {pair!r}")
            key, value = pair.split("=", 1)
            try:
                if key == "kernel":
                    h, _, w = value.partition("x")
                    kw["kernel_h"], kw["kernel_w"] = int(h), int(w or h)
                elif key in _INT_KEYS:
                    kw[_INT_KEYS[key]] = int(value)
                else:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
        if kind == "maxpool" and "stride" not in kw:
            kw["stride"] = kw.get("window", 2)
        try:
            specs.append(LayerSpec(LayerKind(kind), **kw))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    if not specs:
        raise ConfigError("empty architecture")
    return specs


DEFAULT_ARCHITECTURE = """\
conv2d out=8 kernel=3 padding=1
maxpool window=2
relu
conv2d out=16 kernel=3 padding=1
maxpool window=2
relu
fully_connected out=10
softmax_xent
"""


class PassThroughStore:
    """Keeps saved activations as they are."""

    def save(self, layer_id, activation, pre_activation=None):
        return activation

    def load(self, handle):
        return handle


class Network:
    """Sequential network; parameters live in ``self.params`` (a list of arrays).

    Convolution inputs are routed through an activation store between the
    forward and backward pass, which is where compression plugs in.
    """

    def __init__(self, specs, input_shape, seed=0, dtype=np.float32):
        self.specs = list(specs)
        self.dtype = np.dtype(dtype)
        self.input_shape = tuple(input_shape)  # (C, H, W)
        rng = np.random.default_rng(seed)
        self.params = []
        self.param_of = {}  # layer index -> (first param index, count)
        self.shapes = []
        shape = self.input_shape
        for i, s in enumerate(self.specs):
            if s.kind == LayerKind.CONV2D:
                c, h, w = shape
                if s.in_channels and s.in_channels != c:
                    raise ShapeError(f"layer {i}: expects {s.in_channels} channels, input has {c}")
                fan_in = c * s.kernel_h * s.kernel_w
                self._add(i, [_kaiming(rng, (s.out_channels, c, s.kernel_h, s.kernel_w), fan_in)])
                shape = (s.out_channels,
                         L.conv_output_size(h, s.kernel_h, s.stride, s.padding),
                         L.conv_output_size(w, s.kernel_w, s.stride, s.padding))
            elif s.kind == LayerKind.MAXPOOL:
                c, h, w = shape
                shape = (c, L.conv_output_size(h, s.window, s.stride, 0),
                         L.conv_output_size(w, s.window, s.stride, 0))
            elif s.kind == LayerKind.FULLY_CONNECTED:
                fan_in = int(np.prod(shape))
                if s.in_channels and s.in_channels != fan_in:
                    raise ShapeError(f"layer {i}: expects {s.in_channels} features, input has {fan_in}")
                self._add(i, [_kaiming(rng, (s.out_channels, fan_in), fan_in),
                              np.zeros(s.out_channels)])
                shape = (s.out_channels,)
            elif s.kind == LayerKind.SOFTMAX_XENT and i != len(self.specs) - 1:
                raise ConfigError("softmax_xent must be the last layer")
            self.shapes.append(shape)
        if self.specs[-1].kind != LayerKind.SOFTMAX_XENT:
            raise ConfigError("architecture must end with softmax_xent")
        self.params = [p.astype(self.dtype) for p in self.params]
        self.store = PassThroughStore()
        self._cache = []
        self.taps = {}

    def _add(self, layer, arrays):
        self.param_of[layer] = (len(self.params), len(arrays))
        self.params.extend(arrays)

    @property
    def conv_layers(self) -> list[int]:
        return [i for i, s in enumerate(self.specs) if s.kind == LayerKind.CONV2D]

    def conv_weight_index(self, layer: int) -> int:
        return self.param_of[layer][0]

    def logits(self, x):
        """Forward pass up to (excluding) the loss layer; nothing is saved."""
        h = np.asarray(x, dtype=self.dtype)
        for i, s in enumerate(self.specs[:-1]):
            h, _ = self._forward_layer(i, s, h)
        return h

    def _forward_layer(self, i, s, h):
        if s.kind == LayerKind.CONV2D:
            return L.conv2d_forward(h, self.params[self.param_of[i][0]], s.stride, s.padding), None
        if s.kind == LayerKind.RELU:
            return L.relu_forward(h), None
        if s.kind == LayerKind.MAXPOOL:
            return L.maxpool_forward(h, s.window, s.stride)
        if s.kind == LayerKind.FULLY_CONNECTED:
            j = self.param_of[i][0]
            return L.fc_forward(h, self.params[j], self.params[j + 1]), None
        raise ConfigError(f"unexpected layer {s.kind}")

    def forward(self, x, labels) -> float:
        """Full forward pass; caches what backward needs and returns the mean loss."""
        h = np.asarray(x, dtype=self.dtype)
        self._cache = []
        pre = None  # input of an immediately preceding relu
        for i, s in enumerate(self.specs):
            if s.kind == LayerKind.SOFTMAX_XENT:
                loss, self._dlogits = L.softmax_xent(h, labels)
                self._cache.append(None)
                break
            if s.kind == LayerKind.CONV2D:
                self._cache.append((self.store.save(i, h, pre), h.shape))
            elif s.kind == LayerKind.RELU:
                self._cache.append(h > 0)
            elif s.kind == LayerKind.FULLY_CONNECTED:
                self._cache.append(h)
            pre_next = h if s.kind == LayerKind.RELU else None
            h, extra = self._forward_layer(i, s, h)
            if s.kind == LayerKind.MAXPOOL:
                self._cache.append(extra)
            pre = pre_next
        return loss

    def backward(self, taps: bool = False) -> list[np.ndarray]:
        """Gradients for ``self.params`` (same order).

        With ``taps``, ``self.taps[layer]`` receives ``(activation, loss)`` for
        every convolution: the (possibly decompressed) input it used and the
        gradient arriving at its output.
        """
        grads = [None] * len(self.params)
        self.taps = {}
        g = self._dlogits
        for i in range(len(self.specs) - 2, -1, -1):
            s = self.specs[i]
            c = self._cache[i]
            if s.kind == LayerKind.CONV2D:
                handle, x_shape = c
                x = self.store.load(handle)
                j = self.param_of[i][0]
                grads[j] = L.conv2d_grad_weights(x, g, s.kernel_h, s.kernel_w, s.stride, s.padding)
                if taps:
                    self.taps[i] = (x, g)
                g = L.conv2d_grad_input(self.params[j], g, x_shape, s.stride, s.padding) if i else None
            elif s.kind == LayerKind.RELU:
                g = np.where(c, g, 0).astype(g.dtype)
            elif s.kind == LayerKind.MAXPOOL:
                g = L.maxpool_backward(g, c, self._input_shape(i), s.window, s.stride)
            elif s.kind == LayerKind.FULLY_CONNECTED:
                j = self.param_of[i][0]
                grads[j], grads[j + 1], g = L.fc_backward(c, self.params[j], g)
        self._cache = []
        return grads

    def _input_shape(self, i):
        batch = len(self._dlogits)
        return (batch,) + (self.shapes[i - 1] if i else self.input_shape)


def _kaiming(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
