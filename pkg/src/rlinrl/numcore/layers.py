"""Layer kinds used by the policy and mask networks, plus a sequential stack."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)


class Layer:
    kind = "base"
    smooth = True  # False for piecewise-linear layers with kinks

    def __init__(self, **params):
        self.config = params
        self.params: dict[str, Tensor] = {}

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def kink_pattern(self, x: np.ndarray) -> Optional[np.ndarray]:
        """Which side of each kink the input sits on; None for smooth layers."""
        return None

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        super().__init__(in_features=in_features, out_features=out_features)
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = Tensor(_uniform(rng, in_features, (in_features, out_features)), requires_grad=True)
        self.params["bias"] = Tensor(np.zeros(out_features, np.float32), requires_grad=True)

    def output_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.config["in_features"]:
            raise ShapeError(f"expected (N, {self.config['in_features']}), got {shape}")
        return (shape[0], self.config["out_features"])

    def forward(self, x):
        return x @ self.params["weight"] + self.params["bias"]


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 padding: int = 0, rng: Optional[np.random.Generator] = None):
        super().__init__(in_channels=in_channels, out_channels=out_channels, kernel_size=kernel_size,
                         stride=stride, padding=padding)
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = Tensor(
            _uniform(rng, fan_in, (out_channels, in_channels, kernel_size, kernel_size)), requires_grad=True)
        self.params["bias"] = Tensor(np.zeros(out_channels, np.float32), requires_grad=True)

    def output_shape(self, shape):
        c = self.config
        if len(shape) != 4 or shape[1] != c["in_channels"]:
            raise ShapeError(f"expected (N, {c['in_channels']}, H, W), got {shape}")
        ho = T.conv_output_size(shape[2], c["kernel_size"], c["stride"], c["padding"])
        wo = T.conv_output_size(shape[3], c["kernel_size"], c["stride"], c["padding"])
        if ho < 1 or wo < 1:
            raise ShapeError(f"input {shape[2]}x{shape[3]} too small for kernel {c['kernel_size']}")
        return (shape[0], c["out_channels"], ho, wo)

    def forward(self, x):
        c = self.config
        return T.conv2d(x, self.params["weight"], self.params["bias"], c["stride"], c["padding"])


class ReLU(Layer):
    kind = "relu"
    smooth = False

    def forward(self, x):
        return T.relu(x)

    def kink_pattern(self, x):
        return x > 0


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        return T.sigmoid(x)


class ThresholdedReLU(Layer):
    kind = "thresholded_relu"
    smooth = False

    def __init__(self, beta: float = 0.1):
        if not 0.0 <= beta < 1.0:
            raise ConfigError(f"thresholded_relu beta must lie in [0, 1), got {beta}")
        super().__init__(beta=beta)

    def forward(self, x):
        return T.thresholded_relu(x, self.config["beta"])

    def kink_pattern(self, x):
        return x > self.config["beta"]


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def forward(self, x):
        return x.reshape(x.shape[0], -1)


class Upsample2d(Layer):
    kind = "upsample2d"

    def __init__(self, factor: int = 2):
        if int(factor) != factor or factor < 1:
            raise ConfigError(f"upsample2d factor must be a positive integer, got {factor}")
        super().__init__(factor=int(factor))

    def output_shape(self, shape):
        if len(shape) != 4:
            raise ShapeError(f"expected (N, C, H, W), got {shape}")
        f = self.config["factor"]
        return (shape[0], shape[1], shape[2] * f, shape[3] * f)

    def forward(self, x):
        return T.upsample2d(x, self.config["factor"])


LAYER_KINDS: dict[str, type[Layer]] = {
    cls.kind: cls for cls in (Dense, Conv2d, ReLU, Sigmoid, ThresholdedReLU, Flatten, Upsample2d)
}

_NEEDS_RNG = {"dense", "conv2d"}


def build_layer(spec: LayerSpec, rng: Optional[np.random.Generator] = None) -> Layer:
    cls = LAYER_KINDS.get(spec.kind)
    if cls is None:
        raise ConfigError(f"unknown layer kind {spec.kind!r}")
    if spec.kind in _NEEDS_RNG:
        return cls(**spec.params, rng=rng)
    return cls(**spec.params)


class Stack:
    """Ordered layers applied one after another."""

    def __init__(self, layers: list, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng(0)
        self.layers: list[Layer] = [l if isinstance(l, Layer) else build_layer(l, rng) for l in layers]

    def __len__(self):
        return len(self.layers)

    def __add__(self, other: "Stack") -> "Stack":
        return Stack(self.layers + other.layers)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                out[f"{prefix}{i}.{name}"] = p
        return out

    def check_shape(self, shape: tuple) -> tuple:
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(tuple(shape))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return shape

    def forward(self, x: Tensor, trace: Optional[list] = None) -> Tensor:
        self.check_shape(x.shape)
        for layer in self.layers:
            if trace is not None:
                trace.append(layer.kink_pattern(x.data))
            x = layer(x)
        return x

    __call__ = forward


def forward(stack: Stack, x: Tensor) -> Tensor:
    return stack.forward(x)
