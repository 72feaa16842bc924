"""WDCNN: a wide-first-kernel 1-D CNN, built from :mod:`.layers`."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import BatchNorm, Conv1d, Dense, Flatten, Layer, MaxPool1d, ReLU


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: int
    stride: int = 1
    padding: int = 0


def wdcnn_stack() -> tuple[ConvSpec, ...]:
    return (
        ConvSpec(16, 64, 16, 24),
        ConvSpec(32, 3, 1, 1),
        ConvSpec(64, 3, 1, 1),
        ConvSpec(64, 3, 1, 1),
        ConvSpec(64, 3, 1, 0),
    )


@dataclass(frozen=True)
class WdcnnConfig:
    input_length: int = 2048
    conv: tuple[ConvSpec, ...] = field(default_factory=wdcnn_stack)
    hidden: int = 100
    num_outputs: int = 3
    seed: int = 0
    bn_momentum: float = 0.1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [asdict(c) for c in self.conv]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WdcnnConfig":
        d = dict(d)
        d["conv"] = tuple(ConvSpec(**c) for c in d["conv"])
        return cls(**d)


class ConfigError(ValueError):
    pass


class Network:
    """A sequential stack with flat parameter, gradient and buffer vectors."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], dtype=np.float32):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        shape = self.input_shape
        for layer in layers:
            shape = layer.out_shape(shape)
        self.output_shape = shape
        self.n_params = sum(l.n_params for l in layers)
        n_buf = sum(l.n_buffers for l in layers)
        self.params = np.zeros(self.n_params, dtype=self.dtype)
        self.grads = np.zeros(self.n_params, dtype=self.dtype)
        self.buffers = np.zeros(n_buf, dtype=self.dtype)
        self.offsets: list[tuple[str, int, int]] = []
        p = b = 0
        for i, layer in enumerate(layers):
            layer.bind(self.params[p : p + layer.n_params], self.grads[p : p + layer.n_params])
            layer.bind_buffers(self.buffers[b : b + layer.n_buffers])
            if layer.n_params:
                self.offsets.append((f"{i}:{layer.name}", p, p + layer.n_params))
            p += layer.n_params
            b += layer.n_buffers

    def init(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng)

    def layer_of(self, index: int) -> str:
        for name, lo, hi in self.offsets:
            if lo <= index < hi:
                return name
        return "?"

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == len(self.input_shape):
            x = x[:, None, :] if len(self.input_shape) == 2 else x
        if tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"expected inputs of shape {self.input_shape}, got {tuple(x.shape[1:])}")
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads[...] = 0
        d = np.asarray(dout, dtype=self.dtype)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return self.grads

    def state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.params.copy(), self.buffers.copy()

    def load_state(self, params: np.ndarray, buffers: np.ndarray) -> None:
        self.params[...] = params
        self.buffers[...] = buffers


def build_network(config: WdcnnConfig, dtype=np.float32) -> Network:
    """Conv blocks (conv, BN, ReLU, max-pool 2), then dense, BN, ReLU, dense."""
    layers: list[Layer] = []
    cin, length = 1, config.input_length
    for spec in config.conv:
        conv = Conv1d(cin, spec.filters, spec.kernel, spec.stride, spec.padding)
        length = conv.out_len(length)
        if length < 2 or length % 2:
            raise ConfigError(
                f"input length {config.input_length} does not divide through the pooling chain "
                f"(conv output length {length} before pooling)"
            )
        length //= 2
        layers += [conv, BatchNorm(spec.filters, config.bn_momentum), ReLU(), MaxPool1d(2)]
        cin = spec.filters
    layers += [
        Flatten(),
        Dense(cin * length, config.hidden),
        BatchNorm(config.hidden, config.bn_momentum),
        ReLU(),
        Dense(config.hidden, config.num_outputs),
    ]
    return Network(layers, (1, config.input_length), dtype)


def build_wdcnn(config: WdcnnConfig, dtype=np.float32) -> Network:
    net = build_network(config, dtype)
    net.init(config.seed)
    return net
