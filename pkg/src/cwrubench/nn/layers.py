"""Layers with hand-derived backward passes.

Parameters and gradients live in two flat vectors owned by the network; each
layer receives views into them through :meth:`Layer.bind`.  Activations use
the layout (batch, channels, length) for 1-D feature maps and (batch,
features) after flattening.
"""

from __future__ import annotations

import numpy as np


class Layer:
    n_params = 0
    n_buffers = 0
    name = "layer"

    def bind(self, params: np.ndarray, grads: np.ndarray) -> None:
        pass

    def bind_buffers(self, buffers: np.ndarray) -> None:
        pass

    def init(self, rng: np.random.Generator) -> None:
        pass

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv1d(Layer):
    name = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1, padding: int = 0):
        self.cin, self.cout, self.k, self.stride, self.pad = in_channels, out_channels, kernel, stride, padding
        self.n_params = out_channels * in_channels * kernel + out_channels

    def bind(self, params, grads):
        nw = self.cout * self.cin * self.k
        self.w = params[:nw].reshape(self.cout, self.cin * self.k)
        self.b = params[nw:]
        self.dw = grads[:nw].reshape(self.cout, self.cin * self.k)
        self.db = grads[nw:]

    def init(self, rng):
        fan_in = self.cin * self.k
        self.w[...] = rng.standard_normal(self.w.shape) * np.sqrt(2.0 / fan_in)
        self.b[...] = 0

    def out_len(self, length: int) -> int:
        return (length + 2 * self.pad - self.k) // self.stride + 1

    def out_shape(self, in_shape):
        c, length = in_shape
        if c != self.cin:
            raise ValueError(f"conv expects {self.cin} channels, got {c}")
        lout = self.out_len(length)
        if lout < 1:
            raise ValueError(f"input length {length} too short for kernel {self.k}")
        return (self.cout, lout)

    def forward(self, x, training):
        n, c, length = x.shape
        if c != self.cin:
            raise ValueError(f"conv expects {self.cin} channels, got {c}")
        if self.pad:
            x = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad)))
        lout = (x.shape[2] - self.k) // self.stride + 1
        # cols: (n, lout, cin*k)
        win = np.lib.stride_tricks.sliding_window_view(x, self.k, axis=2)[:, :, : (lout - 1) * self.stride + 1 : self.stride]
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n, lout, c * self.k)
        self._cache = (cols, x.shape)
        out = cols @ self.w.T + self.b
        return out.transpose(0, 2, 1)

    def backward(self, dout):
        cols, padded_shape = self._cache
        n, _, lout = dout.shape
        d = dout.transpose(0, 2, 1)  # (n, lout, cout)
        self.dw += np.tensordot(d, cols, axes=([0, 1], [0, 1]))
        self.db += d.sum(axis=(0, 1))
        dcols = (d @ self.w).reshape(n, lout, self.cin, self.k)
        dx = np.zeros(padded_shape, dtype=dout.dtype)
        span = (lout - 1) * self.stride + 1
        for j in range(self.k):
            dx[:, :, j : j + span : self.stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        if self.pad:
            dx = dx[:, :, self.pad : -self.pad]
        return dx


class Dense(Layer):
    name = "dense"

    def __init__(self, in_features: int, out_features: int):
        self.nin, self.nout = in_features, out_features
        self.n_params = in_features * out_features + out_features

    def bind(self, params, grads):
        nw = self.nin * self.nout
        self.w = params[:nw].reshape(self.nout, self.nin)
        self.b = params[nw:]
        self.dw = grads[:nw].reshape(self.nout, self.nin)
        self.db = grads[nw:]

    def init(self, rng):
        self.w[...] = rng.standard_normal(self.w.shape) * np.sqrt(2.0 / self.nin)
        self.b[...] = 0

    def out_shape(self, in_shape):
        if in_shape != (self.nin,):
            raise ValueError(f"dense expects ({self.nin},), got {in_shape}")
        return (self.nout,)

    def forward(self, x, training):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dout):
        self.dw += dout.T @ self._x
        self.db += dout.sum(axis=0)
        return dout @ self.w


class BatchNorm(Layer):
    """Batch normalization over every axis but the channel axis (1).

    Training mode normalizes with the biased batch variance and updates
    running statistics with ``momentum`` (running variance uses the unbiased
    estimate).  Inference uses the running statistics.
    """

    name = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.c, self.momentum, self.eps = channels, momentum, eps
        self.n_params = 2 * channels
        self.n_buffers = 2 * channels

    def bind(self, params, grads):
        self.gamma, self.beta = params[: self.c], params[self.c :]
        self.dgamma, self.dbeta = grads[: self.c], grads[self.c :]

    def bind_buffers(self, buffers):
        self.running_mean, self.running_var = buffers[: self.c], buffers[self.c :]

    def init(self, rng):
        self.gamma[...] = 1
        self.beta[...] = 0
        self.running_mean[...] = 0
        self.running_var[...] = 1

    def _shape(self, x):
        return (1, self.c) + (1,) * (x.ndim - 2)

    def forward(self, x, training):
        axes = (0,) + tuple(range(2, x.ndim))
        shp = self._shape(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.c
            self.running_mean *= 1 - self.momentum
            self.running_mean += self.momentum * mean
            self.running_var *= 1 - self.momentum
            self.running_var += self.momentum * var * (m / max(m - 1, 1))
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(shp)) * inv.reshape(shp)
        self._cache = (xhat, inv, axes, shp)
        return xhat * self.gamma.reshape(shp) + self.beta.reshape(shp)

    def backward(self, dout):
        xhat, inv, axes, shp = self._cache
        self.dgamma += (dout * xhat).sum(axis=axes)
        self.dbeta += dout.sum(axis=axes)
        dxhat = dout * self.gamma.reshape(shp)
        # training-mode gradient through the batch statistics
        mean_d = dxhat.mean(axis=axes, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) * inv.reshape(shp)


class ReLU(Layer):
    name = "relu"

    def forward(self, x, training):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool1d(Layer):
    """Non-overlapping max pooling; ties go to the lowest index."""

    name = "maxpool"

    def __init__(self, size: int = 2):
        self.size = size

    def out_shape(self, in_shape):
        c, length = in_shape
        if length % self.size:
            raise ValueError(f"max-pool input length {length} is not divisible by {self.size}")
        return (c, length // self.size)

    def forward(self, x, training):
        n, c, length = x.shape
        lout = length // self.size
        win = x[:, :, : lout * self.size].reshape(n, c, lout, self.size)
        idx = win.argmax(axis=3)
        self._cache = (x.shape, idx)
        return np.take_along_axis(win, idx[..., None], axis=3)[..., 0]

    def backward(self, dout):
        shape, idx = self._cache
        n, c, length = shape
        lout = dout.shape[2]
        dwin = np.zeros((n, c, lout, self.size), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=3)
        dx = np.zeros(shape, dtype=dout.dtype)
        dx[:, :, : lout * self.size] = dwin.reshape(n, c, lout * self.size)
        return dx


class Flatten(Layer):
    name = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)
