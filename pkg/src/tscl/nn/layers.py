"""Trainable layers built on the Tensor autodiff engine."""

from __future__ import annotations

import numpy as np

from ..rng import RngStream
from .tensor import Tensor, conv1d


class Layer:
    """Base: named parameters plus named non-trainable buffers."""

    def params(self) -> list[tuple[str, Tensor]]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: RngStream, dtype=np.float32):
        gen = rng.generator()
        scale = np.sqrt(2.0 / in_features)
        self.weight = Tensor(
            (gen.standard_normal((in_features, out_features)) * scale).astype(dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Conv1d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: RngStream, dtype=np.float32):
        gen = rng.generator()
        scale = np.sqrt(2.0 / (in_channels * kernel))
        self.weight = Tensor(
            (gen.standard_normal((out_channels, in_channels, kernel)) * scale).astype(dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class BatchNorm1d(Layer):
    """Per-channel normalization over (batch, time) for (B, C, L) input.

    Training mode normalizes with batch statistics (their gradient terms
    come out of the composed graph) and updates running statistics with
    momentum 0.9; eval mode uses the frozen running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mean = x.mean(axis=(0, 2), keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=(0, 2), keepdims=True)
            n = x.shape[0] * x.shape[2]
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            self.running_mean = (
                self.momentum * self.running_mean + (1 - self.momentum) * mean.data.reshape(-1)
            ).astype(self.running_mean.dtype)
            self.running_var = (
                self.momentum * self.running_var + (1 - self.momentum) * unbiased
            ).astype(self.running_var.dtype)
            xhat = centered * (var + self.eps) ** -0.5
        else:
            mean = self.running_mean[None, :, None]
            inv = 1.0 / np.sqrt(self.running_var[None, :, None] + self.eps)
            xhat = (x - Tensor(mean)) * Tensor(inv)
        return xhat * self.gamma.reshape(1, -1, 1) + self.beta.reshape(1, -1, 1)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_buffer(self, name: str, value: np.ndarray):
        if name == "running_mean":
            self.running_mean = value.astype(self.running_mean.dtype)
        elif name == "running_var":
            self.running_var = value.astype(self.running_var.dtype)
        else:
            raise KeyError(name)


class Dropout(Layer):
    """Inverted dropout; the mask is a constant drawn from a dedicated stream."""

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def __call__(self, x: Tensor, training: bool, gen: np.random.Generator) -> Tensor:
        if not training or self.rate == 0:
            return x
        keep = (gen.uniform(size=x.shape) >= self.rate).astype(x.dtype)
        return x * Tensor(keep / (1.0 - self.rate))
