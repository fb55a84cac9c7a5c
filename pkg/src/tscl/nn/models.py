"""Time-series ResNet encoder, group aggregation, and MLP heads.

The encoder processes each series of a sample independently through three
residual blocks (kernel sizes 8/5/3, batch norm + ReLU after each conv,
projection shortcut on channel changes) and global average pooling over
time; a sample embedding is the arithmetic mean over its group of series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import RngStream
from .layers import BatchNorm1d, Conv1d, Dropout, Linear
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int
    block_filters: tuple[int, int, int] = (256, 512, 512)
    kernel_sizes: tuple[int, int, int] = (8, 5, 3)
    embedding_dim: int = 512

    def __post_init__(self):
        if self.embedding_dim != self.block_filters[-1]:
            raise ValueError(
                "embedding_dim must equal the last block width "
                f"(global pooling output), got {self.embedding_dim} vs {self.block_filters[-1]}"
            )

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "block_filters": list(self.block_filters),
            "kernel_sizes": list(self.kernel_sizes),
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            in_channels=d["in_channels"],
            block_filters=tuple(d["block_filters"]),
            kernel_sizes=tuple(d["kernel_sizes"]),
            embedding_dim=d["embedding_dim"],
        )


class ResidualBlock:
    def __init__(self, c_in: int, c_out: int, kernels, rng: RngStream, dtype=np.float32):
        k1, k2, k3 = kernels
        self.conv1 = Conv1d(c_in, c_out, k1, rng.child(1), dtype)
        self.bn1 = BatchNorm1d(c_out, dtype=dtype)
        self.conv2 = Conv1d(c_out, c_out, k2, rng.child(2), dtype)
        self.bn2 = BatchNorm1d(c_out, dtype=dtype)
        self.conv3 = Conv1d(c_out, c_out, k3, rng.child(3), dtype)
        self.bn3 = BatchNorm1d(c_out, dtype=dtype)
        if c_in != c_out:
            self.short_conv = Conv1d(c_in, c_out, 1, rng.child(4), dtype)
            self.short_bn = BatchNorm1d(c_out, dtype=dtype)
        else:
            self.short_conv = None
            self.short_bn = None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = self.bn1(self.conv1(x), training).relu()
        h = self.bn2(self.conv2(h), training).relu()
        h = self.bn3(self.conv3(h), training)
        if self.short_conv is not None:
            shortcut = self.short_bn(self.short_conv(x), training)
        else:
            shortcut = x
        return (h + shortcut).relu()

    def sublayers(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2),
               ("bn2", self.bn2), ("conv3", self.conv3), ("bn3", self.bn3)]
        if self.short_conv is not None:
            out += [("short_conv", self.short_conv), ("short_bn", self.short_bn)]
        return out


def _collect(prefix: str, layers) -> list:
    out = []
    for name, layer in layers:
        for pname, p in layer.params():
            out.append((f"{prefix}.{name}.{pname}", p))
    return out


def _collect_buffers(prefix: str, layers) -> list:
    out = []
    for name, layer in layers:
        for bname, b in layer.buffers():
            out.append((f"{prefix}.{name}.{bname}", b))
    return out


class Encoder:
    """Three-block 1-d ResNet mapping (T, C) series to embedding vectors."""

    def __init__(self, config: EncoderConfig, rng: RngStream, dtype=np.float32):
        self.config = config
        f1, f2, f3 = config.block_filters
        self.blocks = [
            ResidualBlock(config.in_channels, f1, config.kernel_sizes, rng.child(1), dtype),
            ResidualBlock(f1, f2, config.kernel_sizes, rng.child(2), dtype),
            ResidualBlock(f2, f3, config.kernel_sizes, rng.child(3), dtype),
        ]

    def forward_series(self, x: Tensor, training: bool) -> Tensor:
        """(B, C, T) series batch -> (B, D) embeddings via global average pooling."""
        h = x
        for block in self.blocks:
            h = block(h, training)
        return h.mean(axis=2)

    def encode(self, x: np.ndarray, training: bool) -> tuple[Tensor, Tensor]:
        """(B, G, T, C) groups -> per-series (B, G, D) and mean-aggregated (B, D)."""
        b, g, t, c = x.shape
        if c != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} channels, got {c}")
        flat = Tensor(np.ascontiguousarray(x.reshape(b * g, t, c).transpose(0, 2, 1)))
        emb = self.forward_series(flat, training)  # (B*G, D)
        per_series = emb.reshape(b, g, self.config.embedding_dim)
        aggregated = per_series.mean(axis=1)
        return per_series, aggregated

    def named_params(self):
        out = []
        for i, block in enumerate(self.blocks):
            out += _collect(f"encoder.block{i + 1}", block.sublayers())
        return out

    def named_buffers(self):
        out = []
        for i, block in enumerate(self.blocks):
            out += _collect_buffers(f"encoder.block{i + 1}", block.sublayers())
        return out

    def n_params(self) -> int:
        return sum(p.data.size for _, p in self.named_params())


class ProjectionHead:
    """2-layer MLP 512 -> 512 -> 128 used only during pretraining."""

    def __init__(self, in_dim: int, rng: RngStream, hidden: int = 512, out_dim: int = 128, dtype=np.float32):
        self.fc1 = Linear(in_dim, hidden, rng.child(1), dtype)
        self.fc2 = Linear(hidden, out_dim, rng.child(2), dtype)
        self.out_dim = out_dim

    def __call__(self, h: Tensor) -> Tensor:
        return self.fc2(self.fc1(h).relu())

    def named_params(self, prefix: str = "projector"):
        return [(f"{prefix}.fc1.weight", self.fc1.weight), (f"{prefix}.fc1.bias", self.fc1.bias),
                (f"{prefix}.fc2.weight", self.fc2.weight), (f"{prefix}.fc2.bias", self.fc2.bias)]

    def named_buffers(self, prefix: str = "projector"):
        return []


class PredictorHead(ProjectionHead):
    """BYOL online-branch predictor, 128 -> 512 -> 128."""

    def __init__(self, dim: int, rng: RngStream, hidden: int = 512, dtype=np.float32):
        super().__init__(dim, rng, hidden=hidden, out_dim=dim, dtype=dtype)

    def named_params(self, prefix: str = "predictor"):
        return super().named_params(prefix)


class ClassifierHead:
    """2-layer MLP with hidden width 256, ReLU, and 20% dropout."""

    def __init__(self, in_dim: int, n_classes: int, rng: RngStream, hidden: int = 256,
                 dropout: float = 0.2, dtype=np.float32):
        self.fc1 = Linear(in_dim, hidden, rng.child(1), dtype)
        self.fc2 = Linear(hidden, n_classes, rng.child(2), dtype)
        self.drop = Dropout(dropout)

    def __call__(self, h: Tensor, training: bool, gen: np.random.Generator = None) -> Tensor:
        hidden = self.fc1(h).relu()
        if training:
            if gen is None:
                raise ValueError("training-mode classifier needs a dropout generator")
            hidden = self.drop(hidden, True, gen)
        return self.fc2(hidden)

    def named_params(self, prefix: str = "classifier"):
        return [(f"{prefix}.fc1.weight", self.fc1.weight), (f"{prefix}.fc1.bias", self.fc1.bias),
                (f"{prefix}.fc2.weight", self.fc2.weight), (f"{prefix}.fc2.bias", self.fc2.bias)]
