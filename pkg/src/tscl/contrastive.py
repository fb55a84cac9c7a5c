"""The four contrastive objectives and their auxiliary state.

SimCLR and MoCo are normalized-temperature InfoNCE losses (MoCo adds a
ring-buffer queue of past keys and a momentum-updated key encoder), BYOL
is a negative-free cosine loss with an asymmetric predictor branch, and
VICReg combines an invariance term with variance and covariance
regularizers. All losses are built from Tensor ops, so they participate
in the same exact-gradient contract as the network layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nn.tensor import Tensor, concat, l2_normalize, logsumexp

FRAMEWORKS = ("simclr", "moco", "byol", "vicreg")


@dataclass
class SslState:
    """Framework tag plus the hyperparameters and buffers it needs."""

    framework: str = "simclr"
    temperature: float = 0.1
    momentum: float = 0.996  # target-network update (moco, byol)
    queue_capacity: int = 8192  # moco
    vicreg_lambda: float = 25.0
    vicreg_mu: float = 25.0
    vicreg_nu: float = 1.0
    vicreg_gamma: float = 1.0
    vicreg_eps: float = 1e-4
    collapse_std: float = 1e-3
    _queue: Optional[np.ndarray] = field(default=None, repr=False)
    _queue_fill: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.framework!r}; choose from {FRAMEWORKS}")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must be in (0, 1)")

    def queue_keys(self) -> np.ndarray:
        """Current queue contents, oldest first."""
        if self._queue is None:
            return np.zeros((0, 0), dtype=np.float32)
        return self._queue[: self._queue_fill]

    def enqueue(self, keys: np.ndarray) -> None:
        b, dim = keys.shape
        if self.queue_capacity % b:
            raise ValueError(
                f"queue capacity {self.queue_capacity} must be a multiple of batch size {b}"
            )
        if self._queue is None:
            self._queue = np.zeros((self.queue_capacity, dim), dtype=keys.dtype)
        if self._queue_fill < self.queue_capacity:
            self._queue[self._queue_fill : self._queue_fill + b] = keys
            self._queue_fill += b
        else:
            # drop the oldest batch, append the newest
            self._queue = np.concatenate([self._queue[b:], keys])


def nt_xent(z1: Tensor, z2: Tensor, tau: float) -> Tensor:
    """Normalized-temperature cross entropy over 2B anchors.

    Each anchor's positive is its counterpart view; the anchor itself is
    excluded from the denominator and all other in-batch projections act
    as negatives.
    """
    b = z1.shape[0]
    if b < 2:
        raise ValueError("nt_xent needs a batch of at least 2")
    if z1.shape != z2.shape:
        raise ValueError(f"view shapes differ: {z1.shape} vs {z2.shape}")
    z = concat([l2_normalize(z1), l2_normalize(z2)], axis=0)  # (2B, D)
    sims = (z @ z.T) * (1.0 / tau)
    # self-similarities drop out of the softmax denominator
    mask = Tensor(np.full((2 * b, 2 * b), 0.0, dtype=z.data.dtype))
    np.fill_diagonal(mask.data, -1e9)
    sims = sims + mask
    pos = np.arange(2 * b)
    pos = np.where(pos < b, pos + b, pos - b)
    onehot = np.zeros((2 * b, 2 * b), dtype=z.data.dtype)
    onehot[np.arange(2 * b), pos] = 1
    pos_sim = (sims * Tensor(onehot)).sum(axis=1)
    return (logsumexp(sims, axis=1) - pos_sim).mean()


def vicreg_loss(
    z1: Tensor,
    z2: Tensor,
    lam: float = 25.0,
    mu: float = 25.0,
    nu: float = 1.0,
    gamma: float = 1.0,
    eps: float = 1e-4,
) -> Tensor:
    """Invariance + variance hinge + covariance penalty.

    Variance and covariance use the unbiased (B - 1) estimators of the
    reference formulation; branch terms are summed.
    """
    b, dim = z1.shape
    if b < 2:
        raise ValueError("vicreg_loss needs a batch of at least 2")
    diff = z1 - z2
    invariance = (diff * diff).mean()

    def branch_terms(z: Tensor) -> tuple[Tensor, Tensor]:
        centered = z - z.mean(axis=0, keepdims=True)
        var = (centered * centered).sum(axis=0) * (1.0 / (b - 1))
        std = (var + eps) ** 0.5
        variance = (Tensor(np.asarray(gamma, dtype=z.data.dtype)) - std).relu().mean()
        cov = (centered.T @ centered) * (1.0 / (b - 1))
        off = Tensor(1.0 - np.eye(dim, dtype=z.data.dtype))
        covariance = ((cov * cov) * off).sum() * (1.0 / dim)
        return variance, covariance

    v1, c1 = branch_terms(z1)
    v2, c2 = branch_terms(z2)
    return lam * invariance + mu * (v1 + v2) + nu * (c1 + c2)


def byol_loss(p1: Tensor, t2: Tensor, p2: Tensor, t1: Tensor) -> Tensor:
    """Symmetrized 2 - 2 * cosine similarity; targets carry no gradient."""
    def direction(p: Tensor, t: Tensor) -> Tensor:
        cos = (l2_normalize(p) * Tensor(_unit_rows(t))).sum(axis=1)
        return (2.0 - 2.0 * cos).mean()

    return 0.5 * (direction(p1, t2) + direction(p2, t1))


def _unit_rows(t: Tensor | np.ndarray) -> np.ndarray:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    norms = np.sqrt((arr * arr).sum(axis=1, keepdims=True) + 1e-12)
    return arr / norms


def moco_step(query: Tensor, key: np.ndarray, state: SslState) -> Tensor:
    """InfoNCE against the batch keys plus the queue, then queue update.

    query is the online projection (gradient flows); key comes from the
    momentum encoder and is treated as a constant. Anchor i's positive is
    key i; negatives are the other batch keys and every queued key.
    """
    b = query.shape[0]
    if b < 2:
        raise ValueError("moco_step needs a batch of at least 2")
    q = l2_normalize(query)
    k = _unit_rows(key)
    queued = state.queue_keys()
    candidates = np.concatenate([k, queued], axis=0) if queued.size else k
    logits = (q @ Tensor(candidates.T)) * (1.0 / state.temperature)
    onehot = np.zeros((b, candidates.shape[0]), dtype=logits.data.dtype)
    onehot[np.arange(b), np.arange(b)] = 1
    pos = (logits * Tensor(onehot)).sum(axis=1)
    loss = (logsumexp(logits, axis=1) - pos).mean()
    state.enqueue(k)
    return loss


def momentum_update(
    online: list[tuple[str, Tensor]], target: list[tuple[str, Tensor]], m: float
) -> None:
    """target <- m * target + (1 - m) * online, elementwise and in place."""
    if len(online) != len(target):
        raise RuntimeError(f"parameter lists differ: {len(online)} vs {len(target)}")
    for (no, po), (nt, pt) in zip(online, target):
        if po.data.shape != pt.data.shape:
            raise RuntimeError(f"shape mismatch for {no}/{nt}: {po.data.shape} vs {pt.data.shape}")
        pt.data *= m
        pt.data += (1.0 - m) * po.data


def collapsed(h: np.ndarray, threshold: float = 1e-3) -> bool:
    """True when the mean per-dimension std of a batch of embeddings vanishes."""
    return float(h.std(axis=0).mean()) < threshold
