"""Deterministic random stream handles.

Every source of randomness in the package is an (seed, stream) pair.
Substreams are derived by mixing integer keys into the stream id, so the
same (seed, stream) always replays the same draws regardless of process,
thread count, or the order in which sibling streams are consumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose keys for substream derivation. Keeping them distinct means e.g.
# augmentation randomness can be replayed without touching group selection.
GROUP_SELECT = 1
AUGMENT = 2
DROPOUT = 3
INIT = 4
DATA_ORDER = 5
SYNTH = 6
EVAL = 7


def _mix(h: int, k: int) -> int:
    """splitmix64-style avalanche of key k into state h."""
    h = (h ^ (k & _MASK64)) & _MASK64
    h = (h + 0x9E3779B97F4A7C15) & _MASK64
    z = h
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngStream:
    """Handle for one reproducible random sequence.

    Instances are cheap value objects; ``generator()`` builds a fresh
    numpy Generator positioned at the start of the stream every time, so
    a stream owner must create the generator once and draw from it in a
    fixed order. Streams are never shared between concurrent tasks.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)

    def child(self, *keys: int) -> "RngStream":
        """Derive a substream by folding integer keys into the stream id."""
        h = self.stream
        for k in keys:
            h = _mix(h, int(k))
        return RngStream(self.seed, h)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.default_rng(ss)
