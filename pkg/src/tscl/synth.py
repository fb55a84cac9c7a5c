"""Synthetic crop-like dataset generator.

Each class is a smooth seasonal profile (one or two Gaussian bumps per
channel around class-level timing/amplitude), evaluated on the timestep
grid. Series of one sample share the class profile and a sample-level
phenological time shift; every nuisance amplitude scales with noise_sigma
except the cloud-like spikes, which are controlled by dropout_prob, so a
zero-noise zero-dropout configuration collapses to the pure profiles.

Spikes push values toward the per-channel series maximum (bright cloud
contamination), deliberately unlike the zeroing done by time masking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .data import Dataset
from .rng import RngStream


@dataclass(frozen=True)
class ClassProfile:
    """Per-channel double-bump curve parameters, values clipped to [0, 1]."""

    base: np.ndarray  # (C,)
    amp1: np.ndarray
    mu1: np.ndarray
    sig1: np.ndarray
    amp2: np.ndarray  # zero where the secondary bump is absent
    mu2: np.ndarray
    sig2: np.ndarray

    def curve(self, positions: np.ndarray) -> np.ndarray:
        """Evaluate the clean profile at real-valued positions -> (len, C)."""
        p = np.asarray(positions, dtype=np.float64)[:, None]
        out = (
            self.base
            + self.amp1 * np.exp(-0.5 * ((p - self.mu1) / self.sig1) ** 2)
            + self.amp2 * np.exp(-0.5 * ((p - self.mu2) / self.sig2) ** 2)
        )
        return np.clip(out, 0.0, 1.0)


def class_profiles(n_classes: int, t: int, c: int, rng: RngStream) -> list[ClassProfile]:
    """Profiles that differ in peak timing and shape, not marginal level.

    Channel base levels, amplitude weights, and per-channel timing offsets
    are drawn once and shared by every class, so summary statistics like
    the per-channel mean carry little class signal; classes are told apart
    by when and how sharply their bumps rise.
    """
    shared = rng.child(0).generator()
    base = shared.uniform(0.08, 0.20, size=c)
    amp_weight = shared.uniform(0.35, 0.60, size=c)
    chan_offset = shared.normal(0.0, 0.015 * t, size=c)
    profiles = []
    for k in range(n_classes):
        gen = rng.child(k + 1).generator()
        peak = gen.uniform(0.30 * t, 0.70 * t)
        width = gen.uniform(0.10 * t, 0.16 * t)
        prof = {
            "base": base,
            "amp1": amp_weight,
            "mu1": peak + chan_offset,
            "sig1": np.full(c, width),
        }
        if gen.uniform() < 0.5:
            peak2 = gen.uniform(0.15 * t, 0.85 * t)
            prof["amp2"] = gen.uniform(0.15, 0.30) * amp_weight
            prof["mu2"] = peak2 + chan_offset
            prof["sig2"] = np.full(c, gen.uniform(0.05 * t, 0.09 * t))
        else:
            prof["amp2"] = np.zeros(c)
            prof["mu2"] = np.full(c, 0.5 * t)
            prof["sig2"] = np.ones(c)
        profiles.append(ClassProfile(**prof))
    return profiles


def _one_sample(
    profile: ClassProfile,
    n_ts: int,
    t: int,
    c: int,
    noise_sigma: float,
    dropout_prob: float,
    gen: np.random.Generator,
) -> np.ndarray:
    # sample-level phenological shift, series-level shift + warp + noise +
    # clouds; every amplitude scales with noise_sigma so sigma = 0 degenerates
    # to the pure class profile
    shift = gen.normal(0.0, 25.0 * noise_sigma)
    series = np.empty((n_ts, t, c))
    knots = np.linspace(0, t - 1, 5)
    for i in range(n_ts):
        own_shift = shift + gen.normal(0.0, 8.0 * noise_sigma)
        clean = profile.curve(np.arange(t, dtype=np.float64) - own_shift)
        warp_knots = gen.normal(0.0, 2.0 * noise_sigma, size=5)
        warp = np.interp(np.arange(t), knots, warp_knots)
        s = clean * (1.0 + warp[:, None])
        s = s + gen.normal(0.0, noise_sigma, size=(t, c))
        if dropout_prob > 0:
            cloudy = gen.uniform(size=t) < dropout_prob
            if cloudy.any():
                peak = s.max(axis=0)
                lift = gen.uniform(0.6, 1.0, size=int(cloudy.sum()))[:, None]
                s[cloudy] = s[cloudy] + lift * (peak - s[cloudy])
        series[i] = s
    return np.clip(series, 0.0, 1.0)


def generate(
    n_classes: int,
    n_per_class: int,
    n_ts: int,
    t: int,
    c: int,
    noise_sigma: float,
    dropout_prob: float,
    rng: RngStream,
    split_tag: str = "train",
    sample_offset: int = 0,
) -> Dataset:
    """Generate a labeled dataset of n_classes * n_per_class samples.

    Calls sharing rng but using non-overlapping sample_offset ranges draw
    from the same class profiles with disjoint per-sample randomness, which
    is how disjoint train/val/test/unlabeled splits are produced.
    """
    if min(n_classes, n_per_class, n_ts, t, c) < 1:
        raise ValueError("all counts must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if not 0 <= dropout_prob < 1:
        raise ValueError("dropout_prob must be in [0, 1)")
    profiles = class_profiles(n_classes, t, c, rng.child(rngmod.SYNTH))
    values = np.empty((n_classes * n_per_class, n_ts, t, c), dtype=np.float32)
    labels = np.empty(n_classes * n_per_class, dtype=np.uint32)
    row = 0
    for k in range(n_classes):
        for j in range(n_per_class):
            gen = rng.child(k, sample_offset + j).generator()
            values[row] = _one_sample(profiles[k], n_ts, t, c, noise_sigma, dropout_prob, gen)
            labels[row] = k
            row += 1
    return Dataset(values, labels, n_classes, split_tag)
