"""Resampling augmentation and baseline time-series augmentations.

The resampling view pair is built in three steps: linear upsampling of the
input to a finer grid, sampling two disjoint index subsets that both keep
at least floor(len/4) points inside each quarter of the upsampled range,
and rescaling each subset's timestamps back onto the original grid. Both
views keep the input's length, alignment, and per-channel value hull.

Baselines: jittering (scaled Gaussian noise), resizing (random crop plus
interpolation back to full length), time masking (zeroing random steps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import RngStream


@dataclass(frozen=True)
class ResamplingConfig:
    """Lengths used by the resampling augmentation.

    t_up is the upsampled length, t_int_1/t_int_2 the two subsequence
    lengths. Defaults (see for_length) insert one midpoint per step and
    use half-length subsequences.
    """

    t_up: int
    t_int_1: int
    t_int_2: int

    def __post_init__(self):
        if self.t_int_1 < 4 or self.t_int_2 < 4:
            raise ValueError("subsequence lengths must be >= 4 (one point per quarter)")
        if self.t_int_1 + self.t_int_2 > self.t_up:
            raise ValueError(
                f"disjoint subsequences need t_int_1 + t_int_2 <= t_up, "
                f"got {self.t_int_1} + {self.t_int_2} > {self.t_up}"
            )

    @classmethod
    def for_length(cls, t: int, t_up: int = 0, t_int_1: int = 0, t_int_2: int = 0):
        """Defaults for a series of length t: t_up = 2t - 1, t_int = t // 2."""
        return cls(
            t_up=t_up or 2 * t - 1,
            t_int_1=t_int_1 or t // 2,
            t_int_2=t_int_2 or t // 2,
        )


@dataclass(frozen=True)
class IndexPair:
    """Two disjoint, strictly increasing index sets into {0..t_up-1}."""

    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        for name, x in (("x1", self.x1), ("x2", self.x2)):
            x = np.asarray(x, dtype=np.int64)
            if x.ndim != 1 or len(x) < 2 or np.any(np.diff(x) <= 0):
                raise ValueError(f"{name} must be strictly increasing with >= 2 entries")
            object.__setattr__(self, name, x)
        if np.intersect1d(self.x1, self.x2).size:
            raise ValueError("index sets must be disjoint")


def quarter_of(indices, t_up: int) -> np.ndarray:
    """Quarter number (0..3) of each index; boundaries at j * t_up / 4."""
    return np.minimum(np.asarray(indices) * 4 // t_up, 3)


def quarter_counts(indices, t_up: int) -> np.ndarray:
    return np.bincount(quarter_of(indices, t_up), minlength=4)


def check_index_pair(pair: IndexPair, t_up: int) -> None:
    """Raise if the pair violates disjointness or quarter coverage."""
    if pair.x1[-1] >= t_up or pair.x2[-1] >= t_up:
        raise ValueError("index outside upsampled range")
    for x in (pair.x1, pair.x2):
        need = len(x) // 4
        counts = quarter_counts(x, t_up)
        if np.any(counts < need):
            raise ValueError(f"quarter coverage violated: counts {counts.tolist()} < {need}")


def _interp_columns(y: np.ndarray, values: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of (..., len(y), C) values at query points.

    y must be strictly increasing and bracket every query point. All
    channels and leading batch dimensions share the same y grid.
    """
    y = np.asarray(y, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    hi = np.clip(np.searchsorted(y, q, side="right"), 1, len(y) - 1)
    lo = hi - 1
    w = (q - y[lo]) / (y[hi] - y[lo])
    w = w[:, None]
    out = values[..., lo, :] * (1.0 - w) + values[..., hi, :] * w
    return out


def upsample(values: np.ndarray, t_up: int) -> np.ndarray:
    """Linearly upsample (..., T, C) values to t_up equispaced timesteps.

    The t_up positions span exactly the original sampling range, so
    endpoints are preserved and t_up = T is the identity.
    """
    values = np.asarray(values)
    t = values.shape[-2]
    if t_up < t:
        raise ValueError(f"t_up={t_up} smaller than input length {t}")
    grid = np.arange(t, dtype=np.float64)
    query = np.linspace(0.0, t - 1.0, t_up)
    out = _interp_columns(grid, values.astype(np.float64, copy=False), query)
    return out.astype(values.dtype, copy=False)


def sample_disjoint_indices(cfg: ResamplingConfig, rng: RngStream) -> IndexPair:
    """Draw two disjoint index sets satisfying the quarter-coverage rule.

    Each view first takes floor(t_int/4) indices per quarter, then tops up
    uniformly from leftover indices. View 2's per-quarter quota is reserved
    while view 1 tops up, so the draw never needs rejection.
    """
    t_up = cfg.t_up
    quarters = [np.flatnonzero(quarter_of(np.arange(t_up), t_up) == j) for j in range(4)]
    base1, base2 = cfg.t_int_1 // 4, cfg.t_int_2 // 4
    for j, q in enumerate(quarters):
        if base1 + base2 > len(q):
            raise ValueError(
                f"infeasible config: quarter {j} has {len(q)} indices, "
                f"needs {base1} + {base2}"
            )
    gen = rng.generator()
    free = np.ones(t_up, dtype=bool)

    def draw_view(t_int: int, base: int, reserve: int) -> np.ndarray:
        picked = []
        for q in quarters:
            avail = q[free[q]]
            take = gen.choice(avail, size=base, replace=False)
            picked.append(take)
            free[take] = False
        extra = t_int - 4 * base
        if extra:
            pool = []
            for q in quarters:
                avail = q[free[q]]
                if reserve:
                    # leave view 2's per-quarter quota untouched
                    avail = gen.permutation(avail)[: len(avail) - reserve]
                pool.append(avail)
            pool = np.concatenate(pool)
            take = gen.choice(pool, size=extra, replace=False)
            picked.append(take)
            free[take] = False
        return np.sort(np.concatenate(picked))

    x1 = draw_view(cfg.t_int_1, base1, reserve=base2)
    x2 = draw_view(cfg.t_int_2, base2, reserve=0)
    pair = IndexPair(x1, x2)
    check_index_pair(pair, t_up)
    return pair


def realign(sub_values: np.ndarray, sub_indices: np.ndarray, t: int) -> np.ndarray:
    """Rescale a subsequence onto t equispaced timesteps.

    The subsequence timestamps are mapped affinely so the first lands on 0
    and the last on t - 1 (relative spacing preserved, no extrapolation),
    then values are linearly interpolated at the integer positions. Output
    endpoints therefore equal the subsequence's endpoint values.
    """
    x = np.asarray(sub_indices, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("need at least 2 subsequence points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("subsequence indices must be strictly increasing")
    sub_values = np.asarray(sub_values)
    if sub_values.shape[-2] != len(x):
        raise ValueError(
            f"values rows {sub_values.shape[-2]} do not match {len(x)} indices"
        )
    y = (x - x[0]) * ((t - 1.0) / (x[-1] - x[0]))
    y[-1] = t - 1.0  # exact endpoint despite rounding
    out = _interp_columns(y, sub_values.astype(np.float64, copy=False), np.arange(t, dtype=np.float64))
    return out.astype(sub_values.dtype, copy=False)


def resampling_pair(
    values: np.ndarray, cfg: ResamplingConfig, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Build the two resampled views of one (T, C) series."""
    values = np.asarray(values)
    t = values.shape[-2]
    up = upsample(values, cfg.t_up)
    pair = sample_disjoint_indices(cfg, rng)
    v1 = realign(up[..., pair.x1, :], pair.x1, t)
    v2 = realign(up[..., pair.x2, :], pair.x2, t)
    return v1, v2


def jitter(values: np.ndarray, sigma: float, rng: RngStream) -> np.ndarray:
    """Add Gaussian noise scaled by sigma times the per-channel std."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    values = np.asarray(values)
    std = values.std(axis=-2, keepdims=True)
    noise = rng.generator().standard_normal(values.shape)
    return (values + noise * (sigma * std)).astype(values.dtype, copy=False)


def resize_crop(
    values: np.ndarray, scale_range: tuple[float, float], rng: RngStream
) -> np.ndarray:
    """Crop a random contiguous window and stretch it back to full length."""
    low, high = scale_range
    if not (0 < low <= high <= 1):
        raise ValueError(f"scale range must satisfy 0 < low <= high <= 1, got {scale_range}")
    values = np.asarray(values)
    t = values.shape[-2]
    gen = rng.generator()
    r = gen.uniform(low, high)
    m = math.ceil(r * t)
    if m < 2:
        raise ValueError(f"crop length {m} too short to interpolate")
    start = int(gen.integers(0, t - m + 1))
    crop = values[..., start : start + m, :]
    out = _interp_columns(
        np.arange(m, dtype=np.float64),
        crop.astype(np.float64, copy=False),
        np.linspace(0.0, m - 1.0, t),
    )
    return out.astype(values.dtype, copy=False)


def time_mask(values: np.ndarray, ratio: float, rng: RngStream) -> np.ndarray:
    """Zero floor(ratio * T) random timesteps across all channels."""
    if not 0 <= ratio < 1:
        raise ValueError("mask ratio must be in [0, 1)")
    values = np.asarray(values)
    t = values.shape[-2]
    k = int(ratio * t)
    out = values.copy()
    if k:
        idx = rng.generator().choice(t, size=k, replace=False)
        out[..., idx, :] = 0
    return out


STRATEGIES = ("jittering", "resizing", "masking", "resampling")


@dataclass(frozen=True)
class AugmentConfig:
    """Strategy selection plus per-strategy parameters."""

    strategy: str = "resampling"
    t_up: int = 0  # 0 -> 2T - 1
    t_int_1: int = 0  # 0 -> T // 2
    t_int_2: int = 0
    per_series: bool = False  # independent index draws per series (ablation)
    jitter_sigma: float = 0.03
    resize_low: float = 0.5
    resize_high: float = 1.0
    mask_ratio: float = 0.3

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")

    def resampling(self, t: int) -> ResamplingConfig:
        return ResamplingConfig.for_length(t, self.t_up, self.t_int_1, self.t_int_2)


def make_view_pair(
    group: np.ndarray, cfg: AugmentConfig, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Augment one (G, T, C) group into two equally shaped views.

    Resampling shares a single index draw across the group's series and
    channels (they are temporally aligned), unless per_series is set.
    The baselines draw independently per series and per view.
    """
    group = np.asarray(group)
    g, t, _ = group.shape
    if cfg.strategy == "resampling":
        rcfg = cfg.resampling(t)
        up = upsample(group, rcfg.t_up)
        if cfg.per_series:
            views = [np.empty_like(group), np.empty_like(group)]
            for i in range(g):
                pair = sample_disjoint_indices(rcfg, rng.child(i))
                views[0][i] = realign(up[i, pair.x1, :], pair.x1, t)
                views[1][i] = realign(up[i, pair.x2, :], pair.x2, t)
            return views[0], views[1]
        pair = sample_disjoint_indices(rcfg, rng)
        return (
            realign(up[:, pair.x1, :], pair.x1, t),
            realign(up[:, pair.x2, :], pair.x2, t),
        )

    def one_view(view_idx: int) -> np.ndarray:
        out = np.empty_like(group)
        for i in range(g):
            r = rng.child(view_idx, i)
            if cfg.strategy == "jittering":
                out[i] = jitter(group[i], cfg.jitter_sigma, r)
            elif cfg.strategy == "resizing":
                out[i] = resize_crop(group[i], (cfg.resize_low, cfg.resize_high), r)
            else:
                out[i] = time_mask(group[i], cfg.mask_ratio, r)
        return out

    return one_view(1), one_view(2)
