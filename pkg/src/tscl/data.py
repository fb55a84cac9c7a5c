"""Domain types and the on-disk dataset container.

A dataset is a dense float32 array of shape (N, N_ts, T, C): N samples,
each a set of N_ts temporally aligned pixel time series with T timesteps
and C channels. Timestamps are the implicit grid {1..T}. Files use a
small versioned binary header followed by the raw payload so round-trips
are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .rng import RngStream

MAGIC = b"TSCL"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIB3x")  # magic, version, N, N_ts, T, C, n_classes, has_labels, pad

SPLIT_TAGS = ("unlabeled", "train", "val", "test")

MIN_TIMESTEPS = 8


class DataFormatError(Exception):
    """File is not a valid dataset container (bad magic or version)."""


class DataCorruptionError(DataFormatError):
    """Container header is valid but the payload is truncated."""


class ValidationError(ValueError):
    """Contents violate a dataset invariant."""


@dataclass(frozen=True)
class TimeSeries:
    """One (T, C) sequence of finite reflectance-like values."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError(f"time series must be 2-d (T, C), got shape {v.shape}")
        t, c = v.shape
        if t < MIN_TIMESTEPS or c < 1:
            raise ValidationError(f"need T >= {MIN_TIMESTEPS} and C >= 1, got T={t}, C={c}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("time series contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Sample:
    """A set of aligned time series sharing one optional label."""

    series: np.ndarray  # (N_ts, T, C)
    label: Optional[int] = None

    def __post_init__(self):
        s = np.asarray(self.series)
        if s.ndim != 3 or s.shape[0] < 1:
            raise ValidationError(f"sample series must be (N_ts, T, C) with N_ts >= 1, got {s.shape}")
        object.__setattr__(self, "series", s)

    @property
    def n_series(self) -> int:
        return self.series.shape[0]

    def time_series(self, i: int) -> TimeSeries:
        return TimeSeries(self.series[i])


@dataclass
class Dataset:
    """Immutable-after-construction container of samples.

    values: (N, N_ts, T, C) float32; labels: (N,) uint32 or None.
    """

    values: np.ndarray
    labels: Optional[np.ndarray]
    n_classes: int
    split_tag: str = "unlabeled"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
        self.validate()

    def validate(self):
        if self.values.ndim != 4:
            raise ValidationError(f"values must be (N, N_ts, T, C), got shape {self.values.shape}")
        n, n_ts, t, c = self.values.shape
        if n < 1:
            raise ValidationError("dataset is empty")
        if n_ts < 1 or t < MIN_TIMESTEPS or c < 1:
            raise ValidationError(f"need N_ts >= 1, T >= {MIN_TIMESTEPS}, C >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("dataset contains non-finite values")
        if self.split_tag not in SPLIT_TAGS:
            raise ValidationError(f"unknown split tag {self.split_tag!r}")
        if self.n_classes < 1:
            raise ValidationError("n_classes must be >= 1")
        if self.split_tag != "unlabeled":
            if self.labels is None:
                raise ValidationError(f"split {self.split_tag!r} requires labels")
            if self.labels.shape != (n,):
                raise ValidationError(f"labels shape {self.labels.shape} does not match N={n}")
            if self.labels.max(initial=0) >= self.n_classes:
                raise ValidationError(
                    f"label {int(self.labels.max())} outside [0, {self.n_classes})"
                )
        elif self.labels is not None:
            raise ValidationError("unlabeled split must not carry labels")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def sample(self, i: int) -> Sample:
        label = None if self.labels is None else int(self.labels[i])
        return Sample(self.values[i], label)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.shape != other.shape or self.n_classes != other.n_classes:
            return False
        if self.split_tag != other.split_tag:
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        return self.values.tobytes() == other.values.tobytes()

    __hash__ = None


def save_dataset(ds: Dataset, path) -> None:
    """Write ds to path in the binary container format."""
    ds.validate()
    n, n_ts, t, c = ds.shape
    has_labels = ds.labels is not None
    header = _HEADER.pack(MAGIC, VERSION, n, n_ts, t, c, ds.n_classes, int(has_labels))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ds.values.astype("<f4", copy=False).tobytes())
        if has_labels:
            fh.write(ds.labels.astype("<u4", copy=False).tobytes())


def load_dataset(path, split_tag: Optional[str] = None) -> Dataset:
    """Read a dataset container.

    split_tag overrides the tag of the returned Dataset; by default files
    without labels load as "unlabeled" and labeled files as "train".
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: file shorter than header")
    magic, version, n, n_ts, t, c, n_classes, has_labels = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    n_vals = n * n_ts * t * c
    expected = _HEADER.size + 4 * n_vals + (4 * n if has_labels else 0)
    if len(raw) != expected:
        raise DataCorruptionError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", count=n_vals, offset=_HEADER.size)
    values = values.reshape(n, n_ts, t, c)
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=_HEADER.size + 4 * n_vals)
    if split_tag is None:
        split_tag = "train" if has_labels else "unlabeled"
    return Dataset(values.copy(), None if labels is None else labels.copy(), n_classes, split_tag)


def select_group_indices(n_ts: int, g: int, rng: RngStream) -> np.ndarray:
    """Draw g distinct series indices uniformly without replacement."""
    if not 1 <= g <= n_ts:
        raise ValueError(f"group size {g} outside [1, {n_ts}]")
    gen = rng.generator()
    return gen.permutation(n_ts)[:g]


def select_group(sample: Sample, g: int, rng: RngStream) -> list[TimeSeries]:
    """Randomly pick g member series of a sample, in draw order."""
    idx = select_group_indices(sample.n_series, g, rng)
    return [sample.time_series(int(i)) for i in idx]
