"""Foundational types, subsequence extraction, and distance kernels.

Everything here is immutable after construction and safe to share across
threads; the operations are pure functions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadParam,
    DegenerateInput,
    EmptyInput,
    LengthMismatch,
    NonFiniteInput,
)

__all__ = [
    "TimeSeries",
    "Subsequence",
    "DistanceKind",
    "extract_subsequences",
    "znorm_distance",
    "zeromean_distance",
    "pattern_distance",
    "normalize_rows",
]


class DistanceKind(enum.Enum):
    """Which subsequence kernel to use.

    ZERO_MEAN subtracts each sequence's mean only; it is the default because
    it is robust to small amplitude variations.  Z_NORMALIZED additionally
    divides by the standard deviation and is selectable for parity runs.
    """

    ZERO_MEAN = "zero_mean"
    Z_NORMALIZED = "znorm"


def _as_array(x) -> np.ndarray:
    values = getattr(x, "values", x)
    return np.asarray(values, dtype=np.float64)


@dataclass(frozen=True)
class TimeSeries:
    """Ordered real-valued samples with optional {0,1} ground-truth labels."""

    values: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise EmptyInput("a time series needs at least 2 samples")
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("time series values must be finite")
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int8)
            if labels.shape != values.shape:
                raise LengthMismatch("labels must match values in length")
            if not np.isin(labels, (0, 1)).all():
                raise BadParam("labels must be 0 or 1")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Subsequence:
    """A contiguous slice of a parent series, at least 2 points long."""

    start: int
    values: np.ndarray
    parent: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise EmptyInput("a subsequence needs at least 2 points")
        if self.start < 0:
            raise BadParam("start index must be nonnegative")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


def extract_subsequences(series: TimeSeries, length: int, stride: int) -> list[Subsequence]:
    """Slice `series` into subsequences of `length` starting at 0, stride, 2*stride, ...

    stride == length gives the non-overlapping training tiling; stride == 1
    gives the sliding detection stream.
    """
    if stride < 1:
        raise BadParam("stride must be >= 1")
    if length < 2:
        raise BadParam("subsequence length must be >= 2")
    values = series.values if isinstance(series, TimeSeries) else _as_array(series)
    n = values.size
    if length > n:
        raise EmptyInput(f"length {length} exceeds series length {n}")
    name = getattr(series, "name", "")
    return [
        Subsequence(start, values[start : start + length], name)
        for start in range(0, n - length + 1, stride)
    ]


def normalize_rows(rows: np.ndarray, kind: DistanceKind) -> np.ndarray:
    """Center (and for Z_NORMALIZED, scale) each row.

    Constant rows under Z_NORMALIZED become zero vectors instead of raising,
    so flat telemetry segments stay comparable inside pipelines.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    centered = rows - rows.mean(axis=1, keepdims=True)
    if kind is DistanceKind.ZERO_MEAN:
        return centered
    std = rows.std(axis=1, keepdims=True)
    safe = np.where(std > 0.0, std, 1.0)
    out = centered / safe
    out[std[:, 0] == 0.0] = 0.0
    return out


def zeromean_distance(a, b) -> float:
    """Euclidean distance after subtracting each sequence's mean."""
    va, vb = _as_array(a), _as_array(b)
    if va.size != vb.size:
        raise LengthMismatch(f"lengths differ: {va.size} vs {vb.size}")
    da = va - va.mean()
    db = vb - vb.mean()
    return float(np.sqrt(np.sum((da - db) ** 2)))


def znorm_distance(a, b) -> float:
    """Euclidean distance after z-normalizing both sequences.

    Raises DegenerateInput when either input is constant; pipeline callers
    fall back to the zero-vector convention via `normalize_rows`.
    """
    va, vb = _as_array(a), _as_array(b)
    if va.size != vb.size:
        raise LengthMismatch(f"lengths differ: {va.size} vs {vb.size}")
    sa, sb = va.std(), vb.std()
    if sa == 0.0 or sb == 0.0:
        raise DegenerateInput("constant input has no z-normalized form")
    da = (va - va.mean()) / sa
    db = (vb - vb.mean()) / sb
    return float(np.sqrt(np.sum((da - db) ** 2)))


def _kernel(a: np.ndarray, b: np.ndarray, kind: DistanceKind) -> float:
    na = normalize_rows(a[None, :], kind)[0]
    nb = normalize_rows(b[None, :], kind)[0]
    return float(np.sqrt(np.sum((na - nb) ** 2)))


def pattern_distance(s, p, kind: DistanceKind = DistanceKind.ZERO_MEAN) -> float:
    """Minimum kernel distance between `s` and every equal-length window of `p`.

    `s` must be no longer than `p`; with equal lengths this is the plain
    kernel distance.
    """
    vs, vp = _as_array(s), _as_array(p)
    if vs.size > vp.size:
        raise LengthMismatch(f"query length {vs.size} exceeds pattern length {vp.size}")
    if vs.size == vp.size:
        return _kernel(vs, vp, kind)
    windows = np.lib.stride_tricks.sliding_window_view(vp, vs.size)
    nw = normalize_rows(windows, kind)
    ns = normalize_rows(vs[None, :], kind)[0]
    d2 = np.sum((nw - ns) ** 2, axis=1)
    return float(np.sqrt(max(float(d2.min()), 0.0)))


@dataclass(frozen=True)
class PatternWindows:
    """Precomputed normalized windows of one pattern, for batched scoring."""

    kind: DistanceKind
    windows_t: np.ndarray = field(repr=False)  # (len, n_windows), normalized
    sq_norms: np.ndarray = field(repr=False)  # (n_windows,)

    @classmethod
    def from_pattern(cls, centroid: np.ndarray, query_len: int, kind: DistanceKind) -> "PatternWindows":
        centroid = np.asarray(centroid, dtype=np.float64)
        if query_len > centroid.size:
            raise LengthMismatch("query length exceeds pattern length")
        windows = np.lib.stride_tricks.sliding_window_view(centroid, query_len)
        nw = normalize_rows(windows, kind)
        return cls(kind=kind, windows_t=np.ascontiguousarray(nw.T), sq_norms=np.sum(nw**2, axis=1))

    def min_distances(self, queries: np.ndarray) -> np.ndarray:
        """Min window distance for each row of `queries` (already raw values)."""
        nq = normalize_rows(queries, self.kind)
        d2 = (
            np.sum(nq**2, axis=1)[:, None]
            + self.sq_norms[None, :]
            - 2.0 * (nq @ self.windows_t)
        )
        return np.sqrt(np.maximum(d2.min(axis=1), 0.0))
