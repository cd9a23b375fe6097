"""Learning the dynamic normal model: patterns, thresholds, currency window.

A trained model is a set of patterns, each a centroid over one cluster of
training tiles plus two thresholds: the distance within which a subsequence
counts as an instance of the pattern, and the minimum window-average
membership required for the pattern to be considered currently present.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ahc import AhcConfig, Cluster, Dendrogram, run_ahc
from .core import (
    DistanceKind,
    PatternWindows,
    Subsequence,
    TimeSeries,
    extract_subsequences,
    normalize_rows,
    pattern_distance,
)
from .errors import BadParam, DegenerateCluster, FormatError, InsufficientData

__all__ = [
    "NormalPattern",
    "NormalModel",
    "LearnConfig",
    "membership",
    "window_presence",
    "learn_normal_model",
    "serialize_model",
    "deserialize_model",
    "MODEL_FORMAT_HEADER",
]

MODEL_FORMAT_HEADER = "andri-model/1"
_DECAY_EPS = 1e-9


@dataclass(frozen=True)
class NormalPattern:
    """One normal pattern: centroid, thresholds, activity, provenance."""

    id: int
    centroid: np.ndarray
    dist_threshold: float  # max distance to count as an instance
    freq_threshold: float  # min window-average membership to be present
    active: bool = True
    born_at: int = 0
    decay: float = 1.0  # membership decay rate beyond the distance threshold
    source_tiles: tuple[int, ...] = ()

    def __post_init__(self):
        centroid = np.asarray(self.centroid, dtype=np.float64)
        if not np.all(np.isfinite(centroid)):
            raise BadParam("pattern centroid must be finite")
        if self.dist_threshold < 0.0:
            raise BadParam("distance threshold must be nonnegative")
        if not 0.0 <= self.freq_threshold <= 1.0:
            raise BadParam("frequency threshold must be in [0, 1]")
        object.__setattr__(self, "centroid", centroid)


@dataclass(frozen=True)
class NormalModel:
    """Trained collection of patterns plus the currency window size."""

    patterns: tuple[NormalPattern, ...]
    window_pts: int
    subseq_len: int
    pattern_len: int
    distance_kind: DistanceKind = DistanceKind.ZERO_MEAN
    eta: float | None = None  # None: per-pattern decay of ln(2)/dist_threshold

    def __post_init__(self):
        if not self.patterns:
            raise DegenerateCluster("a model needs at least one pattern")
        if self.subseq_len > self.pattern_len:
            raise BadParam("subsequence length cannot exceed pattern length")
        ids = [p.id for p in self.patterns]
        if len(ids) != len(set(ids)):
            raise BadParam("pattern ids must be unique")
        object.__setattr__(self, "patterns", tuple(self.patterns))

    @property
    def active_patterns(self) -> tuple[NormalPattern, ...]:
        return tuple(p for p in self.patterns if p.active)

    def get(self, pattern_id: int) -> NormalPattern:
        for p in self.patterns:
            if p.id == pattern_id:
                return p
        raise KeyError(pattern_id)


@dataclass(frozen=True)
class LearnConfig:
    """Training configuration; defaults follow the bolded parameter choices."""

    subseq_len: int = 100
    pattern_len: int | None = None  # default 2 * subseq_len
    w_max: int | None = None  # default 50 * subseq_len
    ahc: AhcConfig = field(default_factory=AhcConfig)
    distance_kind: DistanceKind = DistanceKind.ZERO_MEAN
    eta: float | None = None

    def resolved(self) -> "LearnConfig":
        pattern_len = self.pattern_len or 2 * self.subseq_len
        w_max = self.w_max or 50 * self.subseq_len
        if self.subseq_len < 2:
            raise BadParam("subseq_len must be >= 2")
        if pattern_len < self.subseq_len:
            raise BadParam("pattern_len must be >= subseq_len")
        if self.eta is not None and self.eta <= 0.0:
            raise BadParam("eta must be positive")
        return replace(self, pattern_len=pattern_len, w_max=w_max)


def _decay_for(dist_threshold: float, eta: float | None) -> float:
    if eta is not None:
        return eta
    return math.log(2.0) / max(dist_threshold, _DECAY_EPS)


def membership(s, p: NormalPattern, model: NormalModel) -> float:
    """Fuzzy membership of a subsequence in a pattern: 1 inside the distance
    threshold, exponentially decaying beyond it."""
    d = pattern_distance(s, p.centroid, model.distance_kind)
    if d <= p.dist_threshold:
        return 1.0
    return float(math.exp(-p.decay * (d - p.dist_threshold)))


def window_presence(window: list[Subsequence], p: NormalPattern, model: NormalModel) -> float:
    """Arithmetic mean of membership over a window's tiled subsequences."""
    if not window:
        raise BadParam("window must be nonempty")
    return float(np.mean([membership(s, p, model) for s in window]))


def _membership_values(dists: np.ndarray, tau: float, decay: float) -> np.ndarray:
    out = np.exp(-decay * np.maximum(dists - tau, 0.0))
    out[dists <= tau] = 1.0
    return out


def _min_window_presence(
    member_tiles: np.ndarray, phi: np.ndarray, window_pts: int, pattern_len: int
) -> float:
    """Minimum of the tile-windowed membership averages around a cluster.

    Windows are aligned to the tiling grid and confined to the span of the
    cluster's members when that span is at least one window long; otherwise a
    single window centred on the span (clipped to the series) is used.
    """
    n_tiles = phi.size
    w_tiles = max(2, min(window_pts // pattern_len, n_tiles))
    lo = int(member_tiles.min())
    hi = int(member_tiles.max()) + 1
    if hi - lo >= w_tiles:
        starts = range(lo, hi - w_tiles + 1)
    else:
        mid = (lo + hi - w_tiles) / 2.0
        starts = [int(min(max(round(mid), 0), n_tiles - w_tiles))]
    cumsum = np.concatenate(([0.0], np.cumsum(phi)))
    best = 1.0
    for s in starts:
        avg = (cumsum[s + w_tiles] - cumsum[s]) / w_tiles
        best = min(best, float(avg))
    return max(0.0, min(1.0, best))


def _build_patterns(
    tiles: list[Subsequence], config: LearnConfig
) -> tuple[list[NormalPattern], int, list[Cluster], Dendrogram]:
    """Cluster the training tiling and derive one pattern per usable cluster.

    Returns an empty pattern list when no cluster is large enough; callers
    decide whether that is an error or a rejected candidate."""
    config = config.resolved()
    clusters, dendro = run_ahc(tiles, config.ahc, config.distance_kind)
    sources = [c for c in clusters if c.size >= 2 and not c.anomaly_candidate]
    if not sources:
        return [], 0, clusters, dendro

    pattern_len = config.pattern_len
    min_size = min(c.size for c in sources)
    window_pts = min(config.w_max, 2 * min_size * pattern_len)

    tile_matrix = np.stack([t.values for t in tiles])
    norm_tiles = normalize_rows(tile_matrix, config.distance_kind)
    patterns = []
    for pid, cluster in enumerate(sources):
        idx = list(cluster.members)
        centroid = tile_matrix[idx].mean(axis=0)
        norm_centroid = normalize_rows(centroid[None, :], config.distance_kind)[0]
        all_dists = np.sqrt(np.sum((norm_tiles - norm_centroid) ** 2, axis=1))
        member_dists = all_dists[idx]
        tau = float(member_dists.mean() + 3.0 * member_dists.std())
        decay = _decay_for(tau, config.eta)
        phi = _membership_values(all_dists, tau, decay)
        nu = _min_window_presence(np.asarray(idx), phi, window_pts, pattern_len)
        patterns.append(
            NormalPattern(
                id=pid,
                centroid=centroid,
                dist_threshold=tau,
                freq_threshold=nu,
                active=True,
                born_at=int(min(idx)) * pattern_len,
                decay=decay,
                source_tiles=tuple(idx),
            )
        )
    return patterns, window_pts, clusters, dendro


def learn_normal_model(train: TimeSeries, config: LearnConfig) -> NormalModel:
    """Train a normal model on a series: cluster its non-overlapping tiling,
    average each usable cluster into a pattern, and derive both thresholds."""
    config = config.resolved()
    if len(train) < 2 * config.pattern_len:
        raise InsufficientData(
            f"need at least {2 * config.pattern_len} points, got {len(train)}"
        )
    tiles = extract_subsequences(train, config.pattern_len, config.pattern_len)
    patterns, window_pts, _, _ = _build_patterns(tiles, config)
    if not patterns:
        raise DegenerateCluster("no cluster of size >= 2 survived the size floor")
    return NormalModel(
        patterns=tuple(patterns),
        window_pts=window_pts,
        subseq_len=config.subseq_len,
        pattern_len=config.pattern_len,
        distance_kind=config.distance_kind,
        eta=config.eta,
    )


# -- persistence ------------------------------------------------------------------


def serialize_model(model: NormalModel) -> bytes:
    """Self-describing text document; stable byte-for-byte for equal models."""
    doc = {
        "subseq_len": model.subseq_len,
        "pattern_len": model.pattern_len,
        "window_pts": model.window_pts,
        "distance_kind": model.distance_kind.value,
        "eta": model.eta,
        "patterns": [
            {
                "id": p.id,
                "centroid": [float(v) for v in p.centroid],
                "dist_threshold": p.dist_threshold,
                "freq_threshold": p.freq_threshold,
                "active": p.active,
                "born_at": p.born_at,
                "decay": p.decay,
                "source_tiles": list(p.source_tiles),
            }
            for p in model.patterns
        ],
    }
    body = json.dumps(doc, indent=2, sort_keys=True)
    return (MODEL_FORMAT_HEADER + "\n" + body + "\n").encode("utf-8")


def deserialize_model(data: bytes) -> NormalModel:
    """Inverse of `serialize_model`; raises FormatError on malformed input."""
    try:
        text = data.decode("utf-8")
    except (UnicodeDecodeError, AttributeError) as exc:
        raise FormatError(f"not a text document: {exc}") from exc
    header, _, body = text.partition("\n")
    if header.strip() != MODEL_FORMAT_HEADER:
        raise FormatError(f"unsupported header {header!r}")
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed model body: {exc}") from exc
    try:
        kind = DistanceKind(doc["distance_kind"])
        patterns = tuple(
            NormalPattern(
                id=int(p["id"]),
                centroid=np.asarray(p["centroid"], dtype=np.float64),
                dist_threshold=float(p["dist_threshold"]),
                freq_threshold=float(p["freq_threshold"]),
                active=bool(p["active"]),
                born_at=int(p["born_at"]),
                decay=float(p["decay"]),
                source_tiles=tuple(int(t) for t in p.get("source_tiles", ())),
            )
            for p in doc["patterns"]
        )
        model = NormalModel(
            patterns=patterns,
            window_pts=int(doc["window_pts"]),
            subseq_len=int(doc["subseq_len"]),
            pattern_len=int(doc["pattern_len"]),
            distance_kind=kind,
            eta=None if doc["eta"] is None else float(doc["eta"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid model document: {exc}") from exc
    return model


def pattern_windows(model: NormalModel, p: NormalPattern) -> PatternWindows:
    """Normalized sliding windows of a pattern for batched distance queries."""
    return PatternWindows.from_pattern(p.centroid, model.subseq_len, model.distance_kind)
