"""Online and offline anomaly detection against a dynamic normal model.

The detector consumes one point at a time.  Every completed subsequence gets
a raw distance to the nearest currently-active pattern; the emitted score for
position j is the minimum raw distance over the trailing window of
subsequences covering j, so scores never depend on future data.  Pattern
activity is re-evaluated once per tile from the window-averaged memberships,
and when no pattern is active the detector tries to learn a new one from the
buffered window.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DistanceKind, PatternWindows, TimeSeries, normalize_rows
from .errors import BadParam, InsufficientData, NoPatterns, NonFiniteInput
from .core import extract_subsequences
from .model import (
    LearnConfig,
    NormalModel,
    NormalPattern,
    _build_patterns,
    learn_normal_model,
)

__all__ = [
    "DriftEventKind",
    "DriftEvent",
    "ScoreSeries",
    "DetectorState",
    "step",
    "update_active_set",
    "admit_new_pattern",
    "anomaly_score",
    "detect_online",
    "detect_offline",
    "format_scores",
    "format_events",
    "parse_scores",
]


class DriftEventKind(enum.Enum):
    ACTIVATED = "activated"
    DEACTIVATED = "deactivated"
    NEW_PATTERN = "new_pattern"


@dataclass(frozen=True)
class DriftEvent:
    at: int
    kind: DriftEventKind
    pattern_id: int


@dataclass(frozen=True)
class ScoreSeries:
    """Per-subsequence anomaly scores plus the drift events emitted."""

    scores: np.ndarray
    pattern_ids: np.ndarray
    events: tuple[DriftEvent, ...] = ()

    def __len__(self) -> int:
        return self.scores.size


class DetectorState:
    """Single-owner state machine advancing over one stream.

    The model is copied at construction; admission appends to the copy and
    never removes patterns.  `snapshot()` returns an independent ScoreSeries
    of everything emitted so far.
    """

    def __init__(self, model: NormalModel, learn_config: LearnConfig | None = None):
        if not model.patterns:
            raise NoPatterns("model has no patterns")
        self.model = replace(model)  # shallow copy; patterns tuple grows only
        self.subseq_len = model.subseq_len
        self.pattern_len = model.pattern_len
        self.window_pts = model.window_pts
        self.history_cap = max(1, math.ceil(model.window_pts / model.pattern_len))
        self.learn_config = (learn_config or LearnConfig(
            subseq_len=model.subseq_len,
            pattern_len=model.pattern_len,
            w_max=model.window_pts,
            distance_kind=model.distance_kind,
            eta=model.eta,
        )).resolved()
        self.buffer: deque[float] = deque(maxlen=max(self.window_pts, self.pattern_len))
        self.position = 0
        self.active: dict[int, bool] = {p.id: p.active for p in model.patterns}
        self.histories: dict[int, deque] = {
            p.id: deque(maxlen=self.history_cap) for p in model.patterns
        }
        self.events: list[DriftEvent] = []
        self.scores: list[float] = []
        self.pattern_ids: list[int] = []
        self.raw_tail: deque[float] = deque(maxlen=self.subseq_len)
        self.cooldown_until = 0
        self._windows: dict[int, PatternWindows] = {}

    # -- helpers ---------------------------------------------------------------

    def pattern_window(self, p: NormalPattern) -> PatternWindows:
        pw = self._windows.get(p.id)
        if pw is None:
            pw = PatternWindows.from_pattern(p.centroid, self.subseq_len, self.model.distance_kind)
            self._windows[p.id] = pw
        return pw

    def active_pool(self) -> tuple[NormalPattern, ...]:
        pool = tuple(p for p in self.model.patterns if self.active[p.id])
        return pool

    def scoring_pool(self) -> tuple[NormalPattern, ...]:
        # While no pattern is active, score against the whole model so the
        # emitted magnitude stays meaningful; admission handles the rest.
        return self.active_pool() or self.model.patterns

    def in_warmup(self) -> bool:
        # The active set needs one full currency window to stabilize;
        # transitions inside it are initialization, not drift.
        return self.position <= self.window_pts

    def snapshot(self) -> ScoreSeries:
        return ScoreSeries(
            scores=np.asarray(self.scores, dtype=np.float64),
            pattern_ids=np.asarray(self.pattern_ids, dtype=np.int64),
            events=tuple(self.events),
        )

    def _tile_membership(self, tile: np.ndarray, p: NormalPattern) -> float:
        kind = self.model.distance_kind
        nt = normalize_rows(tile[None, :], kind)[0]
        nc = normalize_rows(np.asarray(p.centroid)[None, :], kind)[0]
        d = float(np.sqrt(np.sum((nt - nc) ** 2)))
        if d <= p.dist_threshold:
            return 1.0
        return float(math.exp(-p.decay * (d - p.dist_threshold)))


def step(state: DetectorState, next_point: float):
    """Advance one point; returns ((index, score, pattern_id) or None, events)."""
    x = float(next_point)
    if not math.isfinite(x):
        raise NonFiniteInput(f"stream value {next_point!r} is not finite")
    state.buffer.append(x)
    state.position += 1
    events: list[DriftEvent] = []

    emission = None
    if state.position >= state.subseq_len:
        emission = _score_current(state)

    if state.position % state.pattern_len == 0 and state.position >= state.pattern_len:
        events.extend(_tile_update(state))

    if not state.active_pool():
        admitted = _maybe_admit(state)
        if admitted is not None:
            events.append(admitted)

    state.events.extend(events)
    return emission, events


def _score_current(state: DetectorState):
    seq = np.asarray(state.buffer, dtype=np.float64)[-state.subseq_len :]
    pool = state.scoring_pool()
    best_d = math.inf
    best_id = pool[0].id
    for p in sorted(pool, key=lambda q: q.id):
        d = float(state.pattern_window(p).min_distances(seq[None, :])[0])
        if d < best_d:
            best_d, best_id = d, p.id
    score = min(best_d, min(state.raw_tail)) if state.raw_tail else best_d
    state.raw_tail.append(best_d)
    j = state.position - state.subseq_len
    state.scores.append(score)
    state.pattern_ids.append(best_id)
    return j, score, best_id


def _tile_update(state: DetectorState) -> list[DriftEvent]:
    tile = np.asarray(state.buffer, dtype=np.float64)[-state.pattern_len :]
    for p in state.model.patterns:
        state.histories[p.id].append(state._tile_membership(tile, p))
    activated, deactivated = update_active_set(state)
    if state.in_warmup():
        return []
    out = [DriftEvent(state.position, DriftEventKind.ACTIVATED, pid) for pid in activated]
    out += [DriftEvent(state.position, DriftEventKind.DEACTIVATED, pid) for pid in deactivated]
    return out


def update_active_set(state: DetectorState) -> tuple[list[int], list[int]]:
    """Re-evaluate every pattern's activity from its membership history.

    A pattern with history is active exactly when the window-average
    membership meets its frequency threshold (inclusive); patterns without
    samples yet keep their current flag.  Returns (activated, deactivated)
    pattern ids, sorted.
    """
    activated, deactivated = [], []
    for p in state.model.patterns:
        hist = state.histories[p.id]
        if not hist:
            continue
        now = (sum(hist) / len(hist)) >= p.freq_threshold
        was = state.active[p.id]
        if now and not was:
            activated.append(p.id)
        elif was and not now:
            deactivated.append(p.id)
        state.active[p.id] = now
    return sorted(activated), sorted(deactivated)


def admit_new_pattern(state: DetectorState) -> NormalPattern | None:
    """Try to learn a new pattern from the buffered window.

    The candidate with the highest frequency threshold is admitted only when
    it is farther than every existing pattern's distance threshold from that
    pattern and at least as frequent as the least demanding existing pattern.
    Returns the admitted pattern, or None (a normal outcome).
    """
    if len(state.buffer) < state.window_pts:
        return None
    window_vals = np.asarray(state.buffer, dtype=np.float64)[-state.window_pts :]
    if window_vals.size < 2 * state.pattern_len:
        return None
    tiles = extract_subsequences(
        TimeSeries(window_vals, name="window"), state.pattern_len, state.pattern_len
    )
    candidates, _, _, _ = _build_patterns(tiles, state.learn_config)
    if not candidates:
        return None
    cand = sorted(candidates, key=lambda c: (-c.freq_threshold, c.dist_threshold, c.id))[0]
    kind = state.model.distance_kind
    nc = normalize_rows(np.asarray(cand.centroid)[None, :], kind)[0]
    for p in state.model.patterns:
        np_ = normalize_rows(np.asarray(p.centroid)[None, :], kind)[0]
        if float(np.sqrt(np.sum((nc - np_) ** 2))) <= p.dist_threshold:
            return None
    if cand.freq_threshold <= min(p.freq_threshold for p in state.model.patterns):
        return None

    new_id = max(p.id for p in state.model.patterns) + 1
    window_start = state.position - state.window_pts
    admitted = replace(
        cand,
        id=new_id,
        born_at=state.position,
        active=True,
        source_tiles=tuple(window_start + t * state.pattern_len for t in cand.source_tiles),
    )
    state.model = replace(state.model, patterns=state.model.patterns + (admitted,))
    state.active[new_id] = True
    hist = deque(maxlen=state.history_cap)
    # Seed the history from the stream's own tile grid inside the buffer.
    buf = np.asarray(state.buffer, dtype=np.float64)
    buf_start = state.position - buf.size
    boundary = (state.position // state.pattern_len) * state.pattern_len
    starts = []
    b = boundary
    while b - state.pattern_len >= buf_start and len(starts) < state.history_cap:
        starts.append(b - state.pattern_len)
        b -= state.pattern_len
    for s in reversed(starts):
        tile = buf[s - buf_start : s - buf_start + state.pattern_len]
        hist.append(state._tile_membership(tile, admitted))
    state.histories[new_id] = hist
    return admitted


def _maybe_admit(state: DetectorState) -> DriftEvent | None:
    if state.position < state.cooldown_until:
        return None
    admitted = admit_new_pattern(state)
    if admitted is None:
        # An almost identical window would re-cluster every step; wait a tile.
        state.cooldown_until = state.position + state.pattern_len
        return None
    return DriftEvent(state.position, DriftEventKind.NEW_PATTERN, admitted.id)


def anomaly_score(state: DetectorState, s) -> float:
    """Distance from a subsequence to the nearest active pattern (or nearest
    pattern overall while none is active)."""
    if not state.model.patterns:
        raise NoPatterns("no patterns to score against")
    seq = np.asarray(getattr(s, "values", s), dtype=np.float64)
    best = math.inf
    for p in sorted(state.scoring_pool(), key=lambda q: q.id):
        d = float(state.pattern_window(p).min_distances(seq[None, :])[0])
        best = min(best, d)
    return best


# -- batch drivers ---------------------------------------------------------------


def _trailing_min(raw: np.ndarray, carry: np.ndarray, width: int) -> np.ndarray:
    """Minimum over the trailing `width` raws (current included) per element."""
    pad = np.full(max(width - 1 - carry.size, 0), np.inf)
    joined = np.concatenate([pad, carry[-(width - 1) :] if width > 1 else carry[:0], raw])
    windows = np.lib.stride_tricks.sliding_window_view(joined, width)
    return windows.min(axis=1)


def detect_online(stream, model: NormalModel, learn_config: LearnConfig | None = None) -> ScoreSeries:
    """Run the online detector over a whole stream and collect its output.

    Accepts an array-like or TimeSeries.  Equivalent to folding `step` over
    the stream; contiguous stretches where the active set cannot change are
    scored in vectorized blocks.
    """
    values = np.asarray(getattr(stream, "values", stream), dtype=np.float64)
    if values.ndim != 1:
        raise BadParam("stream must be one-dimensional")
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("stream values must be finite")
    state = DetectorState(model, learn_config)
    n = values.size
    ell = state.subseq_len
    L = state.pattern_len
    if n < ell:
        return ScoreSeries(np.empty(0), np.empty(0, dtype=np.int64), ())

    subseqs = np.lib.stride_tricks.sliding_window_view(values, ell)
    pos = 0
    while pos < n:
        boundary = min(((pos // L) + 1) * L, n)
        if state.active_pool():
            _score_block(state, subseqs, pos, boundary, values)
            pos = boundary
        else:
            # Admission can fire anywhere in here; fall back to single steps.
            while pos < boundary:
                step(state, values[pos])
                pos += 1
                if state.active_pool() and pos % L != 0:
                    break
    return state.snapshot()


def _score_block(state: DetectorState, subseqs: np.ndarray, pos: int, boundary: int, values: np.ndarray):
    """Score all completions in (pos, boundary] with a frozen active pool,
    then run the tile update at the boundary. Mirrors `step` exactly."""
    ell = state.subseq_len
    j0 = len(state.scores)
    j1 = boundary - ell
    if j1 >= j0:
        block = subseqs[j0 : j1 + 1]
        pool = sorted(state.active_pool(), key=lambda p: p.id)
        dists = np.stack([state.pattern_window(p).min_distances(block) for p in pool])
        raw = dists.min(axis=0)
        ids = np.asarray([p.id for p in pool])[dists.argmin(axis=0)]
        carry = np.asarray(state.raw_tail, dtype=np.float64)
        scores = _trailing_min(raw, carry, ell + 1)
        state.scores.extend(scores.tolist())
        state.pattern_ids.extend(ids.tolist())
        state.raw_tail.extend(raw[-ell:].tolist())
    state.buffer.extend(values[pos:boundary])
    state.position = boundary
    if boundary % state.pattern_len == 0 and boundary >= state.pattern_len:
        events = _tile_update(state)
        state.events.extend(events)
        if not state.active_pool():
            admitted = _maybe_admit(state)
            if admitted is not None:
                state.events.append(admitted)


def detect_offline(series: TimeSeries, config: LearnConfig, return_model: bool = False):
    """Train on the whole series, then score every position against the
    pattern whose training occurrences lie closest in time."""
    config = config.resolved()
    if len(series) < 2 * config.pattern_len:
        raise InsufficientData(
            f"need at least {2 * config.pattern_len} points, got {len(series)}"
        )
    model = learn_normal_model(series, config)
    scores = _score_temporal_nearest(series.values, model)
    if return_model:
        return scores, model
    return scores


def _score_temporal_nearest(values: np.ndarray, model: NormalModel) -> ScoreSeries:
    ell = model.subseq_len
    n = values.size
    if n < ell:
        return ScoreSeries(np.empty(0), np.empty(0, dtype=np.int64), ())
    starts = np.arange(n - ell + 1)
    # Distance from each position to the nearest training occurrence of each
    # pattern, in points.
    nearest = np.full((len(model.patterns), starts.size), np.inf)
    for row, p in enumerate(model.patterns):
        occ = np.asarray(sorted(p.source_tiles), dtype=np.float64) * model.pattern_len
        if occ.size == 0:
            continue
        idx = np.searchsorted(occ, starts)
        left = occ[np.clip(idx - 1, 0, occ.size - 1)]
        right = occ[np.clip(idx, 0, occ.size - 1)]
        nearest[row] = np.minimum(np.abs(starts - left), np.abs(starts - right))
    assignment = nearest.argmin(axis=0)
    subseqs = np.lib.stride_tricks.sliding_window_view(values, ell)
    raw = np.empty(starts.size)
    ids = np.empty(starts.size, dtype=np.int64)
    for row, p in enumerate(model.patterns):
        mask = assignment == row
        if not mask.any():
            continue
        pw = PatternWindows.from_pattern(p.centroid, ell, model.distance_kind)
        raw[mask] = pw.min_distances(subseqs[mask])
        ids[mask] = p.id
    scores = _trailing_min(raw, np.empty(0), ell + 1)
    return ScoreSeries(scores=scores, pattern_ids=ids, events=())


# -- text formats -----------------------------------------------------------------


def format_scores(result: ScoreSeries) -> str:
    lines = [
        f"{i},{s:.12g},{int(pid)}"
        for i, (s, pid) in enumerate(zip(result.scores, result.pattern_ids))
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def format_events(result: ScoreSeries) -> str:
    lines = [f"{e.at},{e.kind.value},{e.pattern_id}" for e in result.events]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_scores(text: str) -> np.ndarray:
    """Read back a score file; returns the score column."""
    scores = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise BadParam(f"line {lineno}: expected index,score,pattern_id")
        scores.append(float(parts[1]))
    return np.asarray(scores, dtype=np.float64)
