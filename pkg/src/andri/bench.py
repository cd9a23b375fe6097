"""Synthetic generation, anomaly/drift injection, and AUC-ROC evaluation.

Everything here is deterministic given a seed; each experiment component
draws from its own named substream so component order never perturbs draws.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import DistanceKind, TimeSeries
from .detect import ScoreSeries, detect_offline, detect_online
from .errors import (
    BadParam,
    FormatError,
    Infeasible,
    ManifestError,
    UndefinedMetric,
)
from .model import LearnConfig, learn_normal_model

__all__ = [
    "Placement",
    "DriftKind",
    "InjectionSpec",
    "DriftSpec",
    "DriftInterval",
    "EvalReport",
    "generate_base",
    "inject_anomalies",
    "inject_drift",
    "auc_roc",
    "run_experiment",
    "read_series",
    "write_series",
    "read_drift_intervals",
    "write_drift_intervals",
    "MANIFEST_HEADER",
]

MANIFEST_HEADER = "andri-exp/1"


class Placement(enum.Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"
    RAYLEIGH = "rayleigh"
    INVERSE_RAYLEIGH = "inverse_rayleigh"


class DriftKind(enum.Enum):
    ABRUPT = "abrupt"
    GRADUAL = "gradual"
    RECURRING = "recurring"


@dataclass(frozen=True)
class InjectionSpec:
    """Where and how strongly to scale injected anomaly segments."""

    anomaly_fraction: float
    scale_range: tuple[float, float] = (1.5, 3.0)
    placement: Placement = Placement.UNIFORM
    anomaly_length: int = 100
    seed: int = 0
    placement_scale: float | None = None  # distribution scale; default n/4
    scale_sigma: float = 0.0  # >0 draws the factor from N(midpoint, sigma)

    def __post_init__(self):
        if not 0.0 < self.anomaly_fraction < 0.5:
            raise BadParam("anomaly_fraction must be in (0, 0.5)")
        lo, hi = self.scale_range
        if lo > hi:
            raise BadParam("scale_range must be (low, high) with low <= high")
        if not (lo > 1.0 or hi < 1.0):
            raise BadParam("scale_range must exclude identity scaling")
        if self.anomaly_length < 1:
            raise BadParam("anomaly_length must be positive")


@dataclass(frozen=True)
class DriftSpec:
    """How to compose source series into a drifting one."""

    kind: DriftKind
    n_drifts: int
    transition_fraction: float = 0.0
    base_patterns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_drifts < 0:
            raise BadParam("n_drifts must be nonnegative")
        if not 0.0 <= self.transition_fraction <= 0.5:
            raise BadParam("transition_fraction must be in [0, 0.5]")
        if self.kind is DriftKind.GRADUAL and self.transition_fraction <= 0.0:
            raise BadParam("gradual drift needs transition_fraction > 0")


@dataclass(frozen=True)
class DriftInterval:
    start: int
    end: int
    kind: str


@dataclass(frozen=True)
class EvalReport:
    auc: float
    n_positive: int
    n_negative: int
    top_k: int = 0
    fp_top_k: int = 0
    fp_per_window: tuple[int, ...] = ()
    fp_outside_windows: int = 0

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "top_k": self.top_k,
            "fp_top_k": self.fp_top_k,
            "fp_per_window": list(self.fp_per_window),
            "fp_outside_windows": self.fp_outside_windows,
        }


def _rng(seed: int, *component: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=component))


# -- generation -------------------------------------------------------------------

_WAVEFORMS = {
    "sine": lambda phase: np.sin(2.0 * np.pi * phase),
    "square": lambda phase: np.sign(np.sin(2.0 * np.pi * phase)),
    "mixed-harmonic": lambda phase: (
        np.sin(2.0 * np.pi * phase) + 0.6 * np.sin(6.0 * np.pi * phase + 0.5)
    ),
    "sawtooth": lambda phase: 2.0 * (phase - np.floor(phase + 0.5)),
}


def generate_base(series_kind: str, period: int, n: int, noise_std: float, seed: int) -> TimeSeries:
    """Deterministic periodic series of one of the named waveform kinds."""
    if series_kind not in _WAVEFORMS:
        raise BadParam(f"unknown series kind {series_kind!r}; choose from {sorted(_WAVEFORMS)}")
    if period < 4:
        raise BadParam("period must be >= 4")
    if n < 2 * period:
        raise BadParam("n must be >= 2 * period")
    if noise_std < 0.0:
        raise BadParam("noise_std must be nonnegative")
    phase = np.arange(n, dtype=np.float64) / period
    values = _WAVEFORMS[series_kind](phase)
    if noise_std > 0.0:
        values = values + _rng(seed, 0).normal(0.0, noise_std, size=n)
    return TimeSeries(values, labels=np.zeros(n, dtype=np.int8), name=f"{series_kind}-p{period}")


# -- anomaly injection --------------------------------------------------------------


def _draw_starts(rng, placement: Placement, n_segments: int, limit: int, scale: float) -> np.ndarray:
    if placement is Placement.UNIFORM:
        return rng.uniform(0, limit, size=n_segments)
    if placement is Placement.GAUSSIAN:
        return rng.normal(limit / 2.0, scale, size=n_segments)
    if placement is Placement.RAYLEIGH:
        return rng.rayleigh(scale, size=n_segments)
    # Mass near the end of the series: mirrored Rayleigh.
    return limit - rng.rayleigh(scale, size=n_segments)


def inject_anomalies(series: TimeSeries, spec: InjectionSpec) -> TimeSeries:
    """Scale randomly placed segments by a factor drawn from `scale_range`,
    labelling exactly the modified points."""
    n = len(series)
    seg = spec.anomaly_length
    n_segments = max(1, round(spec.anomaly_fraction * n / seg))
    if n_segments * seg > n // 2:
        raise Infeasible("requested anomaly mass exceeds half the series")
    limit = n - seg
    scale_param = spec.placement_scale if spec.placement_scale is not None else n / 4.0
    rng = _rng(spec.seed, 1)

    starts: list[int] = []
    for _ in range(200):
        need = n_segments - len(starts)
        if need <= 0:
            break
        raw = _draw_starts(rng, spec.placement, need, limit, scale_param)
        for s in np.clip(np.round(raw), 0, limit).astype(int):
            if all(abs(s - t) >= seg for t in starts):
                starts.append(int(s))
    if len(starts) < n_segments:
        raise Infeasible(
            f"could not place {n_segments} non-overlapping segments of {seg} points"
        )

    values = series.values.copy()
    labels = np.zeros(n, dtype=np.int8)
    lo, hi = spec.scale_range
    for s in sorted(starts):
        if spec.scale_sigma > 0.0:
            factor = float(rng.normal((lo + hi) / 2.0, spec.scale_sigma))
        else:
            factor = float(rng.uniform(lo, hi))
        values[s : s + seg] *= factor
        labels[s : s + seg] = 1
    return TimeSeries(values, labels=labels, name=series.name + "+anomalies")


# -- drift injection ----------------------------------------------------------------


def _segment_values(source: TimeSeries, start: int, length: int) -> np.ndarray:
    vals = source.values
    idx = (start + np.arange(length)) % vals.size
    return vals[idx]


def inject_drift(
    sources: list[TimeSeries], spec: DriftSpec, seed: int = 0
) -> tuple[TimeSeries, list[DriftInterval]]:
    """Concatenate segments drawn from the sources with abrupt, gradual, or
    recurring transitions; returns the series and exact drift intervals."""
    if not sources:
        raise BadParam("need at least one source series")
    if spec.n_drifts > 0 and len(sources) < 2:
        raise BadParam("drift needs at least two source series")
    if spec.kind is DriftKind.RECURRING and len(sources) < 2:
        raise BadParam("recurring drift needs at least two sources")
    n = min(len(s) for s in sources)
    if spec.n_drifts == 0:
        return TimeSeries(sources[0].values[:n].copy(), name=sources[0].name), []

    rng = _rng(seed, 2)
    seg_len = n // (spec.n_drifts + 1)
    cuts = [seg_len * i for i in range(1, spec.n_drifts + 1)]

    if spec.kind is DriftKind.RECURRING:
        order = [i % len(sources) for i in range(spec.n_drifts + 1)]
    else:
        order = [int(rng.integers(len(sources)))]
        for _ in range(spec.n_drifts):
            choices = [i for i in range(len(sources)) if i != order[-1]]
            order.append(int(rng.choice(choices)))

    bounds = [0] + cuts + [n]
    values = np.empty(n)
    for seg, src in enumerate(order):
        a, b = bounds[seg], bounds[seg + 1]
        values[a:b] = _segment_values(sources[src], a, b - a)

    intervals: list[DriftInterval] = []
    if spec.kind is DriftKind.GRADUAL:
        w = max(2, int(spec.transition_fraction * seg_len))
        for seg, cut in enumerate(cuts):
            old, new = order[seg], order[seg + 1]
            a = max(0, cut - w // 2)
            b = min(n, cut + w // 2)
            t = np.arange(a, b)
            p_new = 1.0 / (1.0 + np.exp(-4.0 * (t - cut) / w))
            take_new = rng.random(b - a) < p_new
            mixed = np.where(
                take_new,
                _segment_values(sources[new], a, b - a),
                _segment_values(sources[old], a, b - a),
            )
            values[a:b] = mixed
            intervals.append(DriftInterval(a, b, DriftKind.GRADUAL.value))
    else:
        kind = spec.kind.value
        intervals = [DriftInterval(c, c, kind) for c in cuts]

    return TimeSeries(values, name="drift-" + "-".join(s.name for s in sources)), intervals


# -- evaluation ---------------------------------------------------------------------


def auc_roc(
    scores,
    labels,
    drift_intervals: list[DriftInterval] | None = None,
    top_k: int | None = None,
) -> EvalReport:
    """Rank-based AUC (ties count half) plus a top-k false-positive table.

    `scores` may be a ScoreSeries or an array; when it is shorter than the
    labels (subsequence alignment), the labels are truncated to match.
    """
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    y = np.asarray(getattr(labels, "labels", labels))
    if y is None:
        raise UndefinedMetric("no labels provided")
    m = min(s.size, y.size)
    s, y = s[:m], y[:m].astype(bool)
    n_pos = int(y.sum())
    n_neg = int(m - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both positive and negative labels")

    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(m)
    sorted_scores = s[order]
    i = 0
    rank = 1
    while i < m:
        j = i
        while j + 1 < m and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (rank + rank + (j - i)) / 2.0
        rank += j - i + 1
        i = j + 1
    auc = float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))

    k = top_k if top_k is not None else n_pos
    k = min(k, m)
    top = np.argsort(-s, kind="mergesort")[:k]
    fp_idx = top[~y[top]]
    fp_per_window: list[int] = []
    fp_outside = int(fp_idx.size)
    if drift_intervals:
        in_any = np.zeros(fp_idx.size, dtype=bool)
        for interval in drift_intervals:
            hit = (fp_idx >= interval.start) & (fp_idx <= interval.end)
            fp_per_window.append(int(hit.sum()))
            in_any |= hit
        fp_outside = int((~in_any).sum())
    return EvalReport(
        auc=auc,
        n_positive=n_pos,
        n_negative=n_neg,
        top_k=int(k),
        fp_top_k=int(fp_idx.size),
        fp_per_window=tuple(fp_per_window),
        fp_outside_windows=fp_outside,
    )


# -- series / metadata files ---------------------------------------------------------


def write_series(path, series: TimeSeries, header: bool = False) -> None:
    lines = []
    if header:
        lines.append("value,label" if series.labels is not None else "value")
    if series.labels is not None:
        lines += [f"{v:.12g},{int(l)}" for v, l in zip(series.values, series.labels)]
    else:
        lines += [f"{v:.12g}" for v in series.values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_series(path, name: str | None = None) -> TimeSeries:
    """Read `value[,label]` lines; a non-numeric first line is a header."""
    values: list[float] = []
    labels: list[int] = []
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        try:
            values.append(float(parts[0]))
        except ValueError:
            if lineno == 1:
                continue  # header
            raise FormatError(f"{path}:{lineno}: not a number: {parts[0]!r}")
        if len(parts) > 2:
            raise FormatError(f"{path}:{lineno}: expected value[,label]")
        if len(parts) == 2:
            if parts[1] not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: label must be 0 or 1")
            labels.append(int(parts[1]))
    if labels and len(labels) != len(values):
        raise FormatError(f"{path}: labels present on some lines only")
    return TimeSeries(
        np.asarray(values),
        labels=np.asarray(labels, dtype=np.int8) if labels else None,
        name=name or path.stem,
    )


def write_drift_intervals(path, intervals: list[DriftInterval]) -> None:
    lines = [f"{iv.start},{iv.end},{iv.kind}" for iv in intervals]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_drift_intervals(path) -> list[DriftInterval]:
    out = []
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected start,end,kind")
        out.append(DriftInterval(int(parts[0]), int(parts[1]), parts[2]))
    return out


# -- experiment runner ----------------------------------------------------------------


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise ManifestError(f"{where}: missing key {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise ManifestError(f"{where}: {key!r} must be {kind}")
    return value


def load_manifest(path) -> dict:
    text = Path(path).read_text()
    header, _, body = text.partition("\n")
    if header.strip() != MANIFEST_HEADER:
        raise ManifestError(f"unsupported manifest header {header!r}")
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest body: {exc}") from exc
    _require(doc, "sources", list, "manifest")
    _require(doc, "detector", dict, "manifest")
    if not doc["sources"]:
        raise ManifestError("manifest: sources must be nonempty")
    return doc


def _set_dotted(doc: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            raise ManifestError(f"sweep key {dotted!r} does not resolve")
        cur = cur[k]
    if keys[-1] not in cur:
        raise ManifestError(f"sweep key {dotted!r} does not resolve")
    cur[keys[-1]] = value


def _learn_config_from(doc: dict) -> LearnConfig:
    subseq_len = int(doc.get("subseq_len", 100))
    return LearnConfig(
        subseq_len=subseq_len,
        pattern_len=int(doc["pattern_len"]) if "pattern_len" in doc else None,
        w_max=int(doc["w_max"]) if "w_max" in doc else None,
        distance_kind=DistanceKind(doc.get("distance_kind", "zero_mean")),
        eta=doc.get("eta"),
    )


def _run_single(doc: dict, outdir: Path | None, tag: str) -> EvalReport:
    seed = int(doc.get("seed", 0))
    sources = [
        generate_base(
            _require(g, "kind", str, "source"),
            int(_require(g, "period", int, "source")),
            int(_require(g, "n", int, "source")),
            float(g.get("noise_std", 0.0)),
            seed + idx,
        )
        for idx, g in enumerate(doc["sources"])
    ]
    intervals: list[DriftInterval] = []
    if doc.get("drift"):
        d = doc["drift"]
        spec = DriftSpec(
            kind=DriftKind(_require(d, "kind", str, "drift")),
            n_drifts=int(_require(d, "n_drifts", int, "drift")),
            transition_fraction=float(d.get("transition_fraction", 0.0)),
        )
        series, intervals = inject_drift(sources, spec, seed)
    else:
        series = sources[0]

    if doc.get("injection"):
        inj = doc["injection"]
        lo, hi = inj.get("scale", [1.5, 3.0])
        series = inject_anomalies(
            series,
            InjectionSpec(
                anomaly_fraction=float(_require(inj, "fraction", (int, float), "injection")),
                scale_range=(float(lo), float(hi)),
                placement=Placement(inj.get("placement", "uniform")),
                anomaly_length=int(inj.get("length", 100)),
                seed=seed,
                scale_sigma=float(inj.get("scale_sigma", 0.0)),
            ),
        )
    if series.labels is None or not series.labels.any():
        raise ManifestError("experiment series has no positive labels to evaluate")

    det = doc["detector"]
    config = _learn_config_from(det)
    mode = det.get("mode", "offline")
    if mode == "offline":
        result = detect_offline(series, config)
    elif mode == "online":
        train_frac = float(det.get("train_fraction", 0.3))
        cut = max(2 * config.resolved().pattern_len, int(train_frac * len(series)))
        model = learn_normal_model(TimeSeries(series.values[:cut], name="train"), config)
        result = detect_online(series.values[cut:], model)
        series = TimeSeries(series.values[cut:], labels=series.labels[cut:], name=series.name)
        intervals = [
            DriftInterval(max(iv.start - cut, 0), max(iv.end - cut, 0), iv.kind)
            for iv in intervals
            if iv.end >= cut
        ]
    else:
        raise ManifestError(f"unknown detector mode {mode!r}")

    report = auc_roc(result, series.labels, drift_intervals=intervals or None)
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        write_series(outdir / f"{tag}-series.csv", series)
        from .detect import format_events, format_scores

        (outdir / f"{tag}-scores.csv").write_text(format_scores(result))
        (outdir / f"{tag}-events.csv").write_text(format_events(result))
        write_drift_intervals(outdir / f"{tag}-drift.csv", intervals)
        (outdir / f"{tag}-report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return report


def run_experiment(manifest, outdir=None) -> list[tuple[dict, EvalReport]]:
    """Run a manifest (path or dict), optionally sweeping one or more axes.

    Returns (overrides, report) per run and writes artifacts when the
    manifest (or caller) names an output directory.
    """
    doc = load_manifest(manifest) if not isinstance(manifest, dict) else json.loads(json.dumps(manifest))
    if isinstance(manifest, dict):
        _require(doc, "sources", list, "manifest")
        _require(doc, "detector", dict, "manifest")
    out = Path(outdir) if outdir else (Path(doc["outdir"]) if doc.get("outdir") else None)

    sweep = doc.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ManifestError("sweep must be a mapping of dotted keys to value lists")
    for key, values in sweep.items():
        if not isinstance(values, list) or not values:
            raise ManifestError(f"sweep axis {key!r} must be a nonempty list")

    axes = sorted(sweep.items())
    combos = list(itertools.product(*[vals for _, vals in axes])) if axes else [()]
    results = []
    for combo in combos:
        run_doc = json.loads(json.dumps(doc))
        overrides = {}
        for (key, _), value in zip(axes, combo):
            _set_dotted(run_doc, key, value)
            overrides[key] = value
        tag = "run" + "".join(
            f"-{k.split('.')[-1]}={v}" for k, v in sorted(overrides.items())
        )
        results.append((overrides, _run_single(run_doc, out, tag or "run")))
    return results
