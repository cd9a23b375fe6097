"""Command-line surface: train, detect, inject, eval, dendrogram, experiment.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 insufficient
data.  Flags override values from an optional JSON config file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .ahc import AhcConfig, format_dendrogram, run_ahc
from .core import DistanceKind, TimeSeries, extract_subsequences
from .detect import detect_offline, detect_online, format_events, format_scores, parse_scores
from .errors import (
    AndriError,
    BadParam,
    FormatError,
    InsufficientData,
    ManifestError,
    UndefinedMetric,
)
from .model import LearnConfig, deserialize_model, learn_normal_model, serialize_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INSUFFICIENT = 4


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of defaults; flags win")
    p.add_argument("--subseq-len", type=int, default=100,
                   help="detection subsequence length (default 100)")
    p.add_argument("--pattern-factor", type=int, default=2,
                   help="pattern length as a multiple of --subseq-len (default 2)")
    p.add_argument("--wmax-factor", type=int, default=50,
                   help="currency-window cap as a multiple of --subseq-len (default 50)")
    p.add_argument("--min-cluster-frac", type=float, default=0.01,
                   help="min cluster size as a fraction of the tile count (default 0.01)")
    p.add_argument("--adjacency-k", type=int, default=1,
                   help="clustering adjacency radius in tiles (default 1)")
    p.add_argument("--distance", choices=["zero_mean", "znorm"], default="zero_mean",
                   help="distance kernel (default zero_mean)")
    p.add_argument("--eta", type=float, default=None,
                   help="membership decay rate; default halves one threshold out")
    p.add_argument("--seed", type=int, default=0, help="seed for seeded subcommands")


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    if not getattr(args, "config", None):
        return
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"config file: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("config file must hold a JSON object")
    explicit = {a for a in sys.argv if a.startswith("--")}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise FormatError(f"config file: unknown key {key!r}")
        if f"--{key}" not in explicit:
            setattr(args, dest, value)


def _learn_config(args: argparse.Namespace) -> LearnConfig:
    return LearnConfig(
        subseq_len=args.subseq_len,
        pattern_len=args.pattern_factor * args.subseq_len,
        w_max=args.wmax_factor * args.subseq_len,
        ahc=AhcConfig(k=args.adjacency_k, r_min=args.min_cluster_frac),
        distance_kind=DistanceKind(args.distance),
        eta=args.eta,
    )


def cmd_train(args) -> int:
    series = bench.read_series(args.input)
    model = learn_normal_model(series, _learn_config(args))
    Path(args.output).write_bytes(serialize_model(model))
    print(f"patterns: {len(model.patterns)}")
    print(f"window_pts: {model.window_pts}")
    for p in model.patterns:
        print(
            f"pattern {p.id}: dist_threshold={p.dist_threshold:.6g} "
            f"freq_threshold={p.freq_threshold:.6g} tiles={len(p.source_tiles)}"
        )
    return EXIT_OK


def cmd_detect(args) -> int:
    series = bench.read_series(args.input)
    if args.mode == "online":
        if not args.model:
            print("error: online mode requires --model", file=sys.stderr)
            return EXIT_USAGE
        model = deserialize_model(Path(args.model).read_bytes())
        result = detect_online(series.values, model)
    else:
        if args.model:
            model = deserialize_model(Path(args.model).read_bytes())
            from .detect import _score_temporal_nearest

            result = _score_temporal_nearest(series.values, model)
        else:
            result = detect_offline(series, _learn_config(args))
    Path(args.scores).write_text(format_scores(result))
    if args.events:
        Path(args.events).write_text(format_events(result))
    print(f"scored {len(result)} positions, {len(result.events)} events")
    return EXIT_OK


def cmd_inject(args) -> int:
    series = bench.read_series(args.input)
    spec = bench.InjectionSpec(
        anomaly_fraction=args.fraction,
        scale_range=(args.scale[0], args.scale[1]),
        placement=bench.Placement(args.placement),
        anomaly_length=args.length,
        seed=args.seed,
    )
    injected = bench.inject_anomalies(series, spec)
    bench.write_series(args.output, injected)
    print(f"labeled points: {int(injected.labels.sum())}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scores = parse_scores(Path(args.scores).read_text())
    series = bench.read_series(args.series)
    if series.labels is None:
        raise UndefinedMetric("series file carries no labels")
    intervals = bench.read_drift_intervals(args.drift) if args.drift else None
    report = bench.auc_roc(scores, series.labels, drift_intervals=intervals, top_k=args.top_k)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_dendrogram(args) -> int:
    series = bench.read_series(args.input)
    config = _learn_config(args).resolved()
    tiles = extract_subsequences(series, config.pattern_len, config.pattern_len)
    _, dendro = run_ahc(tiles, config.ahc, config.distance_kind)
    Path(args.output).write_text(format_dendrogram(dendro))
    print(f"levels: {len(dendro.levels)}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    results = bench.run_experiment(args.manifest, outdir=args.outdir)
    for overrides, report in results:
        tag = ", ".join(f"{k}={v}" for k, v in sorted(overrides.items())) or "default"
        print(f"{tag}: auc={report.auc:.4f} pos={report.n_positive} neg={report.n_negative}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="andri", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a normal model from a series file")
    p.add_argument("--input", "-i", required=True, type=Path)
    p.add_argument("--output", "-o", required=True, type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score a series offline or online")
    p.add_argument("--input", "-i", required=True, type=Path)
    p.add_argument("--model", "-m", type=Path)
    p.add_argument("--mode", choices=["offline", "online"], default="offline")
    p.add_argument("--scores", required=True, type=Path)
    p.add_argument("--events", type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("inject", help="inject scaled anomaly segments")
    p.add_argument("--input", "-i", required=True, type=Path)
    p.add_argument("--output", "-o", required=True, type=Path)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--scale", type=float, nargs=2, default=(1.5, 3.0))
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--placement", choices=[p.value for p in bench.Placement], default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("eval", help="join scores with labels and report AUC")
    p.add_argument("--scores", required=True, type=Path)
    p.add_argument("--series", required=True, type=Path)
    p.add_argument("--drift", type=Path)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--output", "-o", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dendrogram", help="dump the clustering audit log")
    p.add_argument("--input", "-i", required=True, type=Path)
    p.add_argument("--output", "-o", required=True, type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_dendrogram)

    p = sub.add_parser("experiment", help="run a manifest, optionally sweeping axes")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--outdir", type=Path)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, parser)
        return args.func(args)
    except InsufficientData as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (FormatError, ManifestError, UndefinedMetric, BadParam) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AndriError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
