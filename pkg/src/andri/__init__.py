"""Subsequence anomaly detection under concept drift.

A dynamic normal model whose patterns activate, deactivate, and grow over
time; temporal-locality-aware hierarchical clustering for learning them; an
online detector; and a synthetic benchmark harness.
"""

from .ahc import AhcConfig, Cluster, Dendrogram, find_cutoff, knn_adjacent_pairs, linkage_distance, run_ahc
from .bench import (
    DriftKind,
    DriftSpec,
    EvalReport,
    InjectionSpec,
    Placement,
    auc_roc,
    generate_base,
    inject_anomalies,
    inject_drift,
    run_experiment,
)
from .core import (
    DistanceKind,
    Subsequence,
    TimeSeries,
    extract_subsequences,
    pattern_distance,
    zeromean_distance,
    znorm_distance,
)
from .detect import (
    DetectorState,
    DriftEvent,
    DriftEventKind,
    ScoreSeries,
    detect_offline,
    detect_online,
    step,
)
from .model import (
    LearnConfig,
    NormalModel,
    NormalPattern,
    deserialize_model,
    learn_normal_model,
    membership,
    serialize_model,
    window_presence,
)

__version__ = "0.1.0"
