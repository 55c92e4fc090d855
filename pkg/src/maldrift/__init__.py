"""maldrift: bias-controlled dataset sampling and drift-aware evaluation.

Samples reproducible, constraint-checked datasets from app-metadata
populations (detection-threshold labeling, timestamp policies, market and
class-ratio constraints, statistically sized strata) and evaluates
externally produced classifier predictions over rolling time windows.
"""
from .version import __version__

from .model import (
    ApkRecord,
    ClassLabel,
    Granularity,
    Period,
    Population,
    period_of,
    period_range,
)
from .labeling import (
    LabelRule,
    TimestampKind,
    TimestampPolicy,
    label,
    market_composition,
    market_consistency,
    timeline_date,
    timestamp_lag_stats,
    vtt_coverage,
    vtt_market_heatmap,
)
from .ingest import (
    PredictionRow,
    PredictionSet,
    fetch_metadata,
    parse_families,
    parse_metadata,
    parse_predictions,
    snapshot_filter,
    write_metadata_csv,
)
from .sizing import (
    PlanMode,
    SizingParams,
    SizingPlan,
    compare_plans,
    plan_sizes,
    required_sample_size,
)
from .sampler import (
    DatasetManifest,
    ManifestEntry,
    market_scenario,
    stratified_sample,
    verify_constraints,
)
from .metrics import (
    MetricSeries,
    SplitPlan,
    a_aut,
    aut,
    confusion_metrics,
    family_overlap,
    overlap_series,
    rolling_splits,
)
from .synth import SynthConfig, generate, scenario_presets

__all__ = [name for name in dir() if not name.startswith("_")]
