"""Graph-aware structured neuron-level pruning engine for ViT-style transformers."""

__version__ = "0.1.0"

from .errors import (
    DimensionError,
    FormatError,
    IntegrityError,
    InvalidPlanError,
    NumericError,
    SnpError,
    StalePlanError,
    TruncatedFileError,
)
from .groups import PruneGroup, PrunePlan, build_groups, validate_plan
from .importance import (
    ImportanceTable,
    baseline_importance,
    build_importance_table,
    head_importance,
    layer_diversity_importance,
    qk_importance,
    residual_aggregate,
    value_importance,
)
from .linalg import SvdResult, cosine_flat, rank1, svd
from .model import (
    AttentionCapture,
    ModelBundle,
    ModelConfig,
    attention_rollout,
    forward,
    qk_filter_contribution,
)
from .pruner import RatioSpec, apply_mask, apply_plan, head_prune, make_plan
from .serialize import (
    fingerprint,
    load_calibration,
    load_model,
    save_calibration,
    save_model,
)
from .synth import PRESETS, preset_config, synth_calibration, synth_model
from .evaluator import (
    BenchReport,
    CostReport,
    RatioReport,
    attention_similarity,
    bench,
    count_costs,
    ratio_report,
)

__all__ = [
    "AttentionCapture",
    "BenchReport",
    "CostReport",
    "DimensionError",
    "FormatError",
    "ImportanceTable",
    "IntegrityError",
    "InvalidPlanError",
    "ModelBundle",
    "ModelConfig",
    "NumericError",
    "PRESETS",
    "PruneGroup",
    "PrunePlan",
    "RatioReport",
    "RatioSpec",
    "SnpError",
    "StalePlanError",
    "SvdResult",
    "TruncatedFileError",
    "apply_mask",
    "apply_plan",
    "attention_rollout",
    "attention_similarity",
    "baseline_importance",
    "bench",
    "build_groups",
    "build_importance_table",
    "cosine_flat",
    "count_costs",
    "fingerprint",
    "forward",
    "head_importance",
    "head_prune",
    "layer_diversity_importance",
    "load_calibration",
    "load_model",
    "make_plan",
    "preset_config",
    "qk_filter_contribution",
    "qk_importance",
    "rank1",
    "ratio_report",
    "residual_aggregate",
    "save_calibration",
    "save_model",
    "svd",
    "synth_calibration",
    "synth_model",
    "validate_plan",
    "value_importance",
]
