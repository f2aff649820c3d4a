"""Deterministic desk-scale simulator for fairness-aware federated
prompt tuning of a frozen toy vision-language encoder.

The pipeline couples three pieces: prompt tokens threaded through every
encoder layer with attention-weighted pooling of their history, a
demographic text subspace that embeddings are projected away from, and
validation-scored prompt fusion with a short fairness-regularized
server refinement. Everything downstream of a master seed is
reproducible bit for bit.
"""

from __future__ import annotations

from .config import (
    BIAS_METRICS,
    METHODS,
    Config,
    config_hash,
    config_lines,
    parse_config,
)
from .data import (
    Dataset,
    Partition,
    SyntheticSpec,
    balanced_test_sample,
    dirichlet_partition,
    generate_synthetic,
    load_embeddings,
    save_embeddings,
)
from .debias import (
    DemographicSubspace,
    build_subspace,
    fairness_loss,
    joint_loss,
    project_out,
    task_loss,
)
from .encoder import (
    EncoderConfig,
    PromptSet,
    PromptTemplates,
    VisionEncoder,
    build_prompt_templates,
)
from .federation import (
    EvalBundle,
    FederationError,
    client_update,
    evaluate_prompts,
    fuse_prompts,
    fuse_uniform,
    fusion_weights,
    load_splits,
    refinement_loss,
    run_federation,
    score_prompt,
    server_refine,
)
from .harness import PRESETS, run_experiment, run_preset, sweep
from .metrics import (
    GroupConfusion,
    MetricRecord,
    accuracy_gap,
    balanced_accuracy,
    confusion_by_group,
    demographic_parity,
    eod_global,
    equalized_odds,
)
from .report import FairnessReport, RoundRecord, emit_report

__version__ = "0.1.0"

__all__ = [
    "BIAS_METRICS",
    "METHODS",
    "Config",
    "config_hash",
    "config_lines",
    "parse_config",
    "Dataset",
    "Partition",
    "SyntheticSpec",
    "balanced_test_sample",
    "dirichlet_partition",
    "generate_synthetic",
    "load_embeddings",
    "save_embeddings",
    "DemographicSubspace",
    "build_subspace",
    "fairness_loss",
    "joint_loss",
    "project_out",
    "task_loss",
    "EncoderConfig",
    "PromptSet",
    "PromptTemplates",
    "VisionEncoder",
    "build_prompt_templates",
    "EvalBundle",
    "FederationError",
    "client_update",
    "evaluate_prompts",
    "fuse_prompts",
    "fuse_uniform",
    "fusion_weights",
    "load_splits",
    "refinement_loss",
    "run_federation",
    "score_prompt",
    "server_refine",
    "PRESETS",
    "run_experiment",
    "run_preset",
    "sweep",
    "GroupConfusion",
    "MetricRecord",
    "accuracy_gap",
    "balanced_accuracy",
    "confusion_by_group",
    "demographic_parity",
    "eod_global",
    "equalized_odds",
    "FairnessReport",
    "RoundRecord",
    "emit_report",
    "__version__",
]
