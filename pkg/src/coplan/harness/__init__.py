"""Operational surface: configuration, metrics, sweeps, reports, and the CLI."""

from .config import (
    CONFIG_FILE,
    PROFILES,
    EvalConfig,
    ExperimentConfig,
    ModelConfig,
    apply_overrides,
    build_models,
    config_fingerprint,
    desk_small,
    load_config,
    load_planner,
    save_config,
    tiny,
    train_signature,
    validate_experiment,
    with_seed,
)
from .metrics import (
    HORIZON_SECONDS,
    METRIC_COLUMNS,
    POSE_INDEX,
    MetricsRecord,
    collision_rates,
    collision_table,
    displacement_errors,
    evaluate_planner,
    measure_latency,
    read_metrics,
    write_metrics,
)
from .pipeline import (
    evaluate_checkpoint,
    holdout_indices,
    stage_chain,
    train_pipeline,
    untrained_baseline,
)
from .ablation import (
    ABLATION_COLUMNS,
    AXES,
    COMPONENTS_GRID,
    COUPLING_GRID,
    component_config,
    parse_grid,
    plot_ablation,
    point_config,
    read_ablation_csv,
    run_ablation,
    write_ablation_csv,
)
from .report import write_report
from .cli import RunConfig, build_parser, main

__all__ = [
    "ABLATION_COLUMNS",
    "AXES",
    "CONFIG_FILE",
    "COMPONENTS_GRID",
    "COUPLING_GRID",
    "EvalConfig",
    "ExperimentConfig",
    "HORIZON_SECONDS",
    "METRIC_COLUMNS",
    "ModelConfig",
    "MetricsRecord",
    "POSE_INDEX",
    "PROFILES",
    "RunConfig",
    "apply_overrides",
    "build_models",
    "build_parser",
    "collision_rates",
    "collision_table",
    "component_config",
    "config_fingerprint",
    "desk_small",
    "displacement_errors",
    "evaluate_checkpoint",
    "evaluate_planner",
    "holdout_indices",
    "load_config",
    "load_planner",
    "main",
    "measure_latency",
    "parse_grid",
    "plot_ablation",
    "point_config",
    "read_ablation_csv",
    "read_metrics",
    "run_ablation",
    "save_config",
    "stage_chain",
    "tiny",
    "train_pipeline",
    "train_signature",
    "untrained_baseline",
    "validate_experiment",
    "with_seed",
    "write_ablation_csv",
    "write_metrics",
    "write_report",
]
