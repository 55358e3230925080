"""Weakly supervised anomaly detection for tabular data.

Trains from a large unlabeled pool plus a handful of labeled anomalies:
an autoencoder learns reconstructions, a bank of normal prototypes models
the multi-modal structure of normal data, per-sample normality weights damp
the hidden anomalies contaminating the unlabeled pool, and a unified scorer
maps (reconstruction error, latent, prototype similarity) to an anomaly
score in (0, 1).
"""

from .config import TrainConfig
from .data import (
    Batch,
    DataError,
    Dataset,
    NormStats,
    SplitConfig,
    Truth,
    WeakLabel,
    WeakSplit,
    apply_norm,
    fit_norm,
    load_csv,
    make_contamination_split,
    make_weak_split,
    sample_batch,
    synth_multimodal,
    write_csv,
)
from .experiments import ExperimentConfig, RunRecord, run_experiment, write_results_csv
from .metrics import EvalResult, MetricError, auc_pr, auc_roc, evaluate
from .snapshot import ModelSnapshot, SnapshotError, load, save
from .trainer import (
    EpochReport,
    Model,
    TrainingDivergenceError,
    build_model,
    dynamic_weights,
    fit,
    infer,
    pretrain,
)

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "Batch",
    "DataError",
    "Dataset",
    "NormStats",
    "SplitConfig",
    "Truth",
    "WeakLabel",
    "WeakSplit",
    "apply_norm",
    "fit_norm",
    "load_csv",
    "make_contamination_split",
    "make_weak_split",
    "sample_batch",
    "synth_multimodal",
    "write_csv",
    "ExperimentConfig",
    "RunRecord",
    "run_experiment",
    "write_results_csv",
    "EvalResult",
    "MetricError",
    "auc_pr",
    "auc_roc",
    "evaluate",
    "ModelSnapshot",
    "SnapshotError",
    "load",
    "save",
    "EpochReport",
    "Model",
    "TrainingDivergenceError",
    "build_model",
    "dynamic_weights",
    "fit",
    "infer",
    "pretrain",
]
