"""Seeded experiment harnesses over synthetic data: labeled-ratio sweep,
contamination sweep, unseen-anomaly protocol, and prototype-count sensitivity.

Each grid point x seed builds its own data and split, trains one model, and
evaluates on the held-out test set. Results land in machine-readable rows
(stable column order) so plotting can happen elsewhere.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .config import TrainConfig
from .data import (
    DataError,
    Dataset,
    SplitConfig,
    Truth,
    WeakSplit,
    make_contamination_split,
    make_weak_split,
    synth_multimodal,
)
from .metrics import auc_pr, auc_roc
from .trainer import fit, infer

EXPERIMENT_KINDS = ("ratio_sweep", "contamination_sweep", "unseen", "k_sensitivity")

RESULT_COLUMNS = ("experiment", "grid_param", "seed", "auc_pr", "auc_roc", "wall_ms")


@dataclass
class RunRecord:
    experiment: str
    grid_param: str
    seed: int
    auc_pr: float
    auc_roc: float
    wall_ms: float


@dataclass
class ExperimentConfig:
    """Synthetic-data shape, split settings, and the training configuration."""

    n_normal: int = 1900
    n_anomaly: int = 100
    n_features: int = 10
    k_true: int = 3
    anomaly_kind: str = "uniform_far"
    unseen_kind: str = "shifted_cluster"
    labeled_ratio: float = 0.01
    n_labeled: int = 5          # contamination sweep holds the label count fixed
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)


def _evaluate_split(base: ExperimentConfig, split: WeakSplit, seed: int):
    config = replace(base.train, seed=seed)
    start = time.perf_counter()
    snapshot, _ = fit(split, config)
    scores = infer(snapshot, split.test.features)
    wall_ms = (time.perf_counter() - start) * 1000.0
    return auc_pr(scores, split.test.truth), auc_roc(scores, split.test.truth), wall_ms, snapshot


def _standard_split(base: ExperimentConfig, seed: int, ratio: float = None) -> WeakSplit:
    data = synth_multimodal(base.n_normal, base.n_anomaly, base.n_features, base.k_true,
                            base.anomaly_kind, seed=seed)
    split_cfg = SplitConfig(
        labeled_anomaly_ratio=base.labeled_ratio if ratio is None else ratio,
        val_fraction=base.val_fraction,
        test_fraction=base.test_fraction,
        seed=seed,
    )
    return make_weak_split(data, split_cfg)


def _unseen_splits(base: ExperimentConfig, seed: int):
    """Seen-kind split plus an extra test set whose anomalies are the unseen kind.

    The two synthetic datasets share a seed, hence identical normals and
    cluster means; only the anomaly generator differs. Train/val/test come
    from the seen-kind dataset; the unseen test set reuses the test normals
    and swaps in unseen-kind anomalies.
    """
    seen = synth_multimodal(base.n_normal, base.n_anomaly, base.n_features, base.k_true,
                            base.anomaly_kind, seed=seed)
    other = synth_multimodal(base.n_normal, base.n_anomaly, base.n_features, base.k_true,
                             base.unseen_kind, seed=seed)
    split = make_weak_split(seen, SplitConfig(
        labeled_anomaly_ratio=base.labeled_ratio,
        val_fraction=base.val_fraction,
        test_fraction=base.test_fraction,
        seed=seed,
    ))
    test_normal = split.test.features[split.test.truth == Truth.NORMAL]
    unseen_anoms = other.features[other.truth == Truth.ANOMALY]
    unseen_test = Dataset(
        features=np.concatenate([test_normal, unseen_anoms]),
        ids=np.arange(len(test_normal) + len(unseen_anoms)),
        truth=np.concatenate([
            np.zeros(len(test_normal), dtype=np.int64),
            np.ones(len(unseen_anoms), dtype=np.int64),
        ]),
    )
    return split, unseen_test


def run_experiment(kind: str, base: ExperimentConfig, grid: Sequence, seeds: Sequence[int]):
    """Run one harness over grid x seeds; returns (rows, per-cell summary).

    The summary maps each grid label to mean/std of both metrics across seeds.
    Deterministic given the seed list.
    """
    if kind not in EXPERIMENT_KINDS:
        raise DataError(f"unknown experiment kind {kind!r}, expected one of {EXPERIMENT_KINDS}")
    if len(list(seeds)) == 0:
        raise DataError("need at least one seed")
    if len(list(grid)) == 0:
        raise DataError("need a non-empty grid")

    rows: List[RunRecord] = []
    for g in grid:
        for seed in seeds:
            seed = int(seed)
            if kind == "ratio_sweep":
                ratio = float(g)
                if not 0.0 < ratio <= 1.0:
                    raise DataError(f"labeled ratio {ratio} outside (0, 1]")
                split = _standard_split(base, seed, ratio=ratio)
                pr, roc, ms, _ = _evaluate_split(base, split, seed)
                rows.append(RunRecord(kind, f"ratio={ratio:g}", seed, pr, roc, ms))
            elif kind == "contamination_sweep":
                cont = float(g)
                if not 0.0 <= cont < 1.0:
                    raise DataError(f"contamination {cont} outside [0, 1)")
                data = synth_multimodal(base.n_normal, base.n_anomaly, base.n_features,
                                        base.k_true, base.anomaly_kind, seed=seed)
                split = make_contamination_split(data, base.n_labeled, cont,
                                                 base.val_fraction, base.test_fraction, seed=seed)
                pr, roc, ms, _ = _evaluate_split(base, split, seed)
                rows.append(RunRecord(kind, f"contamination={cont:g}", seed, pr, roc, ms))
            elif kind == "k_sensitivity":
                k = int(g)
                if k < 1:
                    raise DataError(f"prototype count {k} must be >= 1")
                cfg = replace(base.train, n_prototypes=k, multi_prototype=True)
                split = _standard_split(base, seed)
                pr, roc, ms, _ = _evaluate_split(replace(base, train=cfg), split, seed)
                rows.append(RunRecord(kind, f"k={k}", seed, pr, roc, ms))
            else:  # unseen
                seen_kind = str(g)
                swapped = replace(
                    base,
                    anomaly_kind=seen_kind,
                    unseen_kind=base.unseen_kind if seen_kind == base.anomaly_kind else base.anomaly_kind,
                )
                split, unseen_test = _unseen_splits(swapped, seed)
                start = time.perf_counter()
                snapshot, _ = fit(split, replace(base.train, seed=seed))
                seen_scores = infer(snapshot, split.test.features)
                unseen_scores = infer(snapshot, unseen_test.features)
                ms = (time.perf_counter() - start) * 1000.0
                rows.append(RunRecord(kind, f"seen={swapped.anomaly_kind},eval=seen", seed,
                                      auc_pr(seen_scores, split.test.truth),
                                      auc_roc(seen_scores, split.test.truth), ms))
                rows.append(RunRecord(kind, f"seen={swapped.anomaly_kind},eval=unseen({swapped.unseen_kind})",
                                      seed,
                                      auc_pr(unseen_scores, unseen_test.truth),
                                      auc_roc(unseen_scores, unseen_test.truth), 0.0))
    return rows, summarize(rows)


def summarize(rows: Sequence[RunRecord]) -> Dict[str, Dict[str, float]]:
    cells: Dict[str, List[RunRecord]] = {}
    for row in rows:
        cells.setdefault(row.grid_param, []).append(row)
    summary = {}
    for label, members in cells.items():
        prs = np.array([m.auc_pr for m in members])
        rocs = np.array([m.auc_roc for m in members])
        summary[label] = {
            "auc_pr_mean": float(prs.mean()),
            "auc_pr_std": float(prs.std()),
            "auc_roc_mean": float(rocs.mean()),
            "auc_roc_std": float(rocs.std()),
            "n_runs": len(members),
        }
    return summary


def write_results_csv(rows: Sequence[RunRecord], path) -> None:
    """One row per run, stable column order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([
                row.experiment, row.grid_param, row.seed,
                repr(row.auc_pr), repr(row.auc_roc), f"{row.wall_ms:.3f}",
            ])
