"""Datasets: CSV ingestion, min-max normalization, weak-label splits, batching,
and the synthetic multi-modal generator used by the experiment harnesses."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import NamedTuple, Optional

import numpy as np


class DataError(ValueError):
    """Malformed input data or an impossible split request."""


class WeakLabel(IntEnum):
    UNLABELED = 0
    LABELED_ANOMALY = 1


class Truth(IntEnum):
    NORMAL = 0
    ANOMALY = 1


@dataclass
class Dataset:
    """Feature rows plus optional ground-truth and weak-label columns.

    ``truth`` is the evaluation-only anomaly flag (0/1). ``weak`` marks which
    rows carry the weak supervision signal (labeled anomaly vs unlabeled);
    training code never reads ``truth``.
    """

    features: np.ndarray
    ids: np.ndarray
    truth: Optional[np.ndarray] = None
    weak: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D array (rows x features)")
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (len(self.features),):
            raise DataError("ids must be one integer per row")
        for name in ("truth", "weak"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col, dtype=np.int64)
                if col.shape != (len(self.features),):
                    raise DataError(f"{name} must be one value per row")
                setattr(self, name, col)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            ids=self.ids[idx],
            truth=None if self.truth is None else self.truth[idx],
            weak=None if self.weak is None else self.weak[idx],
        )

    def with_weak(self, value: int) -> "Dataset":
        return replace(self, weak=np.full(len(self), int(value), dtype=np.int64))

    def count_truth(self, value: int) -> int:
        if self.truth is None:
            raise DataError("dataset has no ground-truth labels")
        return int((self.truth == int(value)).sum())


def load_csv(path, label_column: Optional[str] = None) -> Dataset:
    """Read a UTF-8, comma-separated file with a header row.

    All non-label cells must be numeric. When ``label_column`` names a header
    column that is present, its 0/1 values populate ``truth`` (how the caller
    interprets them - ground truth vs weak labels - is up to the caller).
    A named column that is absent simply yields truth=None.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        label_idx = None
        if label_column is not None and label_column in header:
            label_idx = header.index(label_column)

        rows, labels = [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} cells, header has {len(header)}")
            values = []
            for col_idx, cell in enumerate(row):
                if col_idx == label_idx:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell.strip()!r} at row {row_no}, "
                        f"column {header[col_idx]!r}"
                    ) from None
            if label_idx is not None:
                cell = row[label_idx].strip()
                if cell not in ("0", "1"):
                    raise DataError(
                        f"{path}: label value {cell!r} at row {row_no} must be 0 or 1"
                    )
                labels.append(int(cell))
            rows.append(values)

    if not rows:
        raise DataError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=np.float64)
    truth = np.asarray(labels, dtype=np.int64) if label_idx is not None else None
    return Dataset(features=features, ids=np.arange(len(rows)), truth=truth)


def write_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    """Write features (and the truth column when present) with a header row."""
    d = dataset.n_features
    header = [f"f{i}" for i in range(d)]
    if dataset.truth is not None:
        header.append(label_column)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.truth is not None:
                row.append(str(int(dataset.truth[i])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    """Per-feature training min/max for [0,1] min-max scaling."""

    feature_min: np.ndarray
    feature_max: np.ndarray

    def __post_init__(self):
        self.feature_min = np.asarray(self.feature_min, dtype=np.float64)
        self.feature_max = np.asarray(self.feature_max, dtype=np.float64)
        if self.feature_min.shape != self.feature_max.shape:
            raise DataError("min and max must have the same shape")
        if np.any(self.feature_min > self.feature_max):
            raise DataError("per-feature min must not exceed max")

    def transform(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.feature_min.shape[0]:
            raise DataError(
                f"stats cover {self.feature_min.shape[0]} features, data has {features.shape[-1]}"
            )
        span = self.feature_max - self.feature_min
        safe = np.where(span > 0.0, span, 1.0)
        out = (features - self.feature_min) / safe
        out[..., span == 0.0] = 0.0  # constant training feature maps to 0
        return np.clip(out, 0.0, 1.0)


def fit_norm(data) -> NormStats:
    """Per-feature min/max over the given Dataset (or raw feature array)."""
    features = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if len(features) == 0:
        raise DataError("cannot fit normalization statistics on an empty set")
    return NormStats(feature_min=features.min(axis=0), feature_max=features.max(axis=0))


def apply_norm(stats: NormStats, dataset: Dataset) -> Dataset:
    """Scale a dataset with training statistics; out-of-range values clamp to [0,1]."""
    return replace(dataset, features=stats.transform(dataset.features))


# ---------------------------------------------------------------------------
# weak-supervision splits
# ---------------------------------------------------------------------------

@dataclass
class SplitConfig:
    labeled_anomaly_ratio: float
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.labeled_anomaly_ratio <= 1.0:
            raise DataError("labeled_anomaly_ratio must lie in [0, 1]")
        for name in ("val_fraction", "test_fraction"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise DataError(f"{name} must lie in [0, 1)")
        if self.val_fraction + self.test_fraction >= 1.0:
            raise DataError("val_fraction + test_fraction must be < 1")


class WeakSplit(NamedTuple):
    train_unlabeled: Dataset
    train_anomalies: Dataset
    val: Dataset
    test: Dataset


class Batch(NamedTuple):
    unlabeled: Dataset
    anomalies: Dataset


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def _n_labeled(n_anomalies: int, ratio: float) -> int:
    # round up with a floor of 1: tiny ratios must still yield one label
    return min(n_anomalies, max(1, math.ceil(ratio * n_anomalies)))


def make_weak_split(dataset: Dataset, config: SplitConfig) -> WeakSplit:
    """Carve stratified val/test first, then weak-label the remaining anomalies.

    Of the anomalies left after the carve, ceil(ratio * count) (at least 1)
    become the labeled set X_A; every other remaining sample, hidden anomalies
    included, lands in X_U as unlabeled, so contamination is preserved by
    construction. The val split gets the same weak-labeling treatment so that
    validation can run on weak structure alone. Deterministic given the seed.
    """
    if dataset.truth is None:
        raise DataError("make_weak_split needs ground-truth labels")
    anom = np.flatnonzero(dataset.truth == Truth.ANOMALY)
    norm = np.flatnonzero(dataset.truth == Truth.NORMAL)
    if len(anom) == 0:
        raise DataError("make_weak_split needs at least one anomaly")

    rng = np.random.default_rng(config.seed)
    anom = rng.permutation(anom)
    norm = rng.permutation(norm)

    n_test_a, n_test_n = _round(config.test_fraction * len(anom)), _round(config.test_fraction * len(norm))
    n_val_a, n_val_n = _round(config.val_fraction * len(anom)), _round(config.val_fraction * len(norm))
    test_idx = np.concatenate([anom[:n_test_a], norm[:n_test_n]])
    val_a = anom[n_test_a:n_test_a + n_val_a]
    val_n = norm[n_test_n:n_test_n + n_val_n]
    rest_a = anom[n_test_a + n_val_a:]
    rest_n = norm[n_test_n + n_val_n:]
    if len(rest_a) == 0:
        raise DataError("val/test carve left no anomalies to label; lower the fractions")

    n_lab = _n_labeled(len(rest_a), config.labeled_anomaly_ratio)
    labeled = rest_a[:n_lab]
    hidden = rest_a[n_lab:]

    train_unlabeled = dataset.subset(np.concatenate([rest_n, hidden])).with_weak(WeakLabel.UNLABELED)
    train_anomalies = dataset.subset(labeled).with_weak(WeakLabel.LABELED_ANOMALY)

    val = dataset.subset(np.concatenate([val_n, val_a]))
    weak = np.full(len(val), WeakLabel.UNLABELED, dtype=np.int64)
    if len(val_a) > 0:
        n_val_lab = _n_labeled(len(val_a), config.labeled_anomaly_ratio)
        weak[len(val_n):len(val_n) + n_val_lab] = WeakLabel.LABELED_ANOMALY
    val = replace(val, weak=weak)

    return WeakSplit(train_unlabeled, train_anomalies, val, dataset.subset(test_idx))


def make_contamination_split(
    dataset: Dataset,
    n_labeled: int,
    contamination: float,
    val_fraction: float = 0.1,
    test_fraction: float = 0.2,
    seed: int = 0,
) -> WeakSplit:
    """Weak split with an exact target contamination rate inside X_U.

    Used by the contamination sweep: X_A gets ``n_labeled`` anomalies and X_U
    gets however many hidden anomalies produce the requested fraction of its
    size; surplus anomalies are dropped. The val split mirrors the treatment.
    """
    if dataset.truth is None:
        raise DataError("make_contamination_split needs ground-truth labels")
    if not 0.0 <= contamination < 1.0:
        raise DataError("contamination must lie in [0, 1)")
    if n_labeled < 1:
        raise DataError("n_labeled must be >= 1")
    anom = np.flatnonzero(dataset.truth == Truth.ANOMALY)
    norm = np.flatnonzero(dataset.truth == Truth.NORMAL)
    rng = np.random.default_rng(seed)
    anom = rng.permutation(anom)
    norm = rng.permutation(norm)

    n_test_a, n_test_n = _round(test_fraction * len(anom)), _round(test_fraction * len(norm))
    n_val_a, n_val_n = _round(val_fraction * len(anom)), _round(val_fraction * len(norm))
    test_idx = np.concatenate([anom[:n_test_a], norm[:n_test_n]])
    val_a = anom[n_test_a:n_test_a + n_val_a]
    val_n = norm[n_test_n:n_test_n + n_val_n]
    rest_a = anom[n_test_a + n_val_a:]
    rest_n = norm[n_test_n + n_val_n:]
    if len(rest_a) < n_labeled:
        raise DataError(f"only {len(rest_a)} anomalies left for labeling, need {n_labeled}")

    labeled = rest_a[:n_labeled]
    pool = rest_a[n_labeled:]
    n_hidden = _round(contamination / (1.0 - contamination) * len(rest_n))
    if n_hidden > len(pool):
        raise DataError(
            f"contamination {contamination:.3f} needs {n_hidden} hidden anomalies, only {len(pool)} available"
        )
    hidden = pool[:n_hidden]

    train_unlabeled = dataset.subset(np.concatenate([rest_n, hidden])).with_weak(WeakLabel.UNLABELED)
    train_anomalies = dataset.subset(labeled).with_weak(WeakLabel.LABELED_ANOMALY)
    val = dataset.subset(np.concatenate([val_n, val_a]))
    weak = np.full(len(val), WeakLabel.UNLABELED, dtype=np.int64)
    if len(val_a) > 0:
        weak[len(val_n):len(val_n) + min(len(val_a), n_labeled)] = WeakLabel.LABELED_ANOMALY
    val = replace(val, weak=weak)
    return WeakSplit(train_unlabeled, train_anomalies, val, dataset.subset(test_idx))


def sample_batch(train_unlabeled: Dataset, train_anomalies: Dataset, b_u: int, b_a: int,
                 rng: np.random.Generator) -> Batch:
    """Uniformly sample a mini-batch of b_u unlabeled rows and b_a labeled anomalies.

    Sampling is without replacement unless a pool is smaller than the request.
    """
    if len(train_anomalies) == 0:
        raise DataError("weak supervision requires >= 1 labeled anomaly")
    if len(train_unlabeled) == 0:
        raise DataError("the unlabeled pool is empty")

    def draw(pool: Dataset, size: int) -> Dataset:
        replace_draw = len(pool) < size
        idx = rng.choice(len(pool), size=size, replace=replace_draw)
        return pool.subset(idx)

    return Batch(draw(train_unlabeled, b_u), draw(train_anomalies, b_a))


# ---------------------------------------------------------------------------
# synthetic multi-modal data
# ---------------------------------------------------------------------------

ANOMALY_KINDS = ("uniform_far", "shifted_cluster")

_CLUSTER_SCALE = 8.0   # distance of cluster means from the origin; sigma is 1
_FAR_MARGIN = 0.5      # uniform_far points stay this much beyond any normal's radius
_BOX_MARGIN = 1.0      # uniform_far sampling box padding around the normals


@dataclass
class SynthDataset(Dataset):
    """Synthetic dataset plus the generating structure, for verification."""

    means: Optional[np.ndarray] = None              # (k_true, D) normal cluster centers
    normal_assignment: Optional[np.ndarray] = None  # cluster index per normal row
    anomaly_kind: Optional[str] = None


def _unit_vector(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.standard_normal(d)
        n = np.linalg.norm(v)
    return v / n


def _cluster_means(rng: np.random.Generator, k: int, d: int) -> np.ndarray:
    radii = _CLUSTER_SCALE * np.arange(1, k + 1)
    if k <= d:
        # orthogonal directions at unequal radii: pairwise distance is
        # sqrt(r_i^2 + r_j^2) >= 8*sqrt(2), directions maximally separated,
        # modes asymmetric, as real subgroups are
        q, _ = np.linalg.qr(rng.standard_normal((d, k)))
        return radii[:, None] * q.T
    # more clusters than dimensions: random directions on distinct radial
    # shells; the reverse triangle inequality still bounds pairwise
    # distances below by the shell gap (8)
    return np.stack([radii[j] * _unit_vector(rng, d) for j in range(k)])


def synth_multimodal(n_normal: int, n_anomaly: int, n_features: int, k_true: int,
                     anomaly_kind: str = "uniform_far", seed: int = 0) -> SynthDataset:
    """Normals from k_true well-separated unit Gaussians, anomalies from one of
    two generators.

    Cluster means sit on distinct radial shells, mutually >= 8 apart
    (>= 6 sigma with sigma=1). ``uniform_far`` anomalies are uniform inside
    the normals' bounding box, rejected until they are farther from every
    cluster mean than any normal is from its own mean: scattered off-manifold
    points in the same feature range as the data. ``shifted_cluster``
    anomalies form a coherent Gaussian blob of a different character,
    centered one cluster-scale beyond the outermost mean (at least 8 from
    every mean, again by the reverse triangle inequality). Deterministic
    given the seed.
    """
    if k_true < 1:
        raise DataError("k_true must be >= 1")
    if n_features < 2:
        raise DataError("n_features must be >= 2")
    if n_normal < 1:
        raise DataError("n_normal must be >= 1")
    if n_anomaly < 0:
        raise DataError("n_anomaly must be >= 0")
    if anomaly_kind not in ANOMALY_KINDS:
        raise DataError(f"anomaly_kind must be one of {ANOMALY_KINDS}")

    rng = np.random.default_rng(seed)
    means = _cluster_means(rng, k_true, n_features)

    assignment = rng.integers(0, k_true, size=n_normal)
    normals = means[assignment] + rng.standard_normal((n_normal, n_features))

    anomalies = np.empty((0, n_features))
    if n_anomaly > 0:
        if anomaly_kind == "uniform_far":
            own_dist = np.linalg.norm(normals - means[assignment], axis=1)
            min_keep = own_dist.max() + _FAR_MARGIN
            lo = normals.min(axis=0) - _BOX_MARGIN
            hi = normals.max(axis=0) + _BOX_MARGIN
            kept = []
            attempts = 0
            while len(kept) < n_anomaly:
                attempts += 1
                if attempts > 10000 * n_anomaly:
                    raise DataError("uniform_far rejection sampling failed to converge")
                cand = rng.uniform(lo, hi)
                if np.linalg.norm(cand - means, axis=1).min() > min_keep:
                    kept.append(cand)
            anomalies = np.stack(kept)
        else:  # shifted_cluster
            # a coherent blob in the interior gap between the modes: near the
            # centroid of the cluster means but at least 7 from every mean,
            # i.e. the kind of anomaly a single central prototype mistakes
            # for the most normal data of all
            target = means.mean(axis=0)
            center = None
            for radius in range(0, 80):
                for _ in range(50):
                    cand = target + float(radius) * _unit_vector(rng, n_features)
                    if np.linalg.norm(cand - means, axis=1).min() >= _CLUSTER_SCALE - 1.0:
                        center = cand
                        break
                if center is not None:
                    break
            if center is None:
                raise DataError("shifted_cluster placement failed to converge")
            anomalies = center + rng.standard_normal((n_anomaly, n_features))

    features = np.concatenate([normals, anomalies])
    truth = np.concatenate([
        np.zeros(n_normal, dtype=np.int64),
        np.ones(len(anomalies), dtype=np.int64),
    ])
    return SynthDataset(
        features=features,
        ids=np.arange(len(features)),
        truth=truth,
        means=means,
        normal_assignment=assignment,
        anomaly_kind=anomaly_kind if n_anomaly > 0 else None,
    )
