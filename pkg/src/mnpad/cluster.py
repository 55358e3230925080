"""K-means with k-means++ seeding and silhouette scoring, for prototype setup.

Small hand-rolled implementations: the training pipeline needs deterministic
behavior under a seed and access to simple internals (inertia, assignments),
which is easier to guarantee without an external dependency.
"""

from __future__ import annotations

import numpy as np

# Silhouette below this is treated as "no real cluster structure": keep k=1.
MIN_SILHOUETTE = 0.05


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (n, m) matrix of squared Euclidean distances between rows of a and b.
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("nmj,nmj->nm", d, d)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = _pairwise_sq_dists(points, points[chosen]).min(axis=1)
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen centroid
            chosen.append(int(rng.integers(n)))
            continue
        chosen.append(int(rng.choice(n, p=d2 / total)))
    return points[chosen].copy()


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100):
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic given ``seed``; stops when assignments are stable or after
    ``max_iter`` sweeps. Returns (centroids, assignment).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("kmeans needs a non-empty 2-D point array")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= {n}, got {k}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    assignment = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        new_assignment = _pairwise_sq_dists(points, centroids).argmin(axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(k):
            members = points[assignment == j]
            if len(members) > 0:
                centroids[j] = members.mean(axis=0)
            else:
                # re-seed an emptied cluster at the point farthest from its centroid
                d2 = _pairwise_sq_dists(points, centroids)[np.arange(n), assignment]
                centroids[j] = points[int(d2.argmax())]
    return centroids, assignment


def kmeans_inertia(points, centroids, assignment) -> float:
    """Total squared distance of every point to its assigned centroid."""
    points = np.asarray(points, dtype=np.float64)
    diff = points - np.asarray(centroids)[np.asarray(assignment)]
    return float(np.einsum("nj,nj->", diff, diff))


def silhouette_score(points, assignment) -> float:
    """Mean silhouette over all points (Euclidean distances).

    Conventions: a point alone in its cluster scores 0, and 0/0 (all
    distances identical and zero) scores 0. Needs >= 2 non-empty clusters.
    """
    points = np.asarray(points, dtype=np.float64)
    assignment = np.asarray(assignment)
    labels = np.unique(assignment)
    if len(labels) < 2:
        raise ValueError("silhouette_score needs at least 2 clusters")
    n = points.shape[0]
    dists = np.sqrt(np.maximum(_pairwise_sq_dists(points, points), 0.0))
    sizes = {lab: int((assignment == lab).sum()) for lab in labels}

    scores = np.zeros(n)
    for i in range(n):
        own = assignment[i]
        if sizes[own] == 1:
            continue  # singleton convention: 0
        same = assignment == own
        a = dists[i, same].sum() / (sizes[own] - 1)
        b = min(dists[i, assignment == lab].mean() for lab in labels if lab != own)
        denom = max(a, b)
        scores[i] = (b - a) / denom if denom > 0 else 0.0
    return float(scores.mean())


def choose_k(points, k_max: int = 10, seed: int = 0):
    """Silhouette sweep over k = 1..k_max; returns (chosen_k, per-k scores).

    The best silhouette among k >= 2 wins (smaller k on ties), but when even
    the best is below MIN_SILHOUETTE the data is treated as unimodal and k=1
    is kept. k=1 has no silhouette and maps to None in the score table.
    """
    points = np.asarray(points, dtype=np.float64)
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    k_max = min(k_max, points.shape[0])
    scores: dict = {1: None}
    best_k, best_score = 1, -np.inf
    for k in range(2, k_max + 1):
        _, assignment = kmeans(points, k, seed=seed)
        if len(np.unique(assignment)) < 2:
            scores[k] = None
            continue
        s = silhouette_score(points, assignment)
        scores[k] = s
        if s > best_score:
            best_k, best_score = k, s
    if best_score < MIN_SILHOUETTE:
        return 1, scores
    return best_k, scores
