"""Multi-normal prototype bank: Student-t similarity, normality weights, the
soft-assignment clustering loss, and the prototype contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cluster import choose_k, kmeans
from .nn import ParamTensor, sigmoid


@dataclass
class PrototypeBank:
    """Trainable latent prototypes of the normal modes.

    Rows of ``u`` are stored unnormalized and L2-normalized inside the
    similarity computation, so gradients flow through the normalization while
    the parameters stay unconstrained. Weight decay is disabled for the bank:
    decaying prototypes toward the origin fights the normalization.
    """

    u: ParamTensor
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.u.values.ndim != 2 or self.u.values.shape[0] < 1:
            raise ValueError("prototype bank must be a non-empty (k, H) array")
        if not np.all(np.isfinite(self.u.values)):
            raise ValueError("prototype rows must be finite")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        self.u.decay = False

    @property
    def k(self) -> int:
        return self.u.values.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.u.values.shape[1]


def init_prototypes(latents, k="auto", alpha: float = 1.0, beta: float = 1.0,
                    seed: int = 0, k_max: int = 10) -> PrototypeBank:
    """Cluster L2-normalized latents of the unlabeled pool into k prototypes.

    k="auto" runs the silhouette sweep (keeping k=1 when no structure shows).
    The bank rows are the k-means centroids as-is: arithmetic means of unit
    vectors, not re-projected onto the sphere.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or len(latents) == 0:
        raise ValueError("init_prototypes needs a non-empty (n, H) latent array")
    normalized = _normalize_rows(latents)
    if k == "auto" or k is None:
        k, _ = choose_k(normalized, k_max=k_max, seed=seed)
    k = int(k)
    if k > len(latents):
        raise ValueError(f"k={k} exceeds the number of unlabeled samples ({len(latents)})")
    centroids, _ = kmeans(normalized, k, seed=seed)
    return PrototypeBank(u=ParamTensor("prototypes.u", centroids, decay=False), alpha=alpha, beta=beta)


def _normalize_rows(x: np.ndarray):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms <= 0.0):
        raise ValueError("cannot normalize a zero-norm vector")
    return x / norms


@dataclass
class SimilarityCache:
    """Forward intermediates needed to backpropagate through the similarity."""

    z: np.ndarray
    z_hat: np.ndarray
    z_norm: np.ndarray
    u_hat: np.ndarray
    u_norm: np.ndarray
    base: np.ndarray      # 1 + d^2/alpha, shape (n, k)
    alpha: float
    squeezed: bool


def similarity(z, bank: PrototypeBank) -> np.ndarray:
    """Student-t similarity of each latent to each prototype, in (0, 1].

    Both sides are L2-normalized first; s = (1 + ||z_hat - u_hat||^2/alpha)
    to the power -(alpha+1)/2. A row of 1 means the normalized latent
    coincides with the prototype.
    """
    s, _ = similarity_with_cache(z, bank)
    return s


def similarity_with_cache(z, bank: PrototypeBank):
    z = np.asarray(z, dtype=np.float64)
    squeezed = z.ndim == 1
    if squeezed:
        z = z[None, :]
    if z.shape[1] != bank.latent_dim:
        raise ValueError(f"latents have dim {z.shape[1]}, prototypes have dim {bank.latent_dim}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latents must be finite")

    z_norm = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(z_norm <= 0.0):
        raise ValueError("cannot normalize a zero-norm latent vector")
    z_hat = z / z_norm
    u_norm = np.linalg.norm(bank.u.values, axis=1, keepdims=True)
    if np.any(u_norm <= 0.0):
        raise ValueError("cannot normalize a zero-norm prototype")
    u_hat = bank.u.values / u_norm

    diff = z_hat[:, None, :] - u_hat[None, :, :]
    d2 = np.einsum("nkj,nkj->nk", diff, diff)
    base = 1.0 + d2 / bank.alpha
    s = base ** (-(bank.alpha + 1.0) / 2.0)
    cache = SimilarityCache(z, z_hat, z_norm, u_hat, u_norm, base, bank.alpha, squeezed)
    return (s[0] if squeezed else s), cache


def similarity_backward(cache: SimilarityCache, d_s, bank: PrototypeBank) -> np.ndarray:
    """Chain d(loss)/d(s) back to the latents; accumulates the bank gradient."""
    d_s = np.asarray(d_s, dtype=np.float64)
    if cache.squeezed:
        d_s = d_s[None, :]
    alpha = cache.alpha
    # s = base^p with p = -(alpha+1)/2, so ds/d(d^2) = (p/alpha) * base^(p-1)
    p = -(alpha + 1.0) / 2.0
    g = d_s * (p / alpha) * cache.base ** (p - 1.0)          # (n, k): dL/d(d2)
    diff = cache.z_hat[:, None, :] - cache.u_hat[None, :, :]
    d_z_hat = 2.0 * np.einsum("nk,nkj->nj", g, diff)
    d_u_hat = -2.0 * np.einsum("nk,nkj->kj", g, diff)

    # back through the L2 normalization: d(x/|x|) = (I - xhat xhat^T)/|x|
    d_z = (d_z_hat - cache.z_hat * np.sum(d_z_hat * cache.z_hat, axis=1, keepdims=True)) / cache.z_norm
    d_u = (d_u_hat - cache.u_hat * np.sum(d_u_hat * cache.u_hat, axis=1, keepdims=True)) / cache.u_norm
    bank.u.grad += d_u
    return d_z[0] if cache.squeezed else d_z


def max_similarity(s: np.ndarray):
    """Row maxima and their prototype indices."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    return s.max(axis=1), s.argmax(axis=1)


def normality_weight(s_max, beta: float):
    """Soft probability of being normal: sigmoid(beta * max similarity).

    Treated as a constant (detached) wherever it weights another loss term.
    """
    return sigmoid(beta * np.asarray(s_max, dtype=np.float64))


def d_normality_weight(s_max, beta: float):
    w = normality_weight(s_max, beta)
    return beta * w * (1.0 - w)


def cluster_targets(s: np.ndarray) -> np.ndarray:
    """Sharpened target distribution P from a batch of similarities.

    q normalizes each similarity row; f are the soft cluster frequencies;
    p squares q, discounts by f, and renormalizes per row. P acts as a
    constant target: gradients flow through Q only.
    """
    s = np.asarray(s, dtype=np.float64)
    q = s / s.sum(axis=1, keepdims=True)
    f = q.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_un = np.where(f > 0.0, q * q / f, 0.0)
    return p_un / p_un.sum(axis=1, keepdims=True)


def kl_clustering_loss(s, target: Optional[np.ndarray] = None) -> float:
    """KL(P || Q) summed over the batch, natural log.

    ``target`` overrides the sharpened distribution (used to hold P fixed when
    comparing against finite differences). Zero-probability target entries
    contribute zero by the p*log(p) limit convention.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    if s.size == 0:
        raise ValueError("empty batch")
    q = s / s.sum(axis=1, keepdims=True)
    p = cluster_targets(s) if target is None else np.asarray(target, dtype=np.float64)
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def d_kl_clustering_loss(s, target: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of the clustering loss w.r.t. the raw similarities."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    r = s.sum(axis=1, keepdims=True)
    q = s / r
    p = cluster_targets(s) if target is None else np.asarray(target, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        d_q = np.where(q > 0.0, -p / q, 0.0)
    # q_j = s_j / r  =>  dL/ds_j = (dL/dq_j - sum_j' dL/dq_j' q_j') / r
    return (d_q - np.sum(d_q * q, axis=1, keepdims=True)) / r


def contrastive_loss(s_max_u, weights, s_max_a) -> float:
    """-log sigmoid of the weighted unlabeled/anomaly similarity gap.

    Pulls unlabeled samples toward some prototype and pushes labeled anomalies
    away from all of them; the normality weights (constants here) stop hidden
    anomalies from dragging the unlabeled mean up.
    """
    s_max_u = np.asarray(s_max_u, dtype=np.float64)
    s_max_a = np.asarray(s_max_a, dtype=np.float64)
    if s_max_u.size == 0 or s_max_a.size == 0:
        raise ValueError("contrastive loss needs non-empty unlabeled and anomaly batches")
    delta = np.mean(np.asarray(weights) * s_max_u) - np.mean(s_max_a)
    return float(np.logaddexp(0.0, -delta))  # -log(sigmoid(delta))


def d_contrastive_loss(s_max_u, weights, s_max_a):
    """Gradients w.r.t. the two max-similarity vectors (weights held constant)."""
    s_max_u = np.asarray(s_max_u, dtype=np.float64)
    s_max_a = np.asarray(s_max_a, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    delta = np.mean(weights * s_max_u) - np.mean(s_max_a)
    slope = sigmoid(np.array(-delta))  # = 1 - sigmoid(delta) = -dL/d(delta)
    d_u = -slope * weights / s_max_u.size
    d_a = np.full_like(s_max_a, slope / s_max_a.size)
    return d_u, d_a


def prototype_loss(l_kl: float, l_con: float) -> float:
    return l_kl + l_con
