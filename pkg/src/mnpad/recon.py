"""Encoder/decoder construction, reconstruction error, and the asymmetric
reconstruction losses that treat unlabeled samples and labeled anomalies
differently."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Mlp, MlpSpec, ShapeError


@dataclass
class ReconOutput:
    """Result of one encode/decode pass: latent, reconstruction, and error."""

    z: np.ndarray
    x_hat: np.ndarray
    e: float


@dataclass
class ReconLossParts:
    """The two reconstruction loss terms plus the frozen unlabeled baseline.

    ``batch_mean_u`` is the unlabeled loss value the hinge was computed
    against; it is detached, i.e. gradients never flow through it.
    """

    loss_u: float
    loss_a: float
    batch_mean_u: float


def make_encoder(n_features: int, latent_dim: int, hidden_dim: int, rng: np.random.Generator) -> Mlp:
    """ReLU hidden layer, identity head: maps inputs to latent vectors."""
    return Mlp.create(MlpSpec((n_features, hidden_dim, latent_dim), "relu", "identity"), rng, "encoder")


def make_decoder(latent_dim: int, n_features: int, hidden_dim: int, rng: np.random.Generator) -> Mlp:
    """ReLU hidden layer, sigmoid head: reconstructions stay inside (0, 1)."""
    return Mlp.create(MlpSpec((latent_dim, hidden_dim, n_features), "relu", "sigmoid"), rng, "decoder")


def recon_error(x, x_hat) -> np.ndarray:
    """Per-sample mean squared error over features.

    The per-feature mean (rather than sum) keeps the hinge margin
    dimension-independent.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"x has shape {x.shape}, x_hat has shape {x_hat.shape}")
    return np.mean((x - x_hat) ** 2, axis=-1)


def recon_error_backward(x, x_hat, d_e) -> np.ndarray:
    """Chain upstream per-sample error gradients into d(x_hat)."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    d = x.shape[-1]
    return (2.0 / d) * (x_hat - x) * np.asarray(d_e)[..., None]


def reconstruct(encoder: Mlp, decoder: Mlp, x) -> ReconOutput:
    """Encode + decode a single sample, returning latent, reconstruction, error."""
    z = encoder.forward(x)
    x_hat = decoder.forward(z)
    return ReconOutput(z=z, x_hat=x_hat, e=float(recon_error(x, x_hat)))


def loss_recon_unlabeled(errors, weights) -> float:
    """Normality-weighted mean reconstruction error over the unlabeled batch.

    The weights enter as constants: shrinking them is never a way to shrink
    this loss.
    """
    errors = np.asarray(errors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if errors.shape != weights.shape:
        raise ShapeError("errors and weights must have matching shapes")
    if errors.size == 0:
        raise ValueError("empty unlabeled batch")
    return float(np.mean(weights * errors))


def d_loss_recon_unlabeled(errors, weights) -> np.ndarray:
    errors = np.asarray(errors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return weights / errors.size


def loss_recon_anomaly(errors, batch_mean_u: float, margin: float) -> float:
    """Hinge that pushes labeled anomalies' errors above the unlabeled baseline.

    Mean over anomalies of max(0, margin - (e_i - batch_mean_u)); zero exactly
    when every anomaly reconstructs at least ``margin`` worse than the
    unlabeled average.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("empty anomaly batch")
    return float(np.mean(np.maximum(0.0, margin - (errors - batch_mean_u))))


def d_loss_recon_anomaly(errors, batch_mean_u: float, margin: float) -> np.ndarray:
    # -1/n where the hinge is active, 0 elsewhere
    errors = np.asarray(errors, dtype=np.float64)
    active = (margin - (errors - batch_mean_u)) > 0.0
    return np.where(active, -1.0 / errors.size, 0.0)


def loss_recon_total(parts: ReconLossParts) -> float:
    return parts.loss_u + parts.loss_a
