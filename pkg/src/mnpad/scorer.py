"""Unified anomaly score evaluator over (reconstruction error, latent, max
prototype similarity) and its weighted score loss."""

from __future__ import annotations

import numpy as np

from .nn import Mlp, MlpSpec, ShapeError

SCORE_LOSSES = ("squared", "bce")
_BCE_CLIP = 1e-12


class Scorer:
    """Sigmoid-headed MLP mapping cat(e, z, s) to an anomaly score in (0, 1).

    The latent enters raw (a residual-style skip past the similarity), the
    scalar error and similarity as single columns; the input order (e, z, s)
    is fixed. ``include_recon_error=False`` drops the error column, for the
    decoder-free ablation.
    """

    def __init__(self, latent_dim: int, hidden_dim: int, rng: np.random.Generator = None,
                 include_recon_error: bool = True, net: Mlp = None):
        self.latent_dim = latent_dim
        self.include_recon_error = include_recon_error
        in_dim = latent_dim + (2 if include_recon_error else 1)
        if net is not None:
            if net.in_dim != in_dim or net.out_dim != 1:
                raise ShapeError(f"scorer network must map {in_dim} -> 1, got {net.in_dim} -> {net.out_dim}")
            self.net = net
        else:
            self.net = Mlp.create(MlpSpec((in_dim, hidden_dim, 1), "relu", "sigmoid"), rng, "scorer")

    @property
    def params(self):
        return self.net.params

    def assemble(self, e, z, s) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[None, :]
        if z.shape[1] != self.latent_dim:
            raise ShapeError(f"latents have dim {z.shape[1]}, scorer expects {self.latent_dim}")
        s = np.asarray(s, dtype=np.float64).reshape(-1, 1)
        cols = [z, s]
        if self.include_recon_error:
            if e is None:
                raise ShapeError("scorer was built with a reconstruction-error input")
            cols.insert(0, np.asarray(e, dtype=np.float64).reshape(-1, 1))
        return np.concatenate(cols, axis=1)

    def score(self, e, z, s) -> np.ndarray:
        x = self.assemble(e, z, s)
        return self.net.forward(x)[:, 0]

    def score_with_tape(self, e, z, s):
        x = self.assemble(e, z, s)
        y, tape = self.net.forward_tape(x)
        return y[:, 0], tape

    def backward(self, tape, d_scores):
        """Input gradients split back into (d_e, d_z, d_s); d_e is None when
        the error column is excluded."""
        d_scores = np.asarray(d_scores, dtype=np.float64)
        d_in = self.net.backward(tape, d_scores[:, None])
        if self.include_recon_error:
            return d_in[:, 0], d_in[:, 1:-1], d_in[:, -1]
        return None, d_in[:, :-1], d_in[:, -1]


def score_loss(scores_u, weights, scores_a, kind: str = "squared") -> float:
    """Push unlabeled scores to 0 (normality-weighted) and anomaly scores to 1.

    ``kind`` selects the per-sample regression loss: squared error (default)
    or binary cross-entropy.
    """
    scores_u = np.asarray(scores_u, dtype=np.float64)
    scores_a = np.asarray(scores_a, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if scores_u.size == 0 or scores_a.size == 0:
        raise ValueError("score loss needs non-empty unlabeled and anomaly batches")
    if kind == "squared":
        term_u = np.mean(weights * scores_u ** 2)
        term_a = np.mean((scores_a - 1.0) ** 2)
    elif kind == "bce":
        su = np.clip(scores_u, _BCE_CLIP, 1.0 - _BCE_CLIP)
        sa = np.clip(scores_a, _BCE_CLIP, 1.0 - _BCE_CLIP)
        term_u = np.mean(weights * -np.log(1.0 - su))
        term_a = np.mean(-np.log(sa))
    else:
        raise ValueError(f"kind must be one of {SCORE_LOSSES}")
    return float(term_u + term_a)


def d_score_loss(scores_u, weights, scores_a, kind: str = "squared"):
    """Gradients w.r.t. the two score vectors (weights held constant)."""
    scores_u = np.asarray(scores_u, dtype=np.float64)
    scores_a = np.asarray(scores_a, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if kind == "squared":
        d_u = weights * 2.0 * scores_u / scores_u.size
        d_a = 2.0 * (scores_a - 1.0) / scores_a.size
    elif kind == "bce":
        su = np.clip(scores_u, _BCE_CLIP, 1.0 - _BCE_CLIP)
        sa = np.clip(scores_a, _BCE_CLIP, 1.0 - _BCE_CLIP)
        d_u = weights / (1.0 - su) / scores_u.size
        d_a = -1.0 / sa / scores_a.size
    else:
        raise ValueError(f"kind must be one of {SCORE_LOSSES}")
    return d_u, d_a
