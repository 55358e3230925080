"""Shared helpers: finite-difference gradient checking and a tiny model factory."""

import numpy as np
import pytest

from mnpad.config import TrainConfig
from mnpad.nn import ParamTensor
from mnpad.prototypes import PrototypeBank
from mnpad.recon import make_decoder, make_encoder
from mnpad.scorer import Scorer
from mnpad.trainer import Model

# Relative error floor: central differences carry ~1e-10 absolute noise for a
# loss of order 1 at h=1e-6, so gradients smaller than this scale are compared
# against the floor instead of their own magnitude.
REL_FLOOR = 1e-5


def rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(REL_FLOOR, abs(analytic) + abs(numeric))


def fd_gradients(loss_fn, params, h: float = 1e-6):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``params``.

    ``loss_fn`` must read the parameters' current values each call.
    """
    grads = []
    for p in params:
        flat = p.values.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_fn()
            flat[i] = orig - h
            minus = loss_fn()
            flat[i] = orig
            g[i] = (plus - minus) / (2.0 * h)
        grads.append(g.reshape(p.values.shape))
    return grads


def max_rel_err(analytic_params, fd_grads) -> float:
    worst = 0.0
    for p, fd in zip(analytic_params, fd_grads):
        for a, f in zip(p.grad.ravel(), fd.ravel()):
            worst = max(worst, rel_err(a, f))
    return worst


def make_tiny_model(seed: int, n_features: int = 4, latent_dim: int = 2, k: int = 2,
                    hidden: int = 8, **cfg_kw) -> Model:
    """A minimal trainable model with random prototypes, for gradient checks."""
    cfg = TrainConfig(latent_dim=latent_dim, encoder_hidden=hidden, scorer_hidden=hidden, **cfg_kw)
    rng = np.random.default_rng(seed)
    encoder = make_encoder(n_features, latent_dim, hidden, rng)
    decoder = make_decoder(latent_dim, n_features, hidden, rng) if cfg.use_decoder else None
    rows = 1 if not cfg.multi_prototype else k
    u = rng.normal(size=(rows, latent_dim))
    bank = PrototypeBank(ParamTensor("prototypes.u", u, decay=False),
                         alpha=cfg.similarity_dof, beta=cfg.weight_scale)
    scorer = Scorer(latent_dim, hidden, rng, include_recon_error=cfg.use_decoder)
    return Model(encoder, decoder, bank, scorer, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
