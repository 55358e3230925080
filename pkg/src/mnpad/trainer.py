"""End-to-end training: autoencoder pretraining, prototype initialization,
joint optimization of the three losses under dynamically averaged weights,
early stopping on a weak-label validation objective, and inference."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .config import TrainConfig
from .data import DataError, Dataset, NormStats, WeakLabel, WeakSplit, apply_norm, fit_norm, sample_batch
from .nn import AdamConfig, Mlp, MlpSpec, ParamTensor, adam_step, zero_grads
from .prototypes import (
    PrototypeBank,
    cluster_targets,
    contrastive_loss,
    d_contrastive_loss,
    d_kl_clustering_loss,
    d_normality_weight,
    init_prototypes,
    kl_clustering_loss,
    max_similarity,
    normality_weight,
    similarity_backward,
    similarity_with_cache,
)
from .recon import (
    d_loss_recon_anomaly,
    d_loss_recon_unlabeled,
    loss_recon_anomaly,
    loss_recon_unlabeled,
    make_decoder,
    make_encoder,
    recon_error,
    recon_error_backward,
)
from .scorer import Scorer, d_score_loss, score_loss
from .snapshot import ModelSnapshot
from .metrics import auc_pr


class TrainingDivergenceError(FloatingPointError):
    """The joint loss became non-finite during training."""

    def __init__(self, epoch: int, step: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: {detail}")
        self.epoch = epoch
        self.step = step


@dataclass
class BatchLosses:
    """Unweighted loss values of one mini-batch plus their weighted total."""

    loss_recon: float
    loss_np: float
    loss_score: float
    total: float


@dataclass
class EpochReport:
    epoch: int
    loss_recon: float
    loss_np: float
    loss_score: float
    weight_recon: float
    weight_np: float
    weight_score: float
    val_objective: float
    stopped_early: bool = False


@dataclass
class FrozenDetached:
    """Values the losses treat as constants, captured so that a finite-difference
    evaluation of the loss holds exactly the same quantities fixed.

    ``weights`` is None when the normality weights are live (detachment turned
    off) and must be recomputed under perturbation.
    """

    weights: Optional[np.ndarray]
    batch_mean_u: Optional[float]
    kl_target: Optional[np.ndarray]


class Model:
    """The trainable ensemble: encoder, optional decoder, prototypes, scorer."""

    def __init__(self, encoder: Mlp, decoder: Optional[Mlp], prototypes: PrototypeBank,
                 scorer: Scorer, config: TrainConfig):
        self.encoder = encoder
        self.decoder = decoder
        self.prototypes = prototypes
        self.scorer = scorer
        self.config = config

    @property
    def params(self) -> List[ParamTensor]:
        params = list(self.encoder.params)
        if self.decoder is not None:
            params += self.decoder.params
        params.append(self.prototypes.u)
        params += self.scorer.params
        return params

    def zero_grads(self) -> None:
        zero_grads(self.params)

    def forward_arrays(self, x: np.ndarray):
        """Inference forward pass on normalized features.

        Returns (errors, latents, max similarities); errors is None for the
        decoder-free variant.
        """
        z = self.encoder.forward(x)
        e = None
        if self.decoder is not None:
            e = recon_error(x, self.decoder.forward(z))
        s, _ = similarity_with_cache(z, self.prototypes)
        s_max, _ = max_similarity(s)
        return e, z, s_max

    def score_batch(self, x: np.ndarray) -> np.ndarray:
        e, z, s_max = self.forward_arrays(x)
        return self.scorer.score(e, z, s_max)


def joint_step(model: Model, x_unlabeled: np.ndarray, x_anomaly: np.ndarray,
               loss_weights: Tuple[float, float, float],
               frozen: Optional[FrozenDetached] = None,
               compute_grads: bool = True,
               term_scales: Optional[dict] = None):
    """One combined forward (and optionally backward) pass over a mini-batch.

    Computes the reconstruction, prototype, and score losses, combines them
    with ``loss_weights``, and accumulates gradients for every parameter group
    in a single backward sweep. Pass ``frozen`` (captured from a previous
    call) and ``compute_grads=False`` to re-evaluate the loss as a pure
    function of the parameters with all detached quantities held fixed, which
    is what a finite-difference check needs.

    ``term_scales`` rescales individual terms inside the loss groups (keys:
    recon_unlabeled, recon_anomaly, kl, contrastive); diagnostics use it to
    look at one term in isolation. Training leaves it at None.

    Returns (BatchLosses, FrozenDetached).
    """
    cfg = model.config
    bank = model.prototypes
    w1, w2, w3 = (float(w) for w in loss_weights)
    scales = {"recon_unlabeled": 1.0, "recon_anomaly": 1.0, "kl": 1.0, "contrastive": 1.0}
    if term_scales:
        scales.update(term_scales)
    xu = np.asarray(x_unlabeled, dtype=np.float64)
    xa = np.asarray(x_anomaly, dtype=np.float64)
    n_u = len(xu)

    # ---- forward -----------------------------------------------------------
    z_u, tape_enc_u = model.encoder.forward_tape(xu)
    z_a, tape_enc_a = model.encoder.forward_tape(xa)

    e_u = e_a = None
    if model.decoder is not None:
        xhat_u, tape_dec_u = model.decoder.forward_tape(z_u)
        xhat_a, tape_dec_a = model.decoder.forward_tape(z_a)
        e_u = recon_error(xu, xhat_u)
        e_a = recon_error(xa, xhat_a)

    s_u, sim_cache_u = similarity_with_cache(z_u, bank)
    s_a, sim_cache_a = similarity_with_cache(z_a, bank)
    smax_u, arg_u = max_similarity(s_u)
    smax_a, arg_a = max_similarity(s_a)

    weights_live = cfg.use_weights and not cfg.detach_weights
    if frozen is not None and frozen.weights is not None:
        w = frozen.weights
    elif cfg.use_weights:
        w = normality_weight(smax_u, bank.beta)
    else:
        w = np.ones(n_u)

    recon_active = cfg.use_recon_loss and model.decoder is not None
    mean_u = None
    loss_recon = 0.0
    if recon_active:
        loss_u = loss_recon_unlabeled(e_u, w)
        mean_u = frozen.batch_mean_u if frozen is not None else loss_u
        loss_recon = (scales["recon_unlabeled"] * loss_u
                      + scales["recon_anomaly"] * loss_recon_anomaly(e_a, mean_u, cfg.margin))

    kl_target = None
    loss_np = 0.0
    if cfg.use_np_loss:
        kl_target = frozen.kl_target if frozen is not None else cluster_targets(s_u)
        loss_np = (scales["kl"] * kl_clustering_loss(s_u, target=kl_target)
                   + scales["contrastive"] * contrastive_loss(smax_u, w, smax_a))

    scores_u, tape_sc_u = model.scorer.score_with_tape(e_u, z_u, smax_u)
    scores_a, tape_sc_a = model.scorer.score_with_tape(e_a, z_a, smax_a)
    loss_sc = score_loss(scores_u, w, scores_a, cfg.score_loss)

    total = w1 * loss_recon + w2 * loss_np + w3 * loss_sc
    losses = BatchLosses(loss_recon, loss_np, loss_sc, total)
    captured = FrozenDetached(
        weights=None if weights_live else w,
        batch_mean_u=mean_u,
        kl_target=kl_target,
    )
    if not compute_grads:
        return losses, captured

    # ---- backward ----------------------------------------------------------
    d_su, d_sa = d_score_loss(scores_u, w, scores_a, cfg.score_loss)
    d_e_u_sc, d_z_u, d_smax_u = model.scorer.backward(tape_sc_u, w3 * d_su)
    d_e_a_sc, d_z_a, d_smax_a = model.scorer.backward(tape_sc_a, w3 * d_sa)

    if model.decoder is not None:
        d_e_u = d_e_u_sc.copy()
        d_e_a = d_e_a_sc.copy()
        if recon_active:
            d_e_u += w1 * scales["recon_unlabeled"] * d_loss_recon_unlabeled(e_u, w)
            d_e_a += w1 * scales["recon_anomaly"] * d_loss_recon_anomaly(e_a, mean_u, cfg.margin)

    d_s_u = np.zeros_like(s_u)
    d_s_a = np.zeros_like(s_a)
    if cfg.use_np_loss:
        d_s_u += w2 * scales["kl"] * d_kl_clustering_loss(s_u, target=kl_target)
        d_con_u, d_con_a = d_contrastive_loss(smax_u, w, smax_a)
        d_smax_u = d_smax_u + w2 * scales["contrastive"] * d_con_u
        d_smax_a = d_smax_a + w2 * scales["contrastive"] * d_con_a

    if weights_live:
        # chain the losses' dependence on w back through w = sigmoid(beta * smax)
        d_w = np.zeros(n_u)
        if recon_active:
            d_w += w1 * scales["recon_unlabeled"] * e_u / n_u
        if cfg.use_np_loss:
            delta = float(np.mean(w * smax_u) - np.mean(smax_a))
            slope = 1.0 / (1.0 + np.exp(delta))  # sigmoid(-delta)
            d_w += w2 * scales["contrastive"] * (-slope) * smax_u / n_u
        if cfg.score_loss == "squared":
            d_w += w3 * scores_u ** 2 / n_u
        else:
            d_w += w3 * -np.log(np.clip(1.0 - scores_u, 1e-12, None)) / n_u
        d_smax_u = d_smax_u + d_w * d_normality_weight(smax_u, bank.beta)

    # route max-similarity gradients to the winning prototype only
    d_s_u[np.arange(len(smax_u)), arg_u] += d_smax_u
    d_s_a[np.arange(len(smax_a)), arg_a] += d_smax_a

    d_z_u = d_z_u + similarity_backward(sim_cache_u, d_s_u, bank)
    d_z_a = d_z_a + similarity_backward(sim_cache_a, d_s_a, bank)

    if model.decoder is not None:
        d_z_u = d_z_u + model.decoder.backward(tape_dec_u, recon_error_backward(xu, xhat_u, d_e_u))
        d_z_a = d_z_a + model.decoder.backward(tape_dec_a, recon_error_backward(xa, xhat_a, d_e_a))

    model.encoder.backward(tape_enc_u, d_z_u)
    model.encoder.backward(tape_enc_a, d_z_a)
    return losses, captured


def pretrain(encoder: Mlp, decoder: Mlp, features: np.ndarray, epochs: int,
             batch_size: int, adam: AdamConfig, rng: np.random.Generator) -> List[float]:
    """Plain unweighted MSE autoencoder training on the unlabeled pool.

    No prototypes or scorer involved. Returns the per-epoch mean losses;
    epochs=0 leaves the parameters untouched.
    """
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    params = encoder.params + decoder.params
    history: List[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, batch_size):
            xb = features[order[start:start + batch_size]]
            z, tape_enc = encoder.forward_tape(xb)
            xhat, tape_dec = decoder.forward_tape(z)
            errors = recon_error(xb, xhat)
            batch_losses.append(float(errors.mean()))
            d_e = np.full(len(xb), 1.0 / len(xb))
            d_z = decoder.backward(tape_dec, recon_error_backward(xb, xhat, d_e))
            encoder.backward(tape_enc, d_z)
            adam_step(params, adam)
            zero_grads(params)
        history.append(float(np.mean(batch_losses)))
    return history


def dynamic_weights(history, temperature: float) -> Tuple[float, float, float]:
    """Per-epoch loss weights from each loss's recent rate of descent.

    The first two epochs get (1, 1, 1); afterwards each loss's ratio of the
    last two epoch means is pushed through a temperature softmax scaled to sum
    to 3. A zero prior loss contributes a neutral ratio of 1.
    """
    if len(history) < 2:
        return (1.0, 1.0, 1.0)
    prev = np.asarray(history[-1], dtype=np.float64)
    prev2 = np.asarray(history[-2], dtype=np.float64)
    ratios = np.where(prev2 > 0.0, prev / np.where(prev2 > 0.0, prev2, 1.0), 1.0)
    ratios = np.clip(ratios, 0.0, 100.0)  # keeps the softmax finite if a loss spikes
    exp = np.exp(ratios / temperature)
    w = 3.0 * exp / exp.sum()
    return (float(w[0]), float(w[1]), float(w[2]))


def validation_objective(model: Model, val: Dataset) -> float:
    """Total loss at weights (1, 1, 1) over the validation split.

    Uses only the split's weak structure. When the split holds no labeled
    anomalies, the anomaly-dependent terms (reconstruction hinge, contrastive
    gap, anomaly score target) are dropped.
    """
    if val.weak is None:
        raise DataError("validation split needs weak labels")
    x_u = val.features[val.weak == WeakLabel.UNLABELED]
    x_a = val.features[val.weak == WeakLabel.LABELED_ANOMALY]
    if len(x_u) == 0:
        raise DataError("validation split has no unlabeled samples")
    if len(x_a) > 0:
        losses, _ = joint_step(model, x_u, x_a, (1.0, 1.0, 1.0), compute_grads=False)
        return losses.total

    cfg = model.config
    e, z, s_max = model.forward_arrays(x_u)
    s, _ = similarity_with_cache(z, model.prototypes)
    w = normality_weight(s_max, model.prototypes.beta) if cfg.use_weights else np.ones(len(x_u))
    total = 0.0
    if cfg.use_recon_loss and model.decoder is not None:
        total += loss_recon_unlabeled(e, w)
    if cfg.use_np_loss:
        total += kl_clustering_loss(s)
    scores = model.scorer.score(e, z, s_max)
    if cfg.score_loss == "squared":
        total += float(np.mean(w * scores ** 2))
    else:
        total += float(np.mean(w * -np.log(np.clip(1.0 - scores, 1e-12, None))))
    return float(total)


def _build_model(config: TrainConfig, n_features: int, x_unlabeled: np.ndarray,
                 rng: np.random.Generator, adam: AdamConfig):
    """Pretrain (when a decoder exists), cluster latents, assemble the Model."""
    encoder = make_encoder(n_features, config.latent_dim, config.encoder_hidden, rng)
    decoder = None
    if config.use_decoder:
        decoder = make_decoder(config.latent_dim, n_features, config.encoder_hidden, rng)
        if config.pretrain_epochs > 0:
            pretrain(encoder, decoder, x_unlabeled, config.pretrain_epochs,
                     config.batch_unlabeled, adam, rng)

    latents = encoder.forward(x_unlabeled)
    if not config.multi_prototype:
        k = 1
    elif config.n_prototypes is not None:
        k = config.n_prototypes
    else:
        k = "auto"
    bank = init_prototypes(latents, k=k, alpha=config.similarity_dof, beta=config.weight_scale,
                           seed=config.seed, k_max=config.prototype_sweep_max)
    scorer = Scorer(config.latent_dim, config.scorer_hidden, rng,
                    include_recon_error=config.use_decoder)
    return Model(encoder, decoder, bank, scorer, config)


def make_snapshot(model: Model, stats: NormStats) -> ModelSnapshot:
    return ModelSnapshot(
        n_features=model.encoder.in_dim,
        latent_dim=model.config.latent_dim,
        k=model.prototypes.k,
        config=model.config,
        feature_min=stats.feature_min.copy(),
        feature_max=stats.feature_max.copy(),
        params={p.name: p.copy_values() for p in model.params},
    )


def _mlp_from_params(spec: MlpSpec, prefix: str, params: dict) -> Mlp:
    tensors = []
    for i in range(spec.n_layers):
        for kind in ("W", "b"):
            name = f"{prefix}.{kind}{i}"
            if name not in params:
                raise SnapshotMissingParam(name)
            tensors.append(ParamTensor(name, params[name]))
    return Mlp(spec, tensors)


class SnapshotMissingParam(KeyError):
    def __init__(self, name: str):
        super().__init__(f"snapshot is missing parameter block '{name}'")


def build_model(snapshot: ModelSnapshot) -> Tuple[Model, NormStats]:
    """Reconstruct a Model (and its normalization stats) from a snapshot."""
    cfg = snapshot.config
    d, h = snapshot.n_features, snapshot.latent_dim
    encoder = _mlp_from_params(MlpSpec((d, cfg.encoder_hidden, h), "relu", "identity"),
                               "encoder", snapshot.params)
    decoder = None
    if cfg.use_decoder:
        decoder = _mlp_from_params(MlpSpec((h, cfg.encoder_hidden, d), "relu", "sigmoid"),
                                   "decoder", snapshot.params)
    if "prototypes.u" not in snapshot.params:
        raise SnapshotMissingParam("prototypes.u")
    bank = PrototypeBank(u=ParamTensor("prototypes.u", snapshot.params["prototypes.u"], decay=False),
                         alpha=cfg.similarity_dof, beta=cfg.weight_scale)
    in_dim = h + (2 if cfg.use_decoder else 1)
    net = _mlp_from_params(MlpSpec((in_dim, cfg.scorer_hidden, 1), "relu", "sigmoid"),
                           "scorer", snapshot.params)
    scorer = Scorer(h, cfg.scorer_hidden, include_recon_error=cfg.use_decoder, net=net)
    stats = NormStats(snapshot.feature_min, snapshot.feature_max)
    return Model(encoder, decoder, bank, scorer, cfg), stats


def fit(split: WeakSplit, config: TrainConfig) -> Tuple[ModelSnapshot, List[EpochReport]]:
    """Train end to end on a weak split and return the best-validation snapshot.

    Pipeline: fit normalization on the training pools, pretrain the
    autoencoder on unlabeled data, initialize the prototype bank from the
    pretrained latents, then jointly optimize all parameter groups over
    sampled mini-batches. Loss weights refresh once per epoch from the loss
    descent rates; early stopping restores the best validation objective.
    """
    if len(split.train_anomalies) == 0:
        raise DataError("weak supervision requires labeled anomalies")
    if len(split.train_unlabeled) == 0:
        raise DataError("training requires unlabeled samples")
    if config.val_metric == "auc_pr" and (len(split.val) == 0 or split.val.truth is None):
        raise DataError("val_metric='auc_pr' needs a validation split with ground truth")

    stats = fit_norm(np.concatenate([split.train_unlabeled.features, split.train_anomalies.features]))
    pool_u = apply_norm(stats, split.train_unlabeled)
    pool_a = apply_norm(stats, split.train_anomalies)
    val = apply_norm(stats, split.val) if len(split.val) > 0 else None

    rng = np.random.default_rng(config.seed)
    adam = AdamConfig(learning_rate=config.learning_rate, weight_decay=config.weight_decay)
    model = _build_model(config, pool_u.n_features, pool_u.features, rng, adam)

    n_steps = max(1, math.ceil(len(pool_u) / config.batch_unlabeled))
    history: List[Tuple[float, float, float]] = []
    reports: List[EpochReport] = []
    best_objective = math.inf
    best_params = None
    bad_epochs = 0

    for epoch in range(1, config.epochs_max + 1):
        weights = dynamic_weights(history, config.dwa_temperature)
        sums = np.zeros(3)
        for step in range(n_steps):
            batch = sample_batch(pool_u, pool_a, config.batch_unlabeled, config.batch_anomaly, rng)
            losses, _ = joint_step(model, batch.unlabeled.features, batch.anomalies.features, weights)
            if not math.isfinite(losses.total):
                raise TrainingDivergenceError(
                    epoch, step,
                    f"recon={losses.loss_recon:.4g} np={losses.loss_np:.4g} score={losses.loss_score:.4g}",
                )
            adam_step(model.params, adam)
            model.zero_grads()
            sums += (losses.loss_recon, losses.loss_np, losses.loss_score)
        means = sums / n_steps
        history.append((float(means[0]), float(means[1]), float(means[2])))

        if val is not None:
            if config.val_metric == "auc_pr":
                val_obj = -auc_pr(model.score_batch(val.features), val.truth)
            else:
                val_obj = validation_objective(model, val)
        else:
            val_obj = float(means.sum())  # no validation split: fall back to the training objective

        reports.append(EpochReport(epoch, *history[-1], *weights, val_obj))
        if val_obj < best_objective:
            best_objective = val_obj
            best_params = {p.name: p.copy_values() for p in model.params}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                reports[-1].stopped_early = True
                break

    if best_params is not None:
        for p in model.params:
            p.values = best_params[p.name].copy()
    return make_snapshot(model, stats), reports


def infer(snapshot: ModelSnapshot, features) -> np.ndarray:
    """Score raw feature rows with a trained snapshot.

    Pure function of (snapshot, input): normalizes with the stored statistics,
    runs the forward path, and returns one score in (0, 1) per row.
    """
    features = np.asarray(features, dtype=np.float64)
    squeezed = features.ndim == 1
    if squeezed:
        features = features[None, :]
    if features.ndim != 2 or features.shape[1] != snapshot.n_features:
        raise DataError(
            f"snapshot expects {snapshot.n_features} features, input has "
            f"{features.shape[1] if features.ndim == 2 else 'invalid'}"
        )
    model, stats = build_model(snapshot)
    scores = model.score_batch(stats.transform(features))
    return scores[0] if squeezed else scores
