"""Training configuration: hyperparameters, optimizer settings, ablation flags."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

VAL_METRICS = ("objective", "auc_pr")


@dataclass
class TrainConfig:
    """Everything the end-to-end training loop needs.

    Defaults follow the intended operating point: mini-batches of 128
    unlabeled samples plus 32 labeled anomalies, margin 0.02, Student-t dof 1,
    weight sensitivity 1, latent width 8, AdamW at lr 5e-3 / decay 5e-4.
    ``n_prototypes=None`` selects the prototype count by silhouette sweep.

    The ablation flags cut out one component each: the reconstruction loss,
    the prototype loss, the normality weights (forced to 1), the decoder
    (which also removes the reconstruction-error score input and pretraining),
    or the multi-prototype bank (forced to a single prototype).
    """

    batch_unlabeled: int = 128
    batch_anomaly: int = 32
    margin: float = 0.02
    similarity_dof: float = 1.0
    weight_scale: float = 1.0
    latent_dim: int = 8
    encoder_hidden: int = 64
    scorer_hidden: int = 32
    learning_rate: float = 5e-3
    weight_decay: float = 5e-4
    n_prototypes: Optional[int] = None
    prototype_sweep_max: int = 10
    epochs_max: int = 50
    pretrain_epochs: int = 20
    patience: int = 10
    dwa_temperature: float = 2.0
    seed: int = 0
    score_loss: str = "squared"
    detach_weights: bool = True
    val_metric: str = "objective"
    use_recon_loss: bool = True
    use_np_loss: bool = True
    use_weights: bool = True
    use_decoder: bool = True
    multi_prototype: bool = True

    def __post_init__(self):
        positive = (
            "batch_unlabeled", "batch_anomaly", "similarity_dof", "weight_scale",
            "latent_dim", "encoder_hidden", "scorer_hidden", "learning_rate",
            "epochs_max", "patience", "dwa_temperature", "prototype_sweep_max",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("margin", "weight_decay", "pretrain_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_prototypes is not None and self.n_prototypes < 1:
            raise ValueError("n_prototypes must be >= 1 (or None for automatic selection)")
        if self.score_loss not in ("squared", "bce"):
            raise ValueError("score_loss must be 'squared' or 'bce'")
        if self.val_metric not in VAL_METRICS:
            raise ValueError(f"val_metric must be one of {VAL_METRICS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)
