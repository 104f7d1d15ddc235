"""Full-batch Adam training with patience-based early stopping and weight restore."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt

from . import autodiff as ad
from .autodiff import Tape
from .errors import DivergenceError, UsageError
from .graph import Dataset
from .models import ModelSpec, ParamStore, build_model, forward
from .rng import RngStream

if TYPE_CHECKING:
    from .protocol import Split

__all__ = [
    "AdamState",
    "EarlyStopping",
    "TrainConfig",
    "TrainOutcome",
    "accuracy",
    "adam_step",
    "evaluate",
    "train",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Settings shared by every trainable model.

    Learning rate and L2 strength belong to the :class:`ModelSpec`.
    """

    max_epochs: int = 100_000
    patience: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self) -> None:
        """Validate ranges."""
        if self.max_epochs < 1 or self.patience < 1:
            raise UsageError("max_epochs and patience must be >= 1")
        if self.patience > self.max_epochs:
            raise UsageError(
                f"patience ({self.patience}) must not exceed max_epochs ({self.max_epochs})"
            )


@dataclass
class TrainOutcome:
    """Result of one training run, evaluated on the restored best weights.

    Epochs are 1-based: ``val_loss_curve[best_epoch - 1]`` is the curve's minimum.
    """

    best_epoch: int
    epochs_run: int
    val_loss_curve: list[float]
    val_acc_curve: list[float]
    test_accuracy: float
    val_accuracy: float
    wall_seconds: float
    diverged: bool
    params: ParamStore | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready representation (parameters excluded)."""
        return {
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "test_accuracy": self.test_accuracy,
            "val_accuracy": self.val_accuracy,
            "wall_seconds": self.wall_seconds,
            "diverged": self.diverged,
            "val_loss_curve": self.val_loss_curve,
            "val_acc_curve": self.val_acc_curve,
        }


# --------------------------------------------------------------------------- #
# Optimizer
# --------------------------------------------------------------------------- #
@dataclass
class AdamState:
    """First and second moment buffers per parameter."""

    m: dict[str, npt.NDArray[np.floating]] = field(default_factory=dict)
    v: dict[str, npt.NDArray[np.floating]] = field(default_factory=dict)


def adam_step(
    params: ParamStore,
    state: AdamState,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update in place.

    Gradients are left untouched; the caller resets them before the next step.
    """
    if t < 1:
        raise ValueError(f"Adam step counter starts at 1, got {t}")
    correction1 = 1 - beta1**t
    correction2 = 1 - beta2**t
    for name, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        step = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)


# --------------------------------------------------------------------------- #
# Early stopping
# --------------------------------------------------------------------------- #
class EarlyStopping:
    """Stop once the monitored loss has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        """Track the running minimum with the given patience."""
        self.patience = patience
        self.best_loss = float("inf")
        self.best_epoch = 0
        self.counter = 0

    def step(self, loss: float, epoch: int) -> bool:
        """Record ``loss`` for ``epoch``; return whether it is a new minimum."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        """Whether patience is exhausted."""
        return self.counter >= self.patience


# --------------------------------------------------------------------------- #
# Evaluation
# --------------------------------------------------------------------------- #
def accuracy(
    logits: npt.NDArray[np.floating], labels: npt.NDArray[np.int64], mask: npt.NDArray[np.int64]
) -> float:
    """Fraction of ``mask`` rows whose argmax (lowest index on ties) equals the label."""
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) == 0:
        raise ValueError("accuracy over an empty mask")
    preds = np.argmax(logits[mask], axis=1)
    return float(np.mean(preds == labels[mask]))


def evaluate(
    spec: ModelSpec, params: ParamStore, ds: Dataset, mask: npt.NDArray[np.int64]
) -> float:
    """Inference-mode accuracy of ``params`` on ``mask``."""
    logits = forward(spec, params, ds, RngStream(0, ("evaluate",)), training=False)
    return accuracy(logits.data, ds.labels, mask)


def _validation_loss(
    spec: ModelSpec, params: ParamStore, ds: Dataset, split: Split, rng: RngStream
) -> tuple[float, float]:
    logits = forward(spec, params, ds, rng, training=False)
    data_loss = ad.masked_cross_entropy(logits, ds.labels, split.val).item()
    reg = params.l2_term(spec.l2_strength).item()
    return data_loss + reg, accuracy(logits.data, ds.labels, split.val)


# --------------------------------------------------------------------------- #
# Training loop
# --------------------------------------------------------------------------- #
def train(
    spec: ModelSpec,
    ds: Dataset,
    split: Split,
    cfg: TrainConfig,
    rng: RngStream,
    dtype: npt.DTypeLike = np.float32,
) -> TrainOutcome:
    """Train ``spec`` on ``split.train`` with early stopping on the validation loss.

    The validation loss includes the L2 term. On stop the parameters are reset to the
    epoch with the lowest validation loss and evaluated on the test set. Divergence (NaN
    or infinite values) ends training and is reported through ``diverged``.
    """
    start = time.perf_counter()
    params = build_model(spec, ds.num_features, ds.num_classes, rng.child("init"), dtype)
    dropout_rng = rng.child("dropout")
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    snapshot: dict[str, npt.NDArray[np.floating]] | None = None
    val_losses: list[float] = []
    val_accs: list[float] = []
    diverged = False
    epoch = 0

    for epoch in range(1, cfg.max_epochs + 1):
        try:
            params.zero_grad()
            with Tape() as tape:
                logits = forward(spec, params, ds, dropout_rng, training=True)
                loss = ad.add(
                    ad.masked_cross_entropy(logits, ds.labels, split.train),
                    params.l2_term(spec.l2_strength),
                )
            ad.backward(tape, loss)
            adam_step(
                params,
                state,
                epoch,
                spec.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_epsilon,
            )
            val_loss, val_acc = _validation_loss(spec, params, ds, split, dropout_rng)
            if not np.isfinite(val_loss):
                raise DivergenceError(f"{spec.kind}: non-finite validation loss")
        except DivergenceError as e:
            logger.warning("%s diverged at epoch %s: %s", spec.kind, epoch, e)
            diverged = True
            epoch -= 1
            break
        val_losses.append(val_loss)
        val_accs.append(val_acc)
        if stopper.step(val_loss, epoch):
            snapshot = params.snapshot()
        if stopper.should_stop:
            break

    test_acc = val_acc = 0.0
    if snapshot is not None:
        params.restore(snapshot)
        logits = forward(spec, params, ds, dropout_rng, training=False).data
        test_acc = accuracy(logits, ds.labels, split.test) if len(split.test) else 0.0
        val_acc = accuracy(logits, ds.labels, split.val)
    outcome = TrainOutcome(
        best_epoch=stopper.best_epoch,
        epochs_run=epoch,
        val_loss_curve=val_losses,
        val_acc_curve=val_accs,
        test_accuracy=test_acc,
        val_accuracy=val_acc,
        wall_seconds=time.perf_counter() - start,
        diverged=diverged,
        params=params,
    )
    logger.debug(
        "%s: %s epochs, best %s, test %.4f", spec.kind, epoch, stopper.best_epoch, test_acc
    )
    return outcome
