"""Structure-only baselines: label propagation with row or symmetric normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from .errors import SplitError, UsageError
from .graph import Dataset

if TYPE_CHECKING:
    from .protocol import Split

__all__ = [
    "PropagationConfig",
    "PropagationMode",
    "PropagationTrace",
    "label_propagate",
    "propagate_scores",
    "propagation_matrix",
]

logger = logging.getLogger(__name__)


class PropagationMode(StrEnum):
    """Normalization of the propagation operator."""

    ROW_NORMALIZED = "row_normalized"
    SYMMETRIC_NORMALIZED = "symmetric_normalized"


@dataclass(frozen=True)
class PropagationConfig:
    """Label propagation settings.

    ``alpha`` is the weight of the seed labels in every update.
    """

    mode: PropagationMode = PropagationMode.ROW_NORMALIZED
    alpha: float = 0.5
    max_iters: int = 50
    tolerance: float = 1e-6

    def __post_init__(self) -> None:
        """Validate ranges."""
        object.__setattr__(self, "mode", PropagationMode(self.mode))
        if not 0 < self.alpha < 1:
            raise UsageError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.max_iters < 1:
            raise UsageError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tolerance < 0:
            raise UsageError(f"tolerance must be non-negative, got {self.tolerance}")


@dataclass
class PropagationTrace:
    """Final label scores plus the max-abs change of every iteration."""

    scores: npt.NDArray[np.float64]
    deltas: list[float] = field(default_factory=list)


def propagation_matrix(ds: Dataset, mode: PropagationMode) -> sp.csr_matrix:
    """``D^-1 A`` or ``D^-1/2 A D^-1/2`` over the stored adjacency (self-loops included)."""
    adj = ds.adjacency.to_scipy()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        if mode is PropagationMode.ROW_NORMALIZED:
            inv = np.where(deg > 0, 1.0 / deg, 0.0)
            return sp.csr_matrix(sp.diags(inv) @ adj)
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    d = sp.diags(inv_sqrt)
    return sp.csr_matrix(d @ adj @ d)


def propagate_scores(
    ds: Dataset, train: npt.NDArray[np.int64], cfg: PropagationConfig
) -> PropagationTrace:
    """Iterate ``Y <- (1 - alpha) P Y + alpha Y0`` until convergence or ``max_iters``.

    In row-normalized mode the training rows are reset to their one-hot labels after
    every update.
    """
    n, c = ds.num_nodes, ds.num_classes
    seeds = np.zeros((n, c), dtype=np.float64)
    seeds[train, ds.labels[train]] = 1.0
    prop = propagation_matrix(ds, cfg.mode)
    clamp = cfg.mode is PropagationMode.ROW_NORMALIZED
    scores = seeds.copy()
    trace = PropagationTrace(scores=scores)
    for _ in range(cfg.max_iters):
        updated = (1 - cfg.alpha) * (prop @ scores) + cfg.alpha * seeds
        if clamp:
            updated[train] = seeds[train]
        delta = float(np.abs(updated - scores).max()) if n else 0.0
        scores = updated
        trace.deltas.append(delta)
        if delta < cfg.tolerance:
            break
    trace.scores = scores
    logger.debug("Label propagation (%s) ran %s iterations", cfg.mode, len(trace.deltas))
    return trace


def label_propagate(ds: Dataset, split: Split, cfg: PropagationConfig) -> npt.NDArray[np.int64]:
    """Predict a class for every node from the training labels and the graph alone.

    Ties go to the lowest class index. Nodes whose scores stay all zero take the most
    frequent training label.
    """
    train = np.asarray(split.train, dtype=np.int64)
    present = np.bincount(ds.labels[train], minlength=ds.num_classes)
    if np.any(present == 0):
        missing = [ds.class_names[i] for i in np.flatnonzero(present == 0)]
        raise SplitError(
            f"label propagation needs training nodes for every class, missing {missing}"
        )
    scores = propagate_scores(ds, train, cfg).scores
    preds = scores.argmax(axis=1).astype(np.int64)
    empty = ~np.any(scores > 0, axis=1)
    preds[empty] = int(present.argmax())
    return preds
