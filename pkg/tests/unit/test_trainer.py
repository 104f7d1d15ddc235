# tests/unit/test_trainer.py
from __future__ import annotations

from collections.abc import Sequence
from typing import Any
from unittest.mock import patch

import numpy as np
import pytest

from gnnbench import autodiff as ad
from gnnbench.errors import DivergenceError, UsageError
from gnnbench.graph import Dataset, SparseAdjacency, add_self_loops
from gnnbench.models import ModelKind, ModelSpec, ParamStore, forward
from gnnbench.protocol import Split, generate_split
from gnnbench.rng import RngStream
from gnnbench.trainer import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    accuracy,
    adam_step,
    evaluate,
    train,
)
from tests.factories import planted_dataset

FAST = TrainConfig(max_epochs=60, patience=10)


def _two_cliques() -> tuple[Dataset, Split]:
    """Ten nodes, two chains of five with separable features."""
    rng = np.random.default_rng(0)
    labels = np.array([0] * 5 + [1] * 5)
    features = np.eye(2)[labels] + 0.1 * rng.random((10, 2))
    rows = [0, 1, 2, 3, 5, 6, 7, 8]
    cols = [1, 2, 3, 4, 6, 7, 8, 9]
    adj = add_self_loops(SparseAdjacency.from_edges(10, rows + cols, cols + rows))
    ds = Dataset(adj, features, labels, ("left", "right"), "cliques")
    split = Split(np.array([0, 5]), np.array([1, 6]), np.array([2, 3, 4, 7, 8, 9]))
    return ds, split


def _scalar_store(value: float, grad: float) -> ParamStore:
    t = ad.Tensor(np.array([[value]]), requires_grad=True, dtype=np.float64)
    t.grad = np.array([[grad]])
    return ParamStore(kind=ModelKind.LOGREG, tensors={"w": t})


# --------------------------------------------------------------------------- #
# Config
# --------------------------------------------------------------------------- #
def test_train_config_validation() -> None:
    with pytest.raises(UsageError):
        TrainConfig(max_epochs=0)
    with pytest.raises(UsageError, match="patience"):
        TrainConfig(max_epochs=5, patience=6)


# --------------------------------------------------------------------------- #
# Adam
# --------------------------------------------------------------------------- #
def test_adam_first_step_by_hand() -> None:
    store = _scalar_store(0.0, 1.0)
    adam_step(store, AdamState(), t=1, lr=0.01)
    assert store["w"].data[0, 0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-12)


def test_adam_zero_gradient_is_a_no_op() -> None:
    store = _scalar_store(0.3, 0.0)
    adam_step(store, AdamState(), t=1, lr=0.01)
    assert store["w"].data[0, 0] == 0.3


def test_adam_keeps_moments_between_steps() -> None:
    store = _scalar_store(0.0, 1.0)
    state = AdamState()
    adam_step(store, state, t=1, lr=0.01)
    adam_step(store, state, t=2, lr=0.01)
    assert state.m["w"][0, 0] == pytest.approx(0.19)
    assert state.v["w"][0, 0] == pytest.approx(0.001999)
    # constant gradients give a bias-corrected step of lr each time
    assert store["w"].data[0, 0] == pytest.approx(-0.02, rel=1e-6)


def test_adam_counter_starts_at_one() -> None:
    with pytest.raises(ValueError, match="starts at 1"):
        adam_step(_scalar_store(0.0, 1.0), AdamState(), t=0, lr=0.01)


# --------------------------------------------------------------------------- #
# Early stopping
# --------------------------------------------------------------------------- #
def _run_stopper(losses: Sequence[float], patience: int) -> tuple[int, int]:
    """(epochs run, best epoch) for a loss sequence, as the training loop drives it."""
    stopper = EarlyStopping(patience)
    epoch = 0
    for epoch, loss in enumerate(losses, start=1):
        stopper.step(loss, epoch)
        if stopper.should_stop:
            break
    return epoch, stopper.best_epoch


def _oracle(losses: Sequence[float], patience: int) -> tuple[int, int]:
    for stop in range(1, len(losses) + 1):
        prefix = list(losses[:stop])
        best = prefix.index(min(prefix)) + 1
        if stop - best >= patience:
            return stop, best
    prefix = list(losses)
    return len(losses), prefix.index(min(prefix)) + 1


def test_constant_loss_stops_after_patience() -> None:
    assert _run_stopper([1.0] * 200, 50) == (51, 1)


def test_strict_improvement_required() -> None:
    assert _run_stopper([3.0, 2.0, 2.0, 2.0, 1.0], 2) == (4, 2)


def test_early_stopping_matches_oracle() -> None:
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        length = int(rng.integers(1, 40))
        patience = int(rng.integers(1, 12))
        losses = rng.integers(0, 6, size=length).astype(float).tolist()
        assert _run_stopper(losses, patience) == _oracle(losses, patience), (losses, patience)


# --------------------------------------------------------------------------- #
# Accuracy
# --------------------------------------------------------------------------- #
def test_accuracy_ties_go_to_lowest_class() -> None:
    logits = np.zeros((3, 2))
    assert accuracy(logits, np.array([0, 0, 1]), np.arange(3)) == pytest.approx(2 / 3)


def test_accuracy_rejects_empty_mask() -> None:
    with pytest.raises(ValueError, match="empty mask"):
        accuracy(np.zeros((2, 2)), np.zeros(2, dtype=np.int64), np.array([], dtype=np.int64))


# --------------------------------------------------------------------------- #
# Training loop
# --------------------------------------------------------------------------- #
def test_gcn_learns_separable_graph() -> None:
    ds, split = _two_cliques()
    spec = ModelSpec(
        ModelKind.GCN, hidden_size=16, feature_dropout=0.0, learning_rate=0.05, l2_strength=5e-4
    )
    outcome = train(spec, ds, split, TrainConfig(max_epochs=200, patience=50), RngStream(0))
    assert not outcome.diverged
    assert outcome.test_accuracy >= 0.9
    assert outcome.params is not None
    assert evaluate(spec, outcome.params, ds, split.train) == 1.0


@pytest.mark.parametrize("kind", [ModelKind.MLP, ModelKind.GCN, ModelKind.GS_MEAN])
def test_outcome_invariants(kind: ModelKind) -> None:
    ds = planted_dataset()
    split = generate_split(ds, 0, 0)
    spec = ModelSpec.from_dict({"kind": kind, "hidden_size": 16})
    outcome = train(spec, ds, split, FAST, RngStream(1))
    curve = outcome.val_loss_curve
    assert len(curve) == outcome.epochs_run == len(outcome.val_acc_curve)
    assert 1 <= outcome.best_epoch <= outcome.epochs_run
    assert curve[outcome.best_epoch - 1] == min(curve)
    assert outcome.epochs_run - outcome.best_epoch <= FAST.patience
    assert 0.0 <= outcome.test_accuracy <= 1.0


def test_restored_weights_reproduce_best_validation_loss() -> None:
    ds = planted_dataset()
    split = generate_split(ds, 0, 0)
    spec = ModelSpec.from_dict({"kind": "MLP", "hidden_size": 16})
    outcome = train(spec, ds, split, FAST, RngStream(2))
    assert outcome.params is not None
    logits = forward(spec, outcome.params, ds, RngStream(0), training=False)
    loss = ad.masked_cross_entropy(logits, ds.labels, split.val).item()
    loss += outcome.params.l2_term(spec.l2_strength).item()
    assert loss == pytest.approx(outcome.val_loss_curve[outcome.best_epoch - 1], rel=1e-6)


def test_training_is_reproducible() -> None:
    ds = planted_dataset()
    split = generate_split(ds, 0, 0)
    spec = ModelSpec.from_dict({"kind": "GAT", "hidden_size": 8})
    a = train(spec, ds, split, FAST, RngStream.derive(0, ds.name, "GAT", 0, 0))
    b = train(spec, ds, split, FAST, RngStream.derive(0, ds.name, "GAT", 0, 0))
    assert {**a.to_dict(), "wall_seconds": 0} == {**b.to_dict(), "wall_seconds": 0}
    assert a.params is not None and b.params is not None
    for name, tensor in a.params.items():
        assert np.array_equal(tensor.data, b.params[name].data)


def test_different_inits_differ() -> None:
    ds = planted_dataset()
    split = generate_split(ds, 0, 0)
    spec = ModelSpec.from_dict({"kind": "MLP", "hidden_size": 16})
    a = train(spec, ds, split, FAST, RngStream.derive(0, ds.name, "MLP", 0, 0))
    b = train(spec, ds, split, FAST, RngStream.derive(0, ds.name, "MLP", 0, 1))
    assert a.val_loss_curve != b.val_loss_curve


def test_divergence_is_reported() -> None:
    ds = planted_dataset()
    split = generate_split(ds, 0, 0)
    spec = ModelSpec.from_dict({"kind": "MLP", "hidden_size": 16})
    calls = {"n": 0}

    def flaky_forward(*args: Any, **kwargs: Any) -> ad.Tensor:
        calls["n"] += 1
        if calls["n"] == 5:
            raise DivergenceError("MLP: non-finite logits")
        return forward(*args, **kwargs)

    with patch("gnnbench.trainer.forward", side_effect=flaky_forward):
        outcome = train(spec, ds, split, FAST, RngStream(0))
    assert outcome.diverged
    # epochs 1 and 2 completed, epoch 3 blew up in its training pass
    assert outcome.epochs_run == 2
    assert len(outcome.val_loss_curve) == 2
    assert outcome.best_epoch in (1, 2)


def test_outcome_dict_leaves_out_parameters() -> None:
    ds, split = _two_cliques()
    spec = ModelSpec(ModelKind.LOGREG, hidden_size=0, feature_dropout=0.0)
    outcome = train(spec, ds, split, TrainConfig(max_epochs=5, patience=5), RngStream(0))
    data = outcome.to_dict()
    assert "params" not in data
    assert data["epochs_run"] == 5
