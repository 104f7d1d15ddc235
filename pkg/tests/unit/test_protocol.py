# tests/unit/test_protocol.py
from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Any
from unittest.mock import patch

import numpy as np
import pytest

from gnnbench.errors import DataError, DivergenceError, ParseError, SplitError, UsageError
from gnnbench.graph import Dataset
from gnnbench.models import TUNED_DEFAULTS, ModelKind, ModelSpec
from gnnbench.protocol import (
    CSV_HEADER,
    SIZED_TEST,
    SIZED_VAL,
    ExperimentPlan,
    GridSpace,
    ResultTable,
    Split,
    SplitMode,
    TrialRecord,
    aggregate,
    average_rank,
    generate_split,
    grid_search,
    load_fixed_split,
    read_results_csv,
    relative_accuracy,
    run_experiment,
    write_results,
)
from gnnbench.trainer import TrainConfig, TrainOutcome, train
from tests.factories import planted_dataset

FAST = TrainConfig(max_epochs=20, patience=5)


def _record(dataset: str, model: str, split_id: int, init_id: int, acc: float) -> TrialRecord:
    return TrialRecord(dataset, model, split_id, init_id, acc, acc, 1, 0.0, False)


def _plan(*kinds: str, **extra: Any) -> ExperimentPlan:
    models = tuple(ModelSpec.from_dict({"kind": k, "hidden_size": 8}) for k in kinds)
    defaults: dict[str, Any] = {
        "datasets": ("planted",),
        "models": models,
        "num_splits": 2,
        "num_inits": 3,
        "experiment_seed": 11,
        "train_config": FAST,
    }
    defaults.update(extra)
    return ExperimentPlan(**defaults)


# --------------------------------------------------------------------------- #
# Splits
# --------------------------------------------------------------------------- #
def test_split_sizes_per_class(planted: Dataset) -> None:
    split = generate_split(planted, 0, 0)
    for c in range(planted.num_classes):
        assert np.sum(planted.labels[split.train] == c) == 20
        assert np.sum(planted.labels[split.val] == c) == 30
    assert len(split.test) == planted.num_nodes - 3 * 50
    assert split.seed_provenance == (0, 0)


def test_split_partitions_nodes() -> None:
    ds = planted_dataset(num_classes=4, per_class=55)
    for split_id in range(1000):
        split = generate_split(ds, 3, split_id)
        union = np.concatenate([split.train, split.val, split.test])
        assert len(union) == ds.num_nodes
        assert np.array_equal(np.sort(union), np.arange(ds.num_nodes))


def test_split_is_deterministic(planted: Dataset) -> None:
    a, b = generate_split(planted, 5, 2), generate_split(planted, 5, 2)
    assert np.array_equal(a.train, b.train)
    assert np.array_equal(a.val, b.val)
    c = generate_split(planted, 5, 3)
    assert not np.array_equal(a.train, c.train)


def test_class_of_exactly_fifty_has_no_test_nodes() -> None:
    ds = planted_dataset(num_classes=2, per_class=50)
    split = generate_split(ds, 0, 0)
    assert len(split.test) == 0


def test_small_class_cannot_be_split() -> None:
    ds = planted_dataset(num_classes=2, per_class=49)
    with pytest.raises(SplitError, match="fewer than 50 nodes"):
        generate_split(ds, 0, 0)


@pytest.fixture(scope="module")
def roomy() -> Dataset:
    return planted_dataset(num_classes=4, per_class=400, name="roomy")


def test_sized_split_sizes(roomy: Dataset) -> None:
    for split_id in range(20):
        split = generate_split(roomy, 2, split_id, SplitMode.SIZED)
        assert np.array_equal(np.bincount(roomy.labels[split.train]), [20, 20, 20, 20])
        assert len(split.val) == SIZED_VAL == 500
        assert len(split.test) == SIZED_TEST == 1000
        used = np.concatenate([split.train, split.val, split.test])
        assert len(np.unique(used)) == 80 + 500 + 1000
        assert split.seed_provenance == (2, split_id)


def test_sized_split_is_deterministic(roomy: Dataset) -> None:
    a = generate_split(roomy, 5, 1, "sized")
    b = generate_split(roomy, 5, 1, "sized")
    assert np.array_equal(a.val, b.val)
    assert np.array_equal(a.test, b.test)
    c = generate_split(roomy, 5, 2, "sized")
    assert not np.array_equal(a.test, c.test)


def test_sized_split_shares_training_nodes_with_per_class(roomy: Dataset) -> None:
    sized = generate_split(roomy, 3, 4, SplitMode.SIZED)
    per_class = generate_split(roomy, 3, 4, SplitMode.PER_CLASS)
    assert np.array_equal(sized.train, per_class.train)


def test_sized_split_needs_enough_nodes(planted: Dataset) -> None:
    with pytest.raises(SplitError, match="remain after training"):
        generate_split(planted, 0, 0, SplitMode.SIZED)


def test_unknown_split_mode(planted: Dataset) -> None:
    with pytest.raises(ValueError, match="stratified"):
        generate_split(planted, 0, 0, "stratified")
    with pytest.raises(UsageError, match="split_mode must be one of"):
        _plan("MLP", split_mode="stratified")


def test_run_experiment_draws_splits_in_plan_mode(roomy: Dataset) -> None:
    plan = _plan("LabelProp", datasets=("roomy",), split_mode="sized")
    with patch("gnnbench.protocol.generate_split", wraps=generate_split) as spy:
        table = run_experiment(plan, datasets=[roomy])
    assert spy.call_count == 2
    assert all(call.args[3] is SplitMode.SIZED for call in spy.call_args_list)
    assert table.metadata["split_mode"] == "sized"
    assert not table.failures


def test_split_rejects_overlap() -> None:
    with pytest.raises(SplitError, match="overlap"):
        Split(np.array([0, 1]), np.array([1, 2]), np.array([3]))


def test_split_rejects_duplicates() -> None:
    with pytest.raises(SplitError, match="duplicate"):
        Split(np.array([0, 0]), np.array([1]), np.array([2]))


def test_fixed_split_text(tmp_path: Path) -> None:
    path = tmp_path / "split.txt"
    path.write_text("# public split\ntrain 2 0\nval: 1\ntest 3 4\n", encoding="utf-8")
    split = load_fixed_split(path, num_nodes=5)
    assert split.train.tolist() == [0, 2]
    assert split.val.tolist() == [1]
    assert split.seed_provenance is None


def test_fixed_split_json(tmp_path: Path) -> None:
    path = tmp_path / "split.json"
    path.write_text(json.dumps({"train": [0], "val": [1], "test": [2, 3]}), encoding="utf-8")
    assert load_fixed_split(path).test.tolist() == [2, 3]


def test_fixed_split_out_of_range(tmp_path: Path) -> None:
    path = tmp_path / "split.txt"
    path.write_text("train 0\nval 1\ntest 9\n", encoding="utf-8")
    with pytest.raises(SplitError, match="out of range"):
        load_fixed_split(path, num_nodes=5)


def test_fixed_split_overlap(tmp_path: Path) -> None:
    path = tmp_path / "split.txt"
    path.write_text("train 0 1\nval 1\ntest 2\n", encoding="utf-8")
    with pytest.raises(SplitError, match="overlap"):
        load_fixed_split(path)


@pytest.mark.parametrize(
    ("text", "match"),
    [
        ("train 0\nvalid 1\ntest 2\n", "split.txt:2: unknown set 'valid'"),
        ("train 0\nval x\ntest 2\n", "split.txt:2: non-integer index"),
        ("train 0\ntest 2\n", "missing sets \\['val'\\]"),
    ],
)
def test_fixed_split_parse_errors(tmp_path: Path, text: str, match: str) -> None:
    path = tmp_path / "split.txt"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ParseError, match=match):
        load_fixed_split(path)


def test_fixed_split_missing_file(tmp_path: Path) -> None:
    with pytest.raises(DataError, match="Cannot read split file"):
        load_fixed_split(tmp_path / "none.txt")


# --------------------------------------------------------------------------- #
# Plans
# --------------------------------------------------------------------------- #
def test_plan_rejects_repeated_kind() -> None:
    with pytest.raises(UsageError, match="repeated"):
        _plan("MLP", "MLP")


def test_plan_fixed_split_needs_one_split() -> None:
    with pytest.raises(UsageError, match="num_splits=1"):
        _plan("MLP", fixed_split="split.txt")


def test_plan_rejects_zero_inits() -> None:
    with pytest.raises(UsageError, match="num_inits"):
        _plan("MLP", num_inits=0)


# --------------------------------------------------------------------------- #
# Experiment runs
# --------------------------------------------------------------------------- #
def test_run_cardinality_and_label_propagation_replication(planted: Dataset) -> None:
    plan = _plan("MLP", "LabelProp")
    table = run_experiment(plan, datasets=[planted])
    assert len(table) == 2 * 2 * 3
    assert not table.failures
    lp = [r for r in table.records if r.model == "LabelProp"]
    assert all(r.deterministic for r in lp)
    for split_id in range(2):
        accs = {r.test_accuracy for r in lp if r.split_id == split_id}
        assert len(accs) == 1
    assert all(r.wall_seconds == 0.0 for r in table.records)
    assert [r.key for r in table.records] == sorted(r.key for r in table.records)


def test_run_is_reproducible(planted: Dataset) -> None:
    plan = _plan("GCN")
    a = run_experiment(plan, datasets=[planted])
    b = run_experiment(plan, datasets=[planted])
    assert a.records == b.records
    assert a.metadata == b.metadata


def test_run_records_timing_when_asked(planted: Dataset) -> None:
    table = run_experiment(_plan("LogReg", num_inits=1, record_timing=True), datasets=[planted])
    assert all(r.wall_seconds > 0.0 for r in table.records)


def test_run_keeps_going_after_a_failing_trial(planted: Dataset) -> None:
    calls = {"n": 0}

    def flaky(*args: Any, **kwargs: Any) -> TrainOutcome:
        calls["n"] += 1
        if calls["n"] == 2:
            raise DivergenceError("MLP: non-finite logits")
        return train(*args, **kwargs)

    with patch("gnnbench.protocol.train", side_effect=flaky):
        table = run_experiment(_plan("MLP", num_inits=2), datasets=[planted])
    assert len(table) == 3
    assert len(table.failures) == 1
    assert "non-finite" in table.failures[0].error


@pytest.mark.parametrize(
    "error",
    [IndexError("index 7 is out of bounds"), KeyError("layer1.weight"), RuntimeError("boom")],
)
def test_run_records_unexpected_trial_errors(planted: Dataset, error: Exception) -> None:
    calls = {"n": 0}

    def broken(*args: Any, **kwargs: Any) -> TrainOutcome:
        calls["n"] += 1
        if calls["n"] == 2:
            raise error
        return train(*args, **kwargs)

    with patch("gnnbench.protocol.train", side_effect=broken):
        table = run_experiment(_plan("MLP", num_inits=2), datasets=[planted])
    assert len(table) == 3
    assert len(table.failures) == 1
    failure = table.failures[0]
    assert (failure.model, failure.split_id, failure.init_id) == ("MLP", 0, 1)
    assert failure.error.startswith(type(error).__name__)


def test_run_with_fixed_split(tmp_path: Path, planted: Dataset) -> None:
    path = tmp_path / "split.txt"
    path.write_text("train 0 60 120\nval 1 61 121\ntest 2 62 122\n", encoding="utf-8")
    plan = _plan("LabelProp", num_splits=1, fixed_split=str(path))
    table = run_experiment(plan, datasets=[planted])
    assert {r.split_id for r in table.records} == {0}
    assert len(table) == 3


def test_metadata_describes_conventions(planted: Dataset) -> None:
    table = run_experiment(_plan("LabelProp", num_inits=1), datasets=[planted])
    meta = table.metadata
    assert meta["std_convention"].startswith("population")
    assert meta["plan"]["num_splits"] == 2
    assert "philox" in meta["rng"].lower()
    assert meta["timing_recorded"] is False


def test_results_files_round_trip(tmp_path: Path, planted: Dataset) -> None:
    table = run_experiment(_plan("MLP", num_inits=1), datasets=[planted])
    csv_path, json_path = write_results(table, tmp_path)
    assert csv_path.read_text(encoding="utf-8").splitlines()[0] == ",".join(CSV_HEADER)
    loaded = read_results_csv(csv_path)
    assert loaded.records == table.records
    assert loaded.metadata == json.loads(json_path.read_text(encoding="utf-8"))["metadata"]


def test_read_results_without_rows(tmp_path: Path) -> None:
    path = tmp_path / "results.csv"
    path.write_text(",".join(CSV_HEADER) + "\n", encoding="utf-8")
    with pytest.raises(DataError, match="no result rows"):
        read_results_csv(path)


def test_read_results_bad_row(tmp_path: Path) -> None:
    path = tmp_path / "results.csv"
    row = "cora,GCN,0,0,0.8,0.8,1,0.0,maybe,false"
    path.write_text(",".join(CSV_HEADER) + "\n" + row + "\n", encoding="utf-8")
    with pytest.raises(ParseError, match="results.csv:2: expected true/false"):
        read_results_csv(path)


def test_read_results_missing_file(tmp_path: Path) -> None:
    with pytest.raises(DataError, match="not found"):
        read_results_csv(tmp_path / "results.csv")


# --------------------------------------------------------------------------- #
# Aggregation
# --------------------------------------------------------------------------- #
def test_aggregate_population_std() -> None:
    table = ResultTable(
        [
            _record("d", "A", 0, 0, 0.8),
            _record("d", "A", 1, 0, 0.8),
            _record("d", "B", 0, 0, 0.7),
            _record("d", "B", 1, 0, 0.9),
        ]
    )
    stats = aggregate(table)
    assert stats[("d", "A")].mean == pytest.approx(0.8)
    assert stats[("d", "A")].std == 0.0
    assert stats[("d", "B")].mean == pytest.approx(0.8)
    assert stats[("d", "B")].std == pytest.approx(0.1)
    assert stats[("d", "B")].count == 2


def test_relative_accuracy_two_models() -> None:
    table = ResultTable([_record("d", "A", 0, 0, 0.80), _record("d", "B", 0, 0, 0.76)])
    rel = relative_accuracy(table)
    assert rel.values["A"] == pytest.approx(100.0)
    assert rel.values["B"] == pytest.approx(95.0)
    assert rel.excluded == []


def test_relative_accuracy_excludes_missing_cells() -> None:
    table = ResultTable(
        [
            _record("d1", "A", 0, 0, 0.8),
            _record("d1", "B", 0, 0, 0.4),
            _record("d2", "A", 0, 0, 0.5),
        ]
    )
    rel = relative_accuracy(table)
    assert rel.values["B"] == pytest.approx(50.0)
    assert rel.values["A"] == pytest.approx(100.0)
    assert rel.excluded == [("d2", "B")]


def test_relative_accuracy_averages_inits_first() -> None:
    table = ResultTable(
        [
            _record("d", "A", 0, 0, 1.0),
            _record("d", "A", 0, 1, 0.6),
            _record("d", "B", 0, 0, 0.4),
            _record("d", "B", 0, 1, 0.4),
        ]
    )
    assert relative_accuracy(table).values["B"] == pytest.approx(50.0)


def test_average_rank_with_ties() -> None:
    table = ResultTable(
        [
            _record("d", "A", 0, 0, 0.9),
            _record("d", "B", 0, 0, 0.9),
            _record("d", "C", 0, 0, 0.7),
        ]
    )
    assert average_rank(table) == {"A": 1.5, "B": 1.5, "C": 3.0}


def _brute_force(table: ResultTable) -> tuple[dict[str, float], dict[str, float]]:
    per_cell: dict[tuple[str, int], dict[str, list[float]]] = {}
    for r in table.records:
        per_cell.setdefault((r.dataset, r.split_id), {}).setdefault(r.model, []).append(
            r.test_accuracy
        )
    rel: dict[str, list[float]] = {}
    rank: dict[str, list[float]] = {}
    for models in per_cell.values():
        means = {m: sum(v) / len(v) for m, v in models.items()}
        best = max(means.values())
        for m, acc in means.items():
            rel.setdefault(m, []).append(acc / best)
            better = sum(1 for other in means.values() if other > acc)
            equal = sum(1 for other in means.values() if other == acc)
            rank.setdefault(m, []).append(better + (equal + 1) / 2)
    mean = {m: 100 * sum(v) / len(v) for m, v in rel.items()}
    return mean, {m: sum(v) / len(v) for m, v in rank.items()}


def test_metrics_match_brute_force() -> None:
    rng = np.random.default_rng(0)
    for _ in range(1000):
        num_models = int(rng.integers(1, 5))
        records = [
            _record(f"d{d}", f"m{m}", s, i, float(rng.integers(1, 10)) / 10)
            for d, m, s, i in itertools.product(range(2), range(num_models), range(2), range(2))
        ]
        table = ResultTable(records)
        rel, ranks = _brute_force(table)
        assert relative_accuracy(table).values == pytest.approx(rel)
        assert average_rank(table) == pytest.approx(ranks)


def test_rank_is_invariant_to_monotone_rescaling() -> None:
    base = [("A", 0.9), ("B", 0.5), ("C", 0.7)]
    table = ResultTable([_record("d", m, 0, 0, a) for m, a in base])
    squashed = ResultTable([_record("d", m, 0, 0, a**3) for m, a in base])
    assert average_rank(table) == average_rank(squashed)


# --------------------------------------------------------------------------- #
# Grid search
# --------------------------------------------------------------------------- #
def test_grid_cardinality() -> None:
    grid = GridSpace()
    assert grid.cardinality(ModelKind.GCN) == 980
    assert grid.cardinality(ModelKind.GAT) == 6860
    small = GridSpace(hidden_sizes=(8,), learning_rates=(0.01, 0.1), dropouts=(0.5,))
    assert small.cardinality(ModelKind.MLP) == 2 * 7


def test_budget_filter() -> None:
    grid = GridSpace()
    assert grid.within_budget(ModelSpec(ModelKind.GCN, hidden_size=64))
    assert not grid.within_budget(ModelSpec(ModelKind.GS_MEAN, hidden_size=64))
    strict = GridSpace(check_all_datasets=True)
    assert not strict.within_budget(ModelSpec(ModelKind.GCN, hidden_size=64), [(3703, 6)])


@pytest.mark.parametrize("kind", [ModelKind.GAT, ModelKind.GS_MAXPOOL])
def test_budget_slack_admits_tuned_models_over_cap(kind: ModelKind) -> None:
    assert GridSpace().budget == pytest.approx(96_842.55)
    assert GridSpace().within_budget(TUNED_DEFAULTS[kind])
    assert not GridSpace(slack=0.0).within_budget(TUNED_DEFAULTS[kind])


def test_grid_rejects_empty_axis() -> None:
    with pytest.raises(UsageError, match="at least one value"):
        GridSpace(hidden_sizes=())


def _fake_train(scores: dict[float, float]) -> Any:
    def fake(spec: ModelSpec, *args: Any, **kwargs: Any) -> TrainOutcome:
        return TrainOutcome(
            best_epoch=1,
            epochs_run=1,
            val_loss_curve=[1.0],
            val_acc_curve=[scores[spec.l2_strength]],
            test_accuracy=0.5,
            val_accuracy=scores[spec.l2_strength],
            wall_seconds=0.0,
            diverged=False,
        )

    return fake


def test_grid_search_picks_best_validation_score(planted: Dataset) -> None:
    grid = GridSpace(
        hidden_sizes=(8,), learning_rates=(0.01,), dropouts=(0.5,), l2_strengths=(1e-4, 1e-1)
    )
    with patch("gnnbench.protocol.train", side_effect=_fake_train({1e-4: 0.9, 1e-1: 0.5})):
        result = grid_search([planted], "MLP", grid, num_splits=2, num_inits=2)
    assert len(result.ranking) == 2
    assert result.best.l2_strength == 1e-4
    assert result.ranking[0].score == pytest.approx(0.9)
    assert result.ranking[0].per_dataset == {"planted": pytest.approx(0.9)}


def test_grid_search_ties_prefer_stronger_l2(planted: Dataset) -> None:
    grid = GridSpace(
        hidden_sizes=(8,), learning_rates=(0.01,), dropouts=(0.5,), l2_strengths=(1e-4, 1e-1)
    )
    with patch("gnnbench.protocol.train", side_effect=_fake_train({1e-4: 0.7, 1e-1: 0.7})):
        result = grid_search([planted], "MLP", grid, num_splits=1, num_inits=1)
    assert result.best.l2_strength == 1e-1


def test_grid_search_real_training(planted: Dataset) -> None:
    grid = GridSpace(
        hidden_sizes=(4, 8), learning_rates=(0.01,), dropouts=(0.5,), l2_strengths=(5e-4,)
    )
    result = grid_search([planted], ModelKind.MLP, grid, 1, 1, train_config=FAST)
    assert [p.spec.hidden_size for p in result.ranking] in ([4, 8], [8, 4])
    assert result.to_dict()["evaluated"] == 2


def test_grid_search_rejects_label_propagation(planted: Dataset) -> None:
    with pytest.raises(UsageError, match="no hyperparameters"):
        grid_search([planted], "LabelProp", GridSpace(), 1, 1)


def test_grid_search_everything_over_budget(planted: Dataset) -> None:
    grid = GridSpace(hidden_sizes=(64,), param_cap=10)
    with pytest.raises(UsageError, match="fits the budget"):
        grid_search([planted], "GCN", grid, 1, 1)
