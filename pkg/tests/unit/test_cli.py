# tests/unit/test_cli.py
from __future__ import annotations

import csv
import json
from collections.abc import Callable
from pathlib import Path

import pytest

from gnnbench import __version__
from gnnbench.cli import main
from gnnbench.protocol import CSV_HEADER
from gnnbench.storage import save_dataset
from tests.factories import planted_dataset


def _rows(path: Path) -> list[dict[str, str]]:
    with path.open(encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------- #
# prepare
# --------------------------------------------------------------------------- #
def test_prepare_small_bundle(tmp_path: Path, make_bundle: Callable[..., Path]) -> None:
    out = tmp_path / "prepared"
    code = main(
        ["prepare", "--input", str(make_bundle()), "--out", str(out), "--min-class-count", "1"]
    )
    assert code == 0
    meta = json.loads((out / "meta.json").read_text(encoding="utf-8"))
    assert meta["N"] == 3
    assert meta["name"] == "bundle"
    stages = json.loads((out / "provenance.json").read_text(encoding="utf-8"))
    assert stages[0]["stage"] == "raw"
    assert stages[-1]["stage"] == "add_self_loops"
    (stats,) = _rows(out / "stats.csv")
    assert stats["nodes"] == "3"
    assert stats["edges"] == "2"


def test_prepare_removes_every_class(
    tmp_path: Path, make_bundle: Callable[..., Path], capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(["prepare", "--input", str(make_bundle()), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "[ERROR]" in capsys.readouterr().err


def test_prepare_needs_out(make_bundle: Callable[..., Path]) -> None:
    assert main(["prepare", "--input", str(make_bundle())]) == 1


def test_prepare_into_unwritable_directory(
    tmp_path: Path, make_bundle: Callable[..., Path]
) -> None:
    blocker = tmp_path / "file"
    blocker.write_text("", encoding="utf-8")
    code = main(["prepare", "--input", str(make_bundle()), "--out", str(blocker / "out")])
    assert code == 1


def test_prepare_reports_parse_error_location(
    tmp_path: Path, make_bundle: Callable[..., Path], capsys: pytest.CaptureFixture[str]
) -> None:
    root = make_bundle(edges="0 1\n1 two\n")
    assert main(["prepare", "--input", str(root), "--out", str(tmp_path / "out")]) == 2
    assert "edges.txt:2" in capsys.readouterr().err


# --------------------------------------------------------------------------- #
# argument handling
# --------------------------------------------------------------------------- #
def test_unknown_command() -> None:
    assert main(["evaluate"]) == 1


def test_unknown_model(container: Path) -> None:
    assert main(["train", "--dataset", str(container), "--model", "ChebNet"]) == 1


def test_version(capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_bad_worker_env(
    plan_file: Callable[..., Path], tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    monkeypatch.setenv("GNNBENCH_WORKERS", "lots")
    code = main(["benchmark", "--config", str(plan_file()), "--out", str(tmp_path / "out")])
    assert code == 1


def test_benchmark_needs_config(tmp_path: Path) -> None:
    assert main(["benchmark", "--out", str(tmp_path)]) == 1


# --------------------------------------------------------------------------- #
# train
# --------------------------------------------------------------------------- #
def test_train_label_propagation(container: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["train", "--dataset", str(container), "--model", "LabelProp"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["model"] == "LabelProp"
    assert 0.0 <= payload["test_accuracy"] <= 1.0


def test_train_mlp_with_overrides(container: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(
        [
            "train",
            "--dataset",
            str(container),
            "--model",
            "MLP",
            "--split-id",
            "1",
            "--override",
            "train_config.max_epochs=5",
            "--override",
            "train_config.patience=5",
            "--override",
            "models.0.hidden_size=8",
        ]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["epochs_run"] == 5
    assert payload["split_id"] == 1
    assert payload["config"]["hidden_size"] == 8
    assert len(payload["val_loss_curve"]) == 5


def test_train_with_fixed_split(
    container: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    split = tmp_path / "split.txt"
    split.write_text("train 0 60 120\nval 1 61 121\ntest 2 62 122\n", encoding="utf-8")
    args = ["train", "--dataset", str(container), "--model", "LabelProp"]
    assert main([*args, "--fixed-split", str(split)]) == 0
    assert json.loads(capsys.readouterr().out)["dataset"] == "planted"


# --------------------------------------------------------------------------- #
# benchmark and report
# --------------------------------------------------------------------------- #
def test_benchmark_writes_results_and_report(
    plan_file: Callable[..., Path], tmp_path: Path
) -> None:
    out = tmp_path / "out"
    assert main(["benchmark", "--config", str(plan_file()), "--out", str(out)]) == 0
    rows = _rows(out / "results.csv")
    assert len(rows) == 2 * 2 * 1
    assert tuple(rows[0]) == CSV_HEADER
    assert {r["model"] for r in rows} == {"MLP", "LabelProp"}
    for name in ("results.json", "summary.csv", "summary.json", "boxplots.json", "ranks.csv"):
        assert (out / name).is_file(), name


def test_benchmark_seed_flag_changes_splits(
    plan_file: Callable[..., Path], tmp_path: Path
) -> None:
    plan = str(plan_file(models=["LabelProp"]))
    assert main(["benchmark", "--config", plan, "--out", str(tmp_path / "a")]) == 0
    assert main(["benchmark", "--config", plan, "--out", str(tmp_path / "b"), "--seed", "8"]) == 0
    meta = json.loads((tmp_path / "b" / "results.json").read_text(encoding="utf-8"))
    assert meta["metadata"]["plan"]["experiment_seed"] == 8


def test_benchmark_split_mode_flag(plan_file: Callable[..., Path], tmp_path: Path) -> None:
    big = save_dataset(planted_dataset(per_class=520, name="big"), tmp_path / "big")
    plan = str(plan_file(datasets=[str(big)], models=["LabelProp"]))
    out = tmp_path / "sized"
    assert main(["benchmark", "--config", plan, "--out", str(out), "--split-mode", "sized"]) == 0
    meta = json.loads((out / "results.json").read_text(encoding="utf-8"))["metadata"]
    assert meta["split_mode"] == "sized"
    assert meta["plan"]["split_mode"] == "sized"


def test_train_sized_split_on_small_graph(container: Path) -> None:
    args = ["train", "--dataset", str(container), "--model", "LabelProp"]
    assert main([*args, "--split-mode", "sized"]) == 2
    assert main([*args, "--override", "split_mode=sized"]) == 2


def test_report_regenerates_summaries(plan_file: Callable[..., Path], tmp_path: Path) -> None:
    out = tmp_path / "out"
    assert main(["benchmark", "--config", str(plan_file()), "--out", str(out)]) == 0
    before = (out / "summary.csv").read_bytes()
    (out / "summary.csv").unlink()
    assert main(["report", "--results", str(out / "results.csv")]) == 0
    assert (out / "summary.csv").read_bytes() == before


def test_report_compares_split_regimes(plan_file: Callable[..., Path], tmp_path: Path) -> None:
    plan = str(plan_file(models=["LabelProp", "LabelProp NL"]))
    assert main(["benchmark", "--config", plan, "--out", str(tmp_path / "a")]) == 0
    assert main(["benchmark", "--config", plan, "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    code = main(
        [
            "report",
            "--results",
            f"seed7={tmp_path / 'a' / 'results.csv'}",
            "--results",
            f"seed3={tmp_path / 'b' / 'results.csv'}",
            "--out",
            str(tmp_path / "cmp"),
        ]
    )
    assert code == 0
    (entry,) = json.loads((tmp_path / "cmp" / "split_sensitivity.json").read_text("utf-8"))
    assert entry["dataset"] == "planted"
    assert set(entry["rankings"]) == {"seed7", "seed3"}


def test_report_on_empty_results(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "results.csv"
    path.write_text(",".join(CSV_HEADER) + "\n", encoding="utf-8")
    assert main(["report", "--results", str(path)]) == 2
    assert "no result rows" in capsys.readouterr().err


def test_grid_search_command(plan_file: Callable[..., Path], tmp_path: Path) -> None:
    plan = plan_file(
        models=[{"kind": "MLP"}],
        grid={
            "hidden_sizes": [8],
            "learning_rates": [0.01],
            "dropouts": [0.5],
            "l2_strengths": [5e-4, 1e-2],
        },
        search_budget={"num_splits": 1, "num_inits": 1},
    )
    out = tmp_path / "grid"
    assert main(["grid-search", "--config", str(plan), "--out", str(out)]) == 0
    best = json.loads((out / "MLP" / "best_config.json").read_text(encoding="utf-8"))
    assert best["kind"] == "MLP"
    assert best["evaluated"] == 2
    assert best["best"]["hidden_size"] == 8
