from __future__ import annotations

import json
from collections.abc import Callable, Generator
from pathlib import Path

import pytest

from gnnbench.graph import Dataset
from gnnbench.helpers import tmp_path_factory_safe
from gnnbench.storage import save_dataset

from .factories import planted_dataset, tiny_dataset

# TEST CONSTANTS
TEST_DIR_PREFIX = "gnnbench-test-"
FAST_TRAIN = {"max_epochs": 60, "patience": 10}


@pytest.fixture(scope="session")
def session_dir() -> Generator[Path, None, None]:
    with tmp_path_factory_safe(prefix=TEST_DIR_PREFIX) as path:
        yield path


@pytest.fixture
def planted() -> Dataset:
    return planted_dataset()


@pytest.fixture
def tiny() -> Dataset:
    return tiny_dataset()


@pytest.fixture
def make_bundle(tmp_path: Path) -> Callable[..., Path]:
    """Write a text bundle from edge, feature and label lines."""

    def _make(
        edges: str = "0 1\n1 2\n",
        features: str = "1,0\n0,1\n1,1\n",
        labels: str = "a\nb\na\n",
        name: str = "bundle",
    ) -> Path:
        root = tmp_path / name
        root.mkdir(parents=True, exist_ok=True)
        (root / "edges.txt").write_text(edges, encoding="utf-8")
        (root / "features.csv").write_text(features, encoding="utf-8")
        (root / "labels.csv").write_text(labels, encoding="utf-8")
        return root

    return _make


@pytest.fixture
def container(tmp_path: Path, planted: Dataset) -> Path:
    """Planted dataset saved as a binary container."""
    return save_dataset(planted, tmp_path / "planted")


@pytest.fixture
def plan_file(tmp_path: Path, container: Path) -> Callable[..., Path]:
    """Write a small benchmark plan over the planted container."""

    def _make(**extra: object) -> Path:
        doc: dict[str, object] = {
            "datasets": [str(container)],
            "models": [{"kind": "MLP"}, {"kind": "LabelProp"}],
            "num_splits": 2,
            "num_inits": 1,
            "experiment_seed": 7,
            "train_config": FAST_TRAIN,
        }
        doc.update(extra)
        path = tmp_path / "plan.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    return _make
