"""On-disk dataset formats.

Container directory (all integers little-endian)::

    meta.json         {"name", "N", "D", "C", "class_names", "feature_norm"}
    features.f32      row-major N x D IEEE-754 binary32
    labels.u32        N entries
    adj_indptr.u64    N + 1 CSR offsets
    adj_indices.u64   CSR column indices

Small-fixture text bundle::

    edges.txt         one "i j" pair per line ("#" comments and blank lines ignored)
    features.csv      N rows of D comma-separated reals
    labels.csv        N lines, each an integer class id or a class name
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .errors import ContainerError, ParseError
from .graph import Dataset, SparseAdjacency
from .preflight import read_meta, run_container_checks

__all__ = ["is_container", "load_dataset", "load_text_bundle", "save_dataset"]

logger = logging.getLogger(__name__)


def is_container(path: Path) -> bool:
    """Whether ``path`` looks like a binary container directory."""
    return (path / "meta.json").is_file()


def load_dataset(path: Path | str) -> Dataset:
    """Load a container directory or a text bundle without preprocessing it."""
    root = Path(path)
    if is_container(root):
        return _load_container(root)
    if (root / "edges.txt").is_file():
        return load_text_bundle(root)
    raise ContainerError(f"{root}: missing file meta.json (and no edges.txt bundle)")


def _load_container(root: Path) -> Dataset:
    run_container_checks(root)
    meta = read_meta(root)
    n, d = int(meta["N"]), int(meta["D"])
    features = np.fromfile(root / "features.f32", dtype="<f4").reshape(n, d)
    labels = np.fromfile(root / "labels.u32", dtype="<u4").astype(np.int64)
    indptr = np.fromfile(root / "adj_indptr.u64", dtype="<u8").astype(np.int64)
    indices = np.fromfile(root / "adj_indices.u64", dtype="<u8").astype(np.int64)
    adjacency = SparseAdjacency(n, indptr, indices)
    adjacency.validate()
    logger.debug("Loaded container %s: N=%s D=%s nnz=%s", root, n, d, adjacency.nnz)
    return Dataset(
        adjacency=adjacency,
        features=features,
        labels=labels,
        class_names=tuple(str(c) for c in meta["class_names"]),
        name=str(meta["name"]),
        feature_norm=bool(meta["feature_norm"]),
    )


def save_dataset(ds: Dataset, path: Path | str) -> Path:
    """Write ``ds`` as a container directory and return its path."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        meta = {
            "name": ds.name,
            "N": ds.num_nodes,
            "D": ds.num_features,
            "C": ds.num_classes,
            "class_names": list(ds.class_names),
            "feature_norm": ds.feature_norm,
        }
        (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        ds.features.astype("<f4").tofile(root / "features.f32")
        ds.labels.astype("<u4").tofile(root / "labels.u32")
        ds.adjacency.indptr.astype("<u8").tofile(root / "adj_indptr.u64")
        ds.adjacency.indices.astype("<u8").tofile(root / "adj_indices.u64")
    except OSError as e:
        raise ContainerError(f"Failed to write container {root}: {e}") from e
    return root


# --------------------------------------------------------------------------- #
# Text bundle
# --------------------------------------------------------------------------- #
def _read_features(path: Path) -> npt.NDArray[np.float32]:
    rows: list[list[float]] = []
    with path.open(newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as e:
                raise ParseError(path, f"non-numeric feature ({e})", lineno) from e
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(path, f"expected {len(rows[0])} columns, got {len(row)}", lineno)
    if not rows:
        raise ParseError(path, "no feature rows")
    return np.asarray(rows, dtype=np.float32)


def _read_labels(path: Path) -> tuple[npt.NDArray[np.int64], tuple[str, ...]]:
    tokens: list[str] = []
    with path.open(encoding="utf-8") as f:
        for line in f:
            token = line.strip()
            if token:
                tokens.append(token)
    if all(t.isdigit() for t in tokens):
        ids = np.asarray([int(t) for t in tokens], dtype=np.int64)
        num_classes = int(ids.max()) + 1 if len(ids) else 0
        return ids, tuple(str(c) for c in range(num_classes))
    names = tuple(sorted(set(tokens)))
    index = {name: i for i, name in enumerate(names)}
    return np.asarray([index[t] for t in tokens], dtype=np.int64), names


def _read_edges(path: Path, num_nodes: int) -> tuple[list[int], list[int]]:
    rows: list[int] = []
    cols: list[int] = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ParseError(path, f"expected 'i j', got {text!r}", lineno)
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError as e:
                raise ParseError(path, f"non-integer node id in {text!r}", lineno) from e
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise ParseError(path, f"node id out of range [0, {num_nodes})", lineno)
            rows.append(i)
            cols.append(j)
    return rows, cols


def load_text_bundle(root: Path) -> Dataset:
    """Load an ``edges.txt`` / ``features.csv`` / ``labels.csv`` bundle."""
    for name in ("edges.txt", "features.csv", "labels.csv"):
        if not (root / name).is_file():
            raise ContainerError(f"{root}: missing file {name}")
    features = _read_features(root / "features.csv")
    labels, class_names = _read_labels(root / "labels.csv")
    if len(labels) != len(features):
        raise ContainerError(
            f"{root}: length mismatch: {len(labels)} labels for {len(features)} feature rows"
        )
    rows, cols = _read_edges(root / "edges.txt", len(features))
    return Dataset(
        adjacency=SparseAdjacency.from_edges(len(features), rows, cols),
        features=features,
        labels=labels,
        class_names=class_names,
        name=root.name,
    )
