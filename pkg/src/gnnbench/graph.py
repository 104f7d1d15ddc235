"""Sparse graph and dataset types plus the preprocessing pipeline.

The pipeline order is fixed: symmetrize, drop small classes, keep the largest connected
component, add self-loops. Each stage is idempotent, so the whole pipeline is as well.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ContainerError, DataError, PreprocessError

__all__ = [
    "Dataset",
    "DatasetStats",
    "PreprocessResult",
    "SparseAdjacency",
    "StageRecord",
    "add_self_loops",
    "dataset_stats",
    "filter_small_classes",
    "largest_connected_component",
    "normalize_features",
    "preprocess",
    "symmetrize",
]

logger = logging.getLogger(__name__)

IntArray = npt.NDArray[np.int64]
FloatArray = npt.NDArray[np.float32]


def _readonly(values: npt.ArrayLike, dtype: npt.DTypeLike) -> npt.NDArray[np.generic]:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class SparseAdjacency:
    """Unweighted adjacency in canonical CSR layout (no stored values)."""

    num_nodes: int
    indptr: IntArray
    indices: IntArray

    def __post_init__(self) -> None:
        """Freeze the index arrays."""
        object.__setattr__(self, "indptr", _readonly(self.indptr, np.int64))
        object.__setattr__(self, "indices", _readonly(self.indices, np.int64))

    @classmethod
    def from_edges(
        cls, num_nodes: int, rows: npt.ArrayLike, cols: npt.ArrayLike
    ) -> SparseAdjacency:
        """Build a canonical adjacency from (row, col) pairs; duplicates collapse."""
        r = np.asarray(rows, dtype=np.int64)
        c = np.asarray(cols, dtype=np.int64)
        ones = np.ones(len(r), dtype=np.float64)
        mat = sp.csr_matrix((ones, (r, c)), shape=(num_nodes, num_nodes))
        return cls.from_scipy(mat)

    @classmethod
    def from_scipy(cls, mat: sp.spmatrix | sp.sparray) -> SparseAdjacency:
        """Binarize any scipy sparse matrix into canonical CSR."""
        csr = sp.csr_matrix(mat, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr.astype(np.int64), csr.indices.astype(np.int64))

    def to_scipy(self, dtype: npt.DTypeLike = np.float64) -> sp.csr_matrix:
        """Return a scipy CSR matrix with unit values."""
        data = np.ones(self.nnz, dtype=dtype)
        return sp.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.num_nodes, self.num_nodes)
        )

    @property
    def nnz(self) -> int:
        """Number of stored entries."""
        return int(len(self.indices))

    def row_ids(self) -> IntArray:
        """Row index of every stored entry, aligned with ``indices``."""
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(self.indptr))

    def degrees(self) -> IntArray:
        """Stored entries per row (self-loops included)."""
        return np.diff(self.indptr).astype(np.int64)

    def num_self_loops(self) -> int:
        """Number of stored diagonal entries."""
        return int(np.count_nonzero(self.row_ids() == self.indices))

    def num_undirected_edges(self) -> int:
        """Unordered pairs ``{i, j}``, ``i != j``, present in either direction."""
        rows, cols = self.row_ids(), self.indices
        off = rows != cols
        lo = np.minimum(rows[off], cols[off])
        hi = np.maximum(rows[off], cols[off])
        return int(len(np.unique(lo * self.num_nodes + hi)))

    def is_symmetric(self) -> bool:
        """Whether (i, j) present implies (j, i) present."""
        mat = self.to_scipy()
        return (mat != mat.T).nnz == 0

    def validate(self) -> None:
        """Check the canonical CSR invariants, raising on the first violation."""
        indptr, indices = self.indptr, self.indices
        if len(indptr) != self.num_nodes + 1:
            raise ContainerError(
                f"CSR indptr length {len(indptr)} does not match num_nodes + 1 = "
                f"{self.num_nodes + 1}"
            )
        if indptr[0] != 0:
            raise ContainerError(f"CSR indptr must start at 0, got {indptr[0]}")
        if indptr[-1] != len(indices):
            raise ContainerError(
                f"CSR length mismatch: indptr[last]={indptr[-1]} but len(indices)={len(indices)}"
            )
        if np.any(np.diff(indptr) < 0):
            raise ContainerError("CSR indptr is not nondecreasing")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.num_nodes):
            raise ContainerError(f"CSR column index out of range [0, {self.num_nodes})")
        steps = np.diff(indices)
        row_starts = np.zeros(len(indices), dtype=bool)
        row_starts[indptr[:-1][np.diff(indptr) > 0]] = True
        if np.any(steps[~row_starts[1:]] <= 0):
            raise ContainerError("CSR is not canonical: row indices not strictly increasing")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Attributed graph with one integer label per node."""

    adjacency: SparseAdjacency
    features: FloatArray
    labels: IntArray
    class_names: tuple[str, ...]
    name: str
    feature_norm: bool = False

    def __post_init__(self) -> None:
        """Freeze arrays and check shape/label invariants."""
        feats = _readonly(self.features, np.float32)
        labels = _readonly(self.labels, np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        n = self.adjacency.num_nodes
        if feats.ndim != 2 or feats.shape[0] != n:
            raise DataError(
                f"{self.name}: features have shape {feats.shape}, expected ({n}, D)"
            )
        if labels.shape != (n,):
            raise DataError(f"{self.name}: {labels.shape[0]} labels for {n} nodes")
        num_classes = len(self.class_names)
        if n and (labels.min() < 0 or labels.max() >= num_classes):
            raise DataError(f"{self.name}: label out of range [0, {num_classes})")
        if n and np.any(np.bincount(labels, minlength=num_classes) == 0):
            raise DataError(f"{self.name}: every class needs at least one node")

    @property
    def num_nodes(self) -> int:
        """N."""
        return self.adjacency.num_nodes

    @property
    def num_features(self) -> int:
        """D."""
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        """C."""
        return len(self.class_names)

    def class_counts(self) -> IntArray:
        """Nodes per class."""
        return np.bincount(self.labels, minlength=self.num_classes).astype(np.int64)

    def induced(self, nodes: IntArray) -> Dataset:
        """Restrict to ``nodes`` (kept in ascending original order).

        Classes left without nodes are dropped and the rest relabeled densely in their
        original order.
        """
        keep = np.sort(np.asarray(nodes, dtype=np.int64))
        sub = self.adjacency.to_scipy()[keep][:, keep]
        labels = self.labels[keep]
        present = np.flatnonzero(np.bincount(labels, minlength=self.num_classes))
        remap = np.full(self.num_classes, -1, dtype=np.int64)
        remap[present] = np.arange(len(present))
        return replace(
            self,
            adjacency=SparseAdjacency.from_scipy(sub),
            features=self.features[keep],
            labels=remap[labels],
            class_names=tuple(self.class_names[c] for c in present),
        )


@dataclass(frozen=True)
class DatasetStats:
    """Summary statistics of a preprocessed dataset."""

    classes: int
    features: int
    nodes: int
    edges: int
    label_rate: float
    edge_density: float
    # edges / (2 * nodes^2): the convention the published statistics table follows
    edge_density_table: float


@dataclass(frozen=True)
class StageRecord:
    """Node/class/edge counts after one preprocessing stage."""

    stage: str
    nodes: int
    classes: int
    edges: int


@dataclass(frozen=True)
class PreprocessResult:
    """Output of :func:`preprocess`."""

    dataset: Dataset
    provenance: list[StageRecord] = field(default_factory=list)


# --------------------------------------------------------------------------- #
# Stages
# --------------------------------------------------------------------------- #
def symmetrize(adj: SparseAdjacency) -> SparseAdjacency:
    """Union of the adjacency with its transpose."""
    mat = adj.to_scipy()
    return SparseAdjacency.from_scipy(mat + mat.T)


def add_self_loops(adj: SparseAdjacency) -> SparseAdjacency:
    """Ensure every diagonal entry is present."""
    mat = adj.to_scipy() + sp.identity(adj.num_nodes, format="csr")
    return SparseAdjacency.from_scipy(mat)


def largest_connected_component(ds: Dataset) -> Dataset:
    """Induced subgraph on the largest component.

    Ties go to the component whose smallest original node index is lowest.
    """
    n = ds.num_nodes
    if n == 0:
        raise PreprocessError(f"{ds.name}: cannot take the largest component of an empty graph")
    _, membership = connected_components(ds.adjacency.to_scipy(), directed=False)
    sizes = np.bincount(membership)
    first_node = np.full(len(sizes), n, dtype=np.int64)
    np.minimum.at(first_node, membership, np.arange(n, dtype=np.int64))
    best = min(range(len(sizes)), key=lambda c: (-int(sizes[c]), int(first_node[c])))
    if sizes[best] == n:
        return ds
    return ds.induced(np.flatnonzero(membership == best))


def filter_small_classes(ds: Dataset, min_count: int) -> Dataset:
    """Drop every node whose class has fewer than ``min_count`` members.

    Surviving classes are relabeled densely in their original order.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = ds.class_counts()
    kept = np.flatnonzero(counts >= min_count)
    if len(kept) == 0:
        raise PreprocessError(f"{ds.name}: no class has at least {min_count} nodes")
    if len(kept) == ds.num_classes:
        return ds
    return ds.induced(np.flatnonzero(np.isin(ds.labels, kept)))


def dataset_stats(ds: Dataset) -> DatasetStats:
    """Compute classes/features/nodes/edges, label rate and edge density."""
    nodes = ds.num_nodes
    edges = ds.adjacency.num_undirected_edges()
    return DatasetStats(
        classes=ds.num_classes,
        features=ds.num_features,
        nodes=nodes,
        edges=edges,
        label_rate=ds.num_classes * 20 / nodes,
        edge_density=edges / (0.5 * nodes**2),
        edge_density_table=edges / (2 * nodes**2),
    )


def normalize_features(ds: Dataset) -> Dataset:
    """Scale each feature row to unit L1 norm; all-zero rows stay zero."""
    feats = ds.features.astype(np.float64)
    sums = np.abs(feats).sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return replace(ds, features=(feats / sums).astype(np.float32))


def _record(stage: str, ds: Dataset) -> StageRecord:
    rec = StageRecord(
        stage=stage,
        nodes=ds.num_nodes,
        classes=ds.num_classes,
        edges=ds.adjacency.num_undirected_edges(),
    )
    logger.debug("%s: %s nodes, %s classes, %s edges", stage, rec.nodes, rec.classes, rec.edges)
    return rec


def preprocess(ds: Dataset, min_class_count: int = 50) -> PreprocessResult:
    """Run symmetrize, class filter, largest component and self-loops in that order."""
    provenance = [_record("raw", ds)]
    ds = replace(ds, adjacency=symmetrize(ds.adjacency))
    provenance.append(_record("symmetrize", ds))
    ds = filter_small_classes(ds, min_class_count)
    provenance.append(_record("filter_small_classes", ds))
    ds = largest_connected_component(ds)
    provenance.append(_record("largest_connected_component", ds))
    ds = replace(ds, adjacency=add_self_loops(ds.adjacency))
    provenance.append(_record("add_self_loops", ds))
    return PreprocessResult(dataset=ds, provenance=provenance)
