from __future__ import annotations

import numpy as np

from gnnbench.graph import Dataset, SparseAdjacency, add_self_loops


def planted_dataset(
    num_classes: int = 3,
    per_class: int = 60,
    num_features: int = 12,
    seed: int = 0,
    name: str = "planted",
    intra_degree: int = 3,
    noise_edges: int = 10,
) -> Dataset:
    """Planted-partition graph whose features and edges both follow the class."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    n = len(labels)
    features = rng.random((n, num_features)).astype(np.float32) * 0.5
    features[np.arange(n), labels % num_features] += 1.0
    rows, cols = [], []
    for i in range(n):
        same = np.flatnonzero(labels == labels[i])
        for j in rng.choice(same, size=intra_degree, replace=False):
            rows.append(i)
            cols.append(int(j))
        rows.append(i)
        cols.append((i + 1) % n)
    for _ in range(noise_edges):
        i, j = rng.integers(0, n, size=2)
        rows.append(int(i))
        cols.append(int(j))
    adj = SparseAdjacency.from_edges(n, rows + cols, cols + rows)
    return Dataset(
        adjacency=add_self_loops(adj),
        features=features,
        labels=labels,
        class_names=tuple(f"class{c}" for c in range(num_classes)),
        name=name,
    )


def tiny_dataset(seed: int = 1) -> Dataset:
    """Connected 12-node, 3-class graph for finite-difference checks."""
    return planted_dataset(
        num_classes=3, per_class=4, num_features=5, seed=seed, name="tiny", intra_degree=2
    )
