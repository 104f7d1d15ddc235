from __future__ import annotations

import json
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ContainerError, GnnBenchError

__all__ = ["CHECKS", "CONTAINER_FILES", "META_FIELDS", "read_meta", "run_container_checks"]

CONTAINER_FILES: dict[str, int] = {
    "features.f32": 4,
    "labels.u32": 4,
    "adj_indptr.u64": 8,
    "adj_indices.u64": 8,
}
META_FIELDS = ("name", "N", "D", "C", "class_names", "feature_norm")


# --------------------------------------------------------------------------- #
# Failure helper
# --------------------------------------------------------------------------- #
def _fail(root: Path, msg: str) -> None:
    raise ContainerError(f"{root}: {msg}")


def read_meta(root: Path) -> dict[str, Any]:
    """Parse ``meta.json`` of a container directory."""
    meta_path = root / "meta.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ContainerError(f"{root}: missing file meta.json") from e
    except json.JSONDecodeError as e:
        raise ContainerError(f"{meta_path}:{e.lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(meta, dict):
        raise ContainerError(f"{meta_path}: expected a JSON object")
    return meta


# --------------------------------------------------------------------------- #
# Individual checks
# --------------------------------------------------------------------------- #
def _check_is_directory(root: Path) -> None:
    if not root.is_dir():
        _fail(root, "not a container directory")


def _check_meta_fields(root: Path) -> None:
    meta = read_meta(root)
    missing = [key for key in META_FIELDS if key not in meta]
    if missing:
        _fail(root, f"meta.json lacks fields {missing}")
    if len(meta["class_names"]) != meta["C"]:
        _fail(root, f"meta.json lists {len(meta['class_names'])} class names but C={meta['C']}")


def _check_files_present(root: Path) -> None:
    for name in CONTAINER_FILES:
        if not (root / name).is_file():
            _fail(root, f"missing file {name}")


def _check_byte_sizes(root: Path) -> None:
    meta = read_meta(root)
    n, d = int(meta["N"]), int(meta["D"])
    expected = {
        "features.f32": n * d * 4,
        "labels.u32": n * 4,
        "adj_indptr.u64": (n + 1) * 8,
    }
    for name, size in expected.items():
        actual = (root / name).stat().st_size
        if actual != size:
            _fail(root, f"length mismatch: {name} has {actual} bytes, expected {size}")
    if (root / "adj_indices.u64").stat().st_size % 8:
        _fail(root, "length mismatch: adj_indices.u64 is not a whole number of entries")


def _check_csr_terminal(root: Path) -> None:
    indptr = np.fromfile(root / "adj_indptr.u64", dtype="<u8")
    nnz = (root / "adj_indices.u64").stat().st_size // 8
    if len(indptr) and int(indptr[-1]) != nnz:
        _fail(root, f"CSR length mismatch: indptr[last]={int(indptr[-1])} but {nnz} indices")


def _check_label_range(root: Path) -> None:
    num_classes = int(read_meta(root)["C"])
    labels = np.fromfile(root / "labels.u32", dtype="<u4")
    if len(labels) and int(labels.max()) >= num_classes:
        _fail(root, f"label out of range: found {int(labels.max())} with C={num_classes}")


# --------------------------------------------------------------------------- #
# Public API
# --------------------------------------------------------------------------- #
CHECKS: list[Callable[[Path], None]] = [
    _check_is_directory,
    _check_meta_fields,
    _check_files_present,
    _check_byte_sizes,
    _check_csr_terminal,
    _check_label_range,
]


def run_container_checks(
    root: Path, custom_checks: list[Callable[[Path], None]] | None = None
) -> None:
    """Validate a container directory before any array is decoded."""
    all_checks = CHECKS + (custom_checks or [])
    for check in all_checks:
        try:
            check(root)
        except GnnBenchError:
            raise
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ContainerError(f"{root}: {e}") from e
