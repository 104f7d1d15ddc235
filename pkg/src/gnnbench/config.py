"""JSON experiment plans and dotted ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
import logging
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

from .errors import UsageError
from .models import ModelSpec
from .protocol import ExperimentPlan, GridSpace
from .trainer import TrainConfig

__all__ = ["apply_overrides", "load_plan", "parse_override", "plan_from_dict", "plan_to_dict"]

logger = logging.getLogger(__name__)

PLAN_KEYS = frozenset(
    {
        "datasets",
        "models",
        "num_splits",
        "num_inits",
        "experiment_seed",
        "train_config",
        "normalize_features",
        "fixed_split",
        "split_mode",
        "record_timing",
        "grid",
        "search_budget",
    }
)


def parse_override(item: str) -> tuple[list[str], Any]:
    """Split ``a.b.c=value`` into its key path and a JSON-decoded value.

    Values that are not valid JSON are kept as plain strings.
    """
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise UsageError(f"Override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(doc: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Return a copy of ``doc`` with every override applied in order.

    List elements are addressed by index (``models.0.hidden_size=32``).
    """
    result: dict[str, Any] = json.loads(json.dumps(doc))
    for item in overrides:
        path, value = parse_override(item)
        if path[0] not in PLAN_KEYS:
            raise UsageError(f"Unknown config key {path[0]!r} in override {item!r}")
        node: Any = result
        for i, part in enumerate(path[:-1]):
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                except (ValueError, IndexError) as e:
                    raise UsageError(f"Bad list index {part!r} in override {item!r}") from e
            elif isinstance(node, dict):
                if not isinstance(node.get(part), (dict, list)):
                    node[part] = {}
                node = node[part]
            else:
                raise UsageError(f"Cannot descend into {'.'.join(path[: i + 1])!r}")
        last = path[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = value
            except (ValueError, IndexError) as e:
                raise UsageError(f"Bad list index {last!r} in override {item!r}") from e
        else:
            node[last] = value
        logger.debug("Override %s = %r", ".".join(path), value)
    return result


def _build(cls: type[Any], data: Any, label: str) -> Any:
    if not isinstance(data, Mapping):
        raise UsageError(f"{label} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"Unknown {label} keys {unknown}")
    try:
        return cls(**data)
    except TypeError as e:
        raise UsageError(f"Invalid {label}: {e}") from e


def _model(entry: Any) -> ModelSpec:
    if isinstance(entry, str):
        return ModelSpec.from_dict({"kind": entry})
    if not isinstance(entry, Mapping):
        raise UsageError(f"model entries must be objects or kind names, got {entry!r}")
    return ModelSpec.from_dict(entry)


def plan_from_dict(doc: Mapping[str, Any], base_dir: Path | None = None) -> ExperimentPlan:
    """Build an :class:`ExperimentPlan`; relative paths resolve against ``base_dir``."""
    unknown = sorted(set(doc) - PLAN_KEYS)
    if unknown:
        raise UsageError(f"Unknown config keys {unknown}")
    for key in ("datasets", "models"):
        if not isinstance(doc.get(key), list) or not doc[key]:
            raise UsageError(f"config needs a non-empty list {key!r}")

    def resolve(p: str) -> str:
        path = Path(p)
        return str(path if path.is_absolute() or base_dir is None else base_dir / path)

    kwargs: dict[str, Any] = {
        "datasets": tuple(resolve(str(p)) for p in doc["datasets"]),
        "models": tuple(_model(m) for m in doc["models"]),
    }
    for key in ("num_splits", "num_inits", "experiment_seed"):
        if key in doc:
            if not isinstance(doc[key], int) or isinstance(doc[key], bool):
                raise UsageError(f"{key} must be an integer, got {doc[key]!r}")
            kwargs[key] = doc[key]
    for key in ("normalize_features", "record_timing"):
        if key in doc and doc[key] is not None:
            if not isinstance(doc[key], bool):
                raise UsageError(f"{key} must be true or false, got {doc[key]!r}")
            kwargs[key] = doc[key]
    if doc.get("fixed_split") is not None:
        kwargs["fixed_split"] = resolve(str(doc["fixed_split"]))
    if "split_mode" in doc:
        kwargs["split_mode"] = doc["split_mode"]
    if "train_config" in doc:
        kwargs["train_config"] = _build(TrainConfig, doc["train_config"], "train_config")
    if doc.get("grid") is not None:
        kwargs["grid"] = _build(GridSpace, doc["grid"], "grid")
    if "search_budget" in doc:
        budget = doc["search_budget"]
        if not isinstance(budget, Mapping) or set(budget) - {"num_splits", "num_inits"}:
            raise UsageError("search_budget takes only num_splits and num_inits")
        kwargs["search_splits"] = budget.get("num_splits", 5)
        kwargs["search_inits"] = budget.get("num_inits", 2)
    return ExperimentPlan(**kwargs)


def plan_to_dict(plan: ExperimentPlan) -> dict[str, Any]:
    """JSON document that :func:`plan_from_dict` turns back into ``plan``."""
    return {
        "datasets": list(plan.datasets),
        "models": [m.to_dict() for m in plan.models],
        "num_splits": plan.num_splits,
        "num_inits": plan.num_inits,
        "experiment_seed": plan.experiment_seed,
        "train_config": dataclasses.asdict(plan.train_config),
        "normalize_features": plan.normalize_features,
        "fixed_split": plan.fixed_split,
        "split_mode": str(plan.split_mode),
        "record_timing": plan.record_timing,
        "grid": plan.grid.to_dict() if plan.grid is not None else None,
        "search_budget": {"num_splits": plan.search_splits, "num_inits": plan.search_inits},
    }


def load_plan(path: Path | str, overrides: Iterable[str] = ()) -> ExperimentPlan:
    """Read a plan file and apply CLI overrides."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise UsageError(f"Cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return plan_from_dict(apply_overrides(doc, overrides), base_dir=path.parent)
