"""Evaluation protocol: splits, the benchmark loop, grid search and aggregate metrics."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import time
from collections import defaultdict
from collections.abc import Iterable, Iterator, Mapping, Sequence
from concurrent.futures import Future, ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.stats import rankdata

from .errors import DataError, GnnBenchError, ParseError, SplitError, UsageError
from .graph import Dataset, normalize_features
from .models import TRAINABLE_KINDS, ModelKind, ModelSpec, param_count
from .propagation import label_propagate
from .rng import ALGORITHM, RngStream
from .storage import load_dataset
from .trainer import TrainConfig, train

__all__ = [
    "CSV_HEADER",
    "SIZED_TEST",
    "SIZED_VAL",
    "TRAIN_PER_CLASS",
    "VAL_PER_CLASS",
    "AggregateStat",
    "ExperimentPlan",
    "GridPoint",
    "GridSearchResult",
    "GridSpace",
    "RelativeAccuracy",
    "ResultTable",
    "Split",
    "SplitMode",
    "TrialFailure",
    "TrialRecord",
    "aggregate",
    "average_rank",
    "generate_split",
    "grid_search",
    "load_fixed_split",
    "read_results_csv",
    "relative_accuracy",
    "run_experiment",
    "write_results",
]

logger = logging.getLogger(__name__)

TRAIN_PER_CLASS = 20
VAL_PER_CLASS = 30
SIZED_VAL = 500
SIZED_TEST = 1000

CSV_HEADER = (
    "dataset",
    "model",
    "split_id",
    "init_id",
    "test_accuracy",
    "val_accuracy",
    "best_epoch",
    "wall_seconds",
    "diverged",
    "deterministic",
)

IntArray = npt.NDArray[np.int64]


# --------------------------------------------------------------------------- #
# Splits
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class Split:
    """Disjoint sorted train/validation/test node sets.

    ``seed_provenance`` is ``(experiment_seed, split_id)`` for generated splits and
    ``None`` for splits read from a file.
    """

    train: IntArray
    val: IntArray
    test: IntArray
    split_id: int = 0
    seed_provenance: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        """Sort the index sets and reject overlaps."""
        for name in ("train", "val", "test"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.int64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for (a_name, a), (b_name, b) in itertools.combinations(
            (("train", self.train), ("val", self.val), ("test", self.test)), 2
        ):
            common = np.intersect1d(a, b)
            if len(common):
                raise SplitError(
                    f"split {self.split_id}: {a_name} and {b_name} overlap at nodes "
                    f"{common[:5].tolist()}"
                )
        for name, arr in (("train", self.train), ("val", self.val), ("test", self.test)):
            if len(np.unique(arr)) != len(arr):
                raise SplitError(f"split {self.split_id}: duplicate indices in {name}")

    def check_range(self, num_nodes: int) -> None:
        """Raise :class:`SplitError` if an index falls outside ``[0, num_nodes)``."""
        for name, arr in (("train", self.train), ("val", self.val), ("test", self.test)):
            if len(arr) and (arr[0] < 0 or arr[-1] >= num_nodes):
                bad = arr[(arr < 0) | (arr >= num_nodes)]
                raise SplitError(
                    f"split {self.split_id}: {name} index {int(bad[0])} out of range "
                    f"[0, {num_nodes})"
                )


class SplitMode(StrEnum):
    """How random splits are drawn."""

    PER_CLASS = "per_class"
    SIZED = "sized"


def generate_split(
    ds: Dataset,
    experiment_seed: int,
    split_id: int,
    mode: SplitMode | str = SplitMode.PER_CLASS,
) -> Split:
    """Draw a random split from the ``(experiment_seed, split_id)`` stream.

    ``per_class`` takes 20 training and 30 validation nodes per class and leaves every
    other node for test. ``sized`` takes the same 20 training nodes per class, then 500
    validation and 1000 test nodes uniformly from the rest; remaining nodes are unused.

    Raises:
        SplitError: a class, or the pool left after training, is too small.
    """
    mode = SplitMode(mode)
    counts = ds.class_counts()
    need = TRAIN_PER_CLASS + VAL_PER_CLASS if mode is SplitMode.PER_CLASS else TRAIN_PER_CLASS
    small = [f"{ds.class_names[c]} ({counts[c]})" for c in np.flatnonzero(counts < need)]
    if small:
        raise SplitError(
            f"{ds.name}: classes with fewer than {need} nodes cannot be split: {small}"
        )
    if mode is SplitMode.SIZED:
        pool = ds.num_nodes - TRAIN_PER_CLASS * ds.num_classes
        if pool < SIZED_VAL + SIZED_TEST:
            raise SplitError(
                f"{ds.name}: {pool} nodes remain after training, a sized split needs "
                f"{SIZED_VAL + SIZED_TEST}"
            )
    rng = RngStream.derive(experiment_seed, "split", split_id)
    train: list[IntArray] = []
    val: list[IntArray] = []
    for c in range(ds.num_classes):
        nodes = rng.permutation(np.flatnonzero(ds.labels == c).astype(np.int64))
        train.append(nodes[:TRAIN_PER_CLASS])
        val.append(nodes[TRAIN_PER_CLASS:need])
    train_arr = np.concatenate(train)
    if mode is SplitMode.SIZED:
        rest = rng.permutation(np.setdiff1d(np.arange(ds.num_nodes, dtype=np.int64), train_arr))
        val_arr, test = rest[:SIZED_VAL], rest[SIZED_VAL : SIZED_VAL + SIZED_TEST]
    else:
        val_arr = np.concatenate(val)
        test = np.setdiff1d(np.arange(ds.num_nodes), np.concatenate([train_arr, val_arr]))
    return Split(train_arr, val_arr, test, split_id, (experiment_seed, split_id))


def load_fixed_split(path: Path | str, num_nodes: int | None = None) -> Split:
    """Read a fixed split.

    ``.json`` files hold ``{"train": [...], "val": [...], "test": [...]}``. Any other file
    is text with one line per set: the set name followed by whitespace-separated indices.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"Cannot read split file {path}: {e}") from e
    sets: dict[str, list[int]] = {}
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
            sets = {key: [int(i) for i in doc[key]] for key in ("train", "val", "test")}
        except json.JSONDecodeError as e:
            raise ParseError(path, e.msg, e.lineno) from e
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(path, f"expected integer lists train/val/test ({e})") from e
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            key = fields[0].rstrip(":")
            if key not in ("train", "val", "test"):
                raise ParseError(path, f"unknown set {key!r}", lineno)
            try:
                sets.setdefault(key, []).extend(int(tok) for tok in fields[1:])
            except ValueError as e:
                raise ParseError(path, f"non-integer index ({e})", lineno) from e
        missing = [k for k in ("train", "val", "test") if k not in sets]
        if missing:
            raise ParseError(path, f"missing sets {missing}")
    split = Split(
        np.asarray(sets["train"], dtype=np.int64),
        np.asarray(sets["val"], dtype=np.int64),
        np.asarray(sets["test"], dtype=np.int64),
    )
    if num_nodes is not None:
        split.check_range(num_nodes)
    return split


# --------------------------------------------------------------------------- #
# Plans and results
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class GridSpace:
    """Hyperparameter grid plus the trainable-weight budget filter.

    A configuration is feasible when its weight count at ``reference_dims``
    (features, classes) stays within ``param_cap * (1 + slack)``. With
    ``check_all_datasets`` it must also fit at every tuning dataset's dimensions.
    """

    hidden_sizes: tuple[int, ...] = (8, 16, 32, 64)
    learning_rates: tuple[float, ...] = (0.001, 0.003, 0.005, 0.008, 0.01)
    dropouts: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    l2_strengths: tuple[float, ...] = (1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1)
    attention_dropouts: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    param_cap: int = 92_231
    slack: float = 0.05
    reference_dims: tuple[int, int] = (1433, 7)
    check_all_datasets: bool = False

    def __post_init__(self) -> None:
        """Coerce sequences to tuples and check the budget settings."""
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                object.__setattr__(self, f.name, tuple(value))
        if self.param_cap < 1 or self.slack < 0:
            raise UsageError("param_cap must be >= 1 and slack >= 0")
        axes = (self.hidden_sizes, self.learning_rates, self.dropouts, self.l2_strengths)
        if any(len(axis) == 0 for axis in axes):
            raise UsageError("every grid axis needs at least one value")

    @property
    def budget(self) -> float:
        """Largest admissible weight count."""
        return self.param_cap * (1 + self.slack)

    def cardinality(self, kind: ModelKind) -> int:
        """Number of grid points for ``kind`` before the budget filter."""
        n = (
            len(self.hidden_sizes)
            * len(self.learning_rates)
            * len(self.dropouts)
            * len(self.l2_strengths)
        )
        return n * len(self.attention_dropouts) if kind is ModelKind.GAT else n

    def points(self, kind: ModelKind) -> Iterator[ModelSpec]:
        """Every grid configuration, built on the tuned defaults of ``kind``."""
        base = ModelSpec.from_dict({"kind": kind})
        att = self.attention_dropouts if kind is ModelKind.GAT else (base.attention_dropout,)
        for hidden, lr, p, l2, a in itertools.product(
            self.hidden_sizes, self.learning_rates, self.dropouts, self.l2_strengths, att
        ):
            try:
                yield dataclasses.replace(
                    base,
                    hidden_size=hidden,
                    learning_rate=lr,
                    feature_dropout=p,
                    l2_strength=l2,
                    attention_dropout=a,
                )
            except UsageError as e:
                logger.debug("Skipping invalid grid point: %s", e)

    def within_budget(self, spec: ModelSpec, dims: Iterable[tuple[int, int]] = ()) -> bool:
        """Whether ``spec`` fits the budget at the reference (and given) dimensions."""
        all_dims = [self.reference_dims]
        if self.check_all_datasets:
            all_dims.extend(dims)
        return all(param_count(spec, d, c) <= self.budget for d, c in all_dims)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready representation."""
        data = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}


@dataclass(frozen=True)
class ExperimentPlan:
    """What to run: datasets x models x splits x initializations.

    ``normalize_features`` overrides each container's own flag when not ``None``.
    ``fixed_split`` replaces random splits by the split in that file (``num_splits``
    must then be 1); otherwise ``split_mode`` picks how random splits are drawn.
    ``search_splits``/``search_inits`` set the grid-search budget.
    """

    datasets: tuple[str, ...]
    models: tuple[ModelSpec, ...]
    num_splits: int = 100
    num_inits: int = 20
    experiment_seed: int = 0
    train_config: TrainConfig = field(default_factory=TrainConfig)
    normalize_features: bool | None = None
    fixed_split: str | None = None
    split_mode: SplitMode = SplitMode.PER_CLASS
    record_timing: bool = False
    grid: GridSpace | None = None
    search_splits: int = 5
    search_inits: int = 2

    def __post_init__(self) -> None:
        """Validate counts and model uniqueness."""
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "models", tuple(self.models))
        try:
            object.__setattr__(self, "split_mode", SplitMode(self.split_mode))
        except ValueError:
            modes = [str(m) for m in SplitMode]
            raise UsageError(
                f"split_mode must be one of {modes}, got {self.split_mode!r}"
            ) from None
        if self.num_splits < 1 or self.num_inits < 1:
            raise UsageError("num_splits and num_inits must be >= 1")
        if self.search_splits < 1 or self.search_inits < 1:
            raise UsageError("search_splits and search_inits must be >= 1")
        if not 0 <= self.experiment_seed < 2**64:
            raise UsageError(f"experiment_seed must fit in 64 bits, got {self.experiment_seed}")
        if self.fixed_split is not None and self.num_splits != 1:
            raise UsageError("a fixed split plan must use num_splits=1")
        kinds = [m.kind for m in self.models]
        dupes = sorted({str(k) for k in kinds if kinds.count(k) > 1})
        if dupes:
            raise UsageError(f"each model kind may appear once per plan, repeated: {dupes}")


@dataclass(frozen=True)
class TrialRecord:
    """One row of ``results.csv``."""

    dataset: str
    model: str
    split_id: int
    init_id: int
    test_accuracy: float
    val_accuracy: float
    best_epoch: int
    wall_seconds: float
    diverged: bool
    deterministic: bool = False

    @property
    def key(self) -> tuple[str, str, int, int]:
        """Canonical sort key."""
        return (self.dataset, self.model, self.split_id, self.init_id)

    def to_row(self) -> list[str]:
        """CSV fields in header order; floats use their shortest exact repr."""
        return [
            self.dataset,
            self.model,
            str(self.split_id),
            str(self.init_id),
            repr(float(self.test_accuracy)),
            repr(float(self.val_accuracy)),
            str(self.best_epoch),
            repr(float(self.wall_seconds)),
            "true" if self.diverged else "false",
            "true" if self.deterministic else "false",
        ]


@dataclass(frozen=True)
class TrialFailure:
    """A trial that raised instead of producing a record."""

    dataset: str
    model: str
    split_id: int
    init_id: int
    error: str


@dataclass
class ResultTable:
    """All trial records of one experiment, kept in canonical order."""

    records: list[TrialRecord] = field(default_factory=list)
    failures: list[TrialFailure] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Sort records and failures canonically."""
        self.records.sort(key=lambda r: r.key)
        self.failures.sort(key=lambda f: (f.dataset, f.model, f.split_id, f.init_id))

    def __len__(self) -> int:
        """Number of records."""
        return len(self.records)

    @property
    def num_succeeded(self) -> int:
        """Records that finished without diverging."""
        return sum(not r.diverged for r in self.records)

    def datasets(self) -> list[str]:
        """Dataset names in first-seen canonical order."""
        return list(dict.fromkeys(r.dataset for r in self.records))

    def models(self) -> list[str]:
        """Model names in first-seen canonical order."""
        return list(dict.fromkeys(r.model for r in self.records))

    def accuracies(self, dataset: str, model: str) -> list[float]:
        """Test accuracies of one (dataset, model) cell."""
        return [r.test_accuracy for r in self.records if (r.dataset, r.model) == (dataset, model)]


# --------------------------------------------------------------------------- #
# Serialization
# --------------------------------------------------------------------------- #
def _parse_bool(value: str) -> bool:
    if value not in ("true", "false"):
        raise ValueError(f"expected true/false, got {value!r}")
    return value == "true"


def write_results(table: ResultTable, out_dir: Path | str) -> tuple[Path, Path]:
    """Write ``results.csv`` and its JSON mirror ``results.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "results.csv", out / "results.json"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(r.to_row() for r in table.records)
    doc = {
        "metadata": table.metadata,
        "records": [dataclasses.asdict(r) for r in table.records],
        "failures": [dataclasses.asdict(f) for f in table.failures],
    }
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def read_results_csv(path: Path | str) -> ResultTable:
    """Parse a ``results.csv`` written by :func:`write_results`.

    Raises:
        DataError: the file is missing, malformed, or has no data rows.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"results file not found: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ParseError(path, f"expected header {','.join(CSV_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(CSV_HEADER):
                    raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(row)}")
                records.append(
                    TrialRecord(
                        dataset=row[0],
                        model=row[1],
                        split_id=int(row[2]),
                        init_id=int(row[3]),
                        test_accuracy=float(row[4]),
                        val_accuracy=float(row[5]),
                        best_epoch=int(row[6]),
                        wall_seconds=float(row[7]),
                        diverged=_parse_bool(row[8]),
                        deterministic=_parse_bool(row[9]),
                    )
                )
            except ValueError as e:
                raise ParseError(path, str(e), lineno) from e
    if not records:
        raise DataError(f"{path}: no result rows")
    metadata: dict[str, Any] = {}
    mirror = path.with_suffix(".json")
    if mirror.is_file():
        try:
            metadata = json.loads(mirror.read_text(encoding="utf-8")).get("metadata", {})
        except json.JSONDecodeError:
            logger.warning("Ignoring unreadable metadata in %s", mirror)
    return ResultTable(records=records, metadata=metadata)


# --------------------------------------------------------------------------- #
# Trial execution
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class _Task:
    dataset_index: int
    spec: ModelSpec
    split_id: int
    init_ids: tuple[int, ...]
    experiment_seed: int
    train_config: TrainConfig
    fixed_split: Split | None = None
    tag: int = 0
    split_mode: SplitMode = SplitMode.PER_CLASS


# Datasets visible to trials in this process (set inline or by the pool initializer).
_WORKER_DATASETS: list[Dataset] = []


def _init_worker(datasets: list[Dataset]) -> None:
    global _WORKER_DATASETS
    _WORKER_DATASETS = datasets


def _accuracy(preds: IntArray, labels: IntArray, mask: IntArray) -> float:
    return float(np.mean(preds[mask] == labels[mask])) if len(mask) else 0.0


def _run_task(task: _Task) -> list[TrialRecord]:
    ds = _WORKER_DATASETS[task.dataset_index]
    split = task.fixed_split or generate_split(
        ds, task.experiment_seed, task.split_id, task.split_mode
    )
    spec, model = task.spec, str(task.spec.kind)
    if not spec.trainable:
        assert spec.propagation is not None
        start = time.perf_counter()
        preds = label_propagate(ds, split, spec.propagation)
        elapsed = time.perf_counter() - start
        test_acc = _accuracy(preds, ds.labels, split.test)
        val_acc = _accuracy(preds, ds.labels, split.val)
        return [
            TrialRecord(
                ds.name, model, task.split_id, i, test_acc, val_acc, 0, elapsed, False, True
            )
            for i in task.init_ids
        ]
    records = []
    for init_id in task.init_ids:
        rng = RngStream.derive(task.experiment_seed, ds.name, model, task.split_id, init_id)
        outcome = train(spec, ds, split, task.train_config, rng)
        records.append(
            TrialRecord(
                ds.name,
                model,
                task.split_id,
                init_id,
                outcome.test_accuracy,
                outcome.val_accuracy,
                outcome.best_epoch,
                outcome.wall_seconds,
                outcome.diverged,
            )
        )
    return records


@dataclass
class _Outcomes:
    done: list[tuple[_Task, list[TrialRecord]]] = field(default_factory=list)
    failed: list[tuple[_Task, TrialFailure]] = field(default_factory=list)

    @property
    def records(self) -> list[TrialRecord]:
        return [rec for _, recs in self.done for rec in recs]

    @property
    def failures(self) -> list[TrialFailure]:
        return [f for _, f in self.failed]


def _execute(tasks: Sequence[_Task], datasets: list[Dataset], workers: int) -> _Outcomes:
    """Run ``tasks`` inline (``workers == 1``) or on a process pool.

    Output does not depend on scheduling: every trial owns its random stream and the
    records are sorted afterwards.
    """
    out = _Outcomes()
    total = sum(len(t.init_ids) for t in tasks)
    done = 0

    def collect(task: _Task, result: list[TrialRecord] | Exception) -> None:
        nonlocal done
        ds_name = datasets[task.dataset_index].name
        if isinstance(result, Exception):
            done += len(task.init_ids)
            reason = (
                str(result)
                if isinstance(result, GnnBenchError)
                else f"{type(result).__name__}: {result}"
            )
            logger.error(
                "[%s/%s] %s %s split %s failed: %s",
                done,
                total,
                ds_name,
                task.spec.kind,
                task.split_id,
                reason,
            )
            for init_id in task.init_ids:
                failure = TrialFailure(
                    ds_name, str(task.spec.kind), task.split_id, init_id, reason
                )
                out.failed.append((task, failure))
            return
        out.done.append((task, result))
        for rec in result:
            done += 1
            logger.info(
                "[%s/%s] %s %s split %s init %s: test %.4f%s",
                done,
                total,
                rec.dataset,
                rec.model,
                rec.split_id,
                rec.init_id,
                rec.test_accuracy,
                " (diverged)" if rec.diverged else "",
            )

    if workers <= 1:
        _init_worker(datasets)
        for task in tasks:
            try:
                collect(task, _run_task(task))
            except Exception as e:
                collect(task, e)
        return out

    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_worker, initargs=(datasets,)
    ) as pool:
        futures: dict[Future[list[TrialRecord]], _Task] = {
            pool.submit(_run_task, task): task for task in tasks
        }
        for fut in as_completed(futures):
            try:
                collect(futures[fut], fut.result())
            except Exception as e:
                collect(futures[fut], e)
    return out


def _tasks_for(
    dataset_index: int,
    spec: ModelSpec,
    num_splits: int,
    num_inits: int,
    seed: int,
    cfg: TrainConfig,
    fixed_split: Split | None,
    tag: int = 0,
    mode: SplitMode = SplitMode.PER_CLASS,
) -> Iterator[_Task]:
    inits = tuple(range(num_inits))
    for split_id in range(num_splits):
        if spec.trainable:
            for init_id in inits:
                yield _Task(
                    dataset_index, spec, split_id, (init_id,), seed, cfg, fixed_split, tag, mode
                )
        else:
            # deterministic: one run per split, replicated over inits
            yield _Task(dataset_index, spec, split_id, inits, seed, cfg, fixed_split, tag, mode)


def prepare_datasets(plan: ExperimentPlan) -> list[Dataset]:
    """Load every plan dataset and apply the feature normalization in force."""
    loaded = []
    for path in plan.datasets:
        ds = load_dataset(path)
        apply = ds.feature_norm if plan.normalize_features is None else plan.normalize_features
        if apply:
            ds = normalize_features(ds)
        loaded.append(dataclasses.replace(ds, feature_norm=apply))
    names = [ds.name for ds in loaded]
    if len(set(names)) != len(names):
        raise UsageError(f"dataset names must be unique within a plan, got {names}")
    return loaded


def _metadata(plan: ExperimentPlan, datasets: Sequence[Dataset]) -> dict[str, Any]:
    from .config import plan_to_dict

    return {
        "plan": plan_to_dict(plan),
        "feature_normalization": {ds.name: ds.feature_norm for ds in datasets},
        "split_mode": "fixed" if plan.fixed_split is not None else str(plan.split_mode),
        "quantile_convention": "linear interpolation",
        "std_convention": "population (ddof=0)",
        "l2_scope": {str(m.kind): m.effective_l2_scope for m in plan.models if m.trainable},
        "monet_parameterization": (
            "pseudo-coordinates (deg(i)^-1/2, deg(j)^-1/2) with self-loops; "
            "diagonal Gaussian kernels without degree scaling; kernel aggregations summed "
            "before one shared output map"
        ),
        "label_propagation": {
            str(m.kind): m.to_dict()["propagation"] for m in plan.models if not m.trainable
        },
        "rng": ALGORITHM,
        "timing_recorded": plan.record_timing,
    }


def run_experiment(
    plan: ExperimentPlan, workers: int = 1, datasets: list[Dataset] | None = None
) -> ResultTable:
    """Run every (dataset, model, split, init) trial of ``plan``.

    Failing trials are recorded in :attr:`ResultTable.failures` and the run continues.
    ``wall_seconds`` is written as 0.0 unless ``plan.record_timing`` is set, so repeated
    runs produce identical tables.
    """
    if workers < 1:
        raise UsageError(f"workers must be >= 1, got {workers}")
    datasets = datasets if datasets is not None else prepare_datasets(plan)
    fixed = None
    if plan.fixed_split is not None:
        fixed = load_fixed_split(plan.fixed_split)
        for ds in datasets:
            fixed.check_range(ds.num_nodes)
    tasks = [
        task
        for i in range(len(datasets))
        for spec in plan.models
        for task in _tasks_for(
            i,
            spec,
            plan.num_splits,
            plan.num_inits,
            plan.experiment_seed,
            plan.train_config,
            fixed,
            mode=plan.split_mode,
        )
    ]
    logger.info(
        "Running %s trials on %s worker(s)", sum(len(t.init_ids) for t in tasks), workers
    )
    outcomes = _execute(tasks, datasets, workers)
    records = outcomes.records
    if not plan.record_timing:
        records = [dataclasses.replace(r, wall_seconds=0.0) for r in records]
    return ResultTable(
        records=records, failures=outcomes.failures, metadata=_metadata(plan, datasets)
    )


# --------------------------------------------------------------------------- #
# Grid search
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class GridPoint:
    """Mean validation accuracy of one configuration."""

    spec: ModelSpec
    score: float
    per_dataset: dict[str, float]

    @property
    def tie_key(self) -> tuple[float, ...]:
        """Sort key: best score, then smaller hidden, larger L2, smaller lr, dropouts."""
        s = self.spec
        return (
            -self.score,
            s.hidden_size,
            -s.l2_strength,
            s.learning_rate,
            s.feature_dropout,
            s.attention_dropout,
        )


@dataclass
class GridSearchResult:
    """Ranked grid points, best first."""

    kind: ModelKind
    ranking: list[GridPoint]
    skipped: int

    @property
    def best(self) -> ModelSpec:
        """Winning configuration."""
        return self.ranking[0].spec

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready representation (``best_config.json``)."""
        return {
            "kind": str(self.kind),
            "best": self.best.to_dict(),
            "score": self.ranking[0].score,
            "evaluated": len(self.ranking),
            "skipped_over_budget": self.skipped,
            "ranking": [
                {"config": p.spec.to_dict(), "score": p.score, "per_dataset": p.per_dataset}
                for p in self.ranking
            ],
        }


def grid_search(
    datasets: Sequence[Dataset],
    kind: ModelKind | str,
    grid: GridSpace,
    num_splits: int,
    num_inits: int,
    experiment_seed: int = 0,
    train_config: TrainConfig | None = None,
    workers: int = 1,
    split_mode: SplitMode | str = SplitMode.PER_CLASS,
) -> GridSearchResult:
    """Pick the configuration with the best validation accuracy averaged over ``datasets``.

    Each dataset contributes the mean over its ``num_splits x num_inits`` trials (failed
    trials count as zero); the score is the mean of the per-dataset means.
    Configurations over the weight budget are skipped.

    Raises:
        UsageError: ``kind`` is not trainable or no configuration fits the budget.
    """
    kind, split_mode = ModelKind(kind), SplitMode(split_mode)
    if kind not in TRAINABLE_KINDS:
        raise UsageError(f"{kind} has no hyperparameters to search")
    if not datasets:
        raise UsageError("grid search needs at least one dataset")
    cfg = train_config or TrainConfig()
    dims = [(ds.num_features, ds.num_classes) for ds in datasets]
    feasible, skipped = [], 0
    for spec in grid.points(kind):
        if grid.within_budget(spec, dims):
            feasible.append(spec)
        else:
            skipped += 1
    if not feasible:
        raise UsageError(f"{kind}: no grid configuration fits the budget of {grid.budget:.0f}")
    logger.info("%s: %s configurations within budget, %s skipped", kind, len(feasible), skipped)

    tasks = [
        task
        for tag, spec in enumerate(feasible)
        for i in range(len(datasets))
        for task in _tasks_for(
            i, spec, num_splits, num_inits, experiment_seed, cfg, None, tag, split_mode
        )
    ]
    outcomes = _execute(tasks, list(datasets), workers)
    if outcomes.failed:
        logger.warning("%s grid trials failed and count as zero accuracy", len(outcomes.failed))
    accs: dict[int, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for task, recs in outcomes.done:
        for rec in recs:
            accs[task.tag][rec.dataset].append(rec.val_accuracy)
    for task, failure in outcomes.failed:
        accs[task.tag][failure.dataset].append(0.0)

    ranking = []
    for tag, spec in enumerate(feasible):
        per_dataset = {ds.name: float(np.mean(accs[tag][ds.name])) for ds in datasets}
        ranking.append(GridPoint(spec, float(np.mean(list(per_dataset.values()))), per_dataset))
    ranking.sort(key=lambda p: p.tie_key)
    best = ranking[0]
    logger.info("%s: best validation accuracy %.4f", kind, best.score)
    return GridSearchResult(kind=kind, ranking=ranking, skipped=skipped)


# --------------------------------------------------------------------------- #
# Aggregation
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class AggregateStat:
    """Mean and population standard deviation of one (dataset, model) cell."""

    mean: float
    std: float
    count: int


def aggregate(table: ResultTable) -> dict[tuple[str, str], AggregateStat]:
    """Pool every (split, init) record of each (dataset, model) cell."""
    cells: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in table.records:
        cells[(r.dataset, r.model)].append(r.test_accuracy)
    return {
        key: AggregateStat(float(np.mean(vals)), float(np.std(vals)), len(vals))
        for key, vals in cells.items()
    }


def _split_means(table: ResultTable) -> dict[tuple[str, int], dict[str, float]]:
    """Init-averaged test accuracy per (dataset, split) and model."""
    cells: dict[tuple[str, int], dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in table.records:
        cells[(r.dataset, r.split_id)][r.model].append(r.test_accuracy)
    return {
        key: {model: float(np.mean(vals)) for model, vals in per_model.items()}
        for key, per_model in cells.items()
    }


@dataclass
class RelativeAccuracy:
    """Per-model relative accuracy in percent plus the excluded (dataset, model) cells."""

    values: dict[str, float]
    excluded: list[tuple[str, str]]


def _excluded_cells(
    table: ResultTable, splits: Mapping[tuple[str, int], Mapping[str, float]]
) -> list[tuple[str, str]]:
    models = table.models()
    excluded = set()
    for (dataset, _), per_model in splits.items():
        for model in models:
            if model not in per_model:
                excluded.add((dataset, model))
    return sorted(excluded)


def relative_accuracy(table: ResultTable) -> RelativeAccuracy:
    """Average over (dataset, split) of each model's accuracy relative to the best model.

    Accuracies are first averaged over initializations. Models missing from a
    (dataset, split) take no part in it and the cell is listed in ``excluded``.
    """
    splits = _split_means(table)
    ratios: dict[str, list[float]] = defaultdict(list)
    for per_model in splits.values():
        best = max(per_model.values())
        for model, acc in per_model.items():
            ratios[model].append(acc / best if best > 0 else 1.0)
    values = {model: 100.0 * float(np.mean(r)) for model, r in ratios.items()}
    return RelativeAccuracy(values=values, excluded=_excluded_cells(table, splits))


def average_rank(table: ResultTable) -> dict[str, float]:
    """Mean rank (1 = best) of each model over (dataset, split); ties share the mean rank."""
    splits = _split_means(table)
    ranks: dict[str, list[float]] = defaultdict(list)
    for per_model in splits.values():
        models = list(per_model)
        accs = np.array([per_model[m] for m in models])
        for model, rank in zip(models, rankdata(-accs, method="average"), strict=True):
            ranks[model].append(float(rank))
    return {model: float(np.mean(r)) for model, r in ranks.items()}

