"""Summaries of a :class:`ResultTable`: accuracy tables, boxplot statistics and rankings.

Output files written by :func:`write_report`:

- ``summary.csv``: ``model,dataset,mean,std,count,formatted,best``
- ``summary.json``: the same cells plus dataset/model order and conventions
- ``boxplots.json``: one object per (dataset, model) with quartiles, whiskers, outliers
- ``ranks.csv``: ``model,relative_accuracy,average_rank,excluded_datasets``
"""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError, UsageError
from .protocol import ResultTable, aggregate, average_rank, relative_accuracy

__all__ = [
    "QUANTILE_METHOD",
    "BoxplotSummary",
    "SplitSensitivity",
    "Summary",
    "SummaryCell",
    "boxplot_stats",
    "format_cell",
    "split_sensitivity_report",
    "summarize",
    "write_report",
]

logger = logging.getLogger(__name__)

QUANTILE_METHOD = "linear"
MIN_BOXPLOT_RECORDS = 4
NA = "N/A"


def _percent(value: float) -> str:
    # absorb binary noise (0.815 -> 81.5) before rounding to one decimal
    return f"{round(100 * value, 9):.1f}"


def format_cell(mean: float, std: float) -> str:
    """``mean ± std`` in percent with one decimal."""
    return f"{_percent(mean)} ± {_percent(std)}"


# --------------------------------------------------------------------------- #
# Accuracy summary
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SummaryCell:
    """Aggregated accuracy of one model on one dataset."""

    model: str
    dataset: str
    mean: float
    std: float
    count: int
    formatted: str
    best: bool


@dataclass
class Summary:
    """Per-dataset accuracy columns; missing (dataset, model) cells are N/A."""

    datasets: list[str]
    models: list[str]
    cells: dict[tuple[str, str], SummaryCell] = field(default_factory=dict)

    def cell(self, model: str, dataset: str) -> SummaryCell | None:
        """Cell for (``model``, ``dataset``) or ``None`` when not run."""
        return self.cells.get((model, dataset))

    def best_models(self, dataset: str) -> list[str]:
        """Models flagged best on ``dataset``."""
        return [m for m in self.models if (c := self.cell(m, dataset)) is not None and c.best]

    def to_text(self) -> str:
        """Fixed-width table; best cells carry a trailing ``*``."""
        header = ["model", *self.datasets]
        rows = []
        for model in self.models:
            row = [model]
            for dataset in self.datasets:
                c = self.cell(model, dataset)
                row.append(NA if c is None else c.formatted + (" *" if c.best else ""))
            rows.append(row)
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
        lines = [
            "  ".join(v.ljust(w) for v, w in zip(r, widths, strict=True)).rstrip()
            for r in [header, *rows]
        ]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def to_rows(self) -> list[list[str]]:
        """``summary.csv`` rows including the header; N/A cells are kept as rows."""
        rows = [["model", "dataset", "mean", "std", "count", "formatted", "best"]]
        for model in self.models:
            for dataset in self.datasets:
                c = self.cell(model, dataset)
                if c is None:
                    rows.append([model, dataset, "", "", "0", NA, "false"])
                else:
                    rows.append(
                        [
                            model,
                            dataset,
                            repr(c.mean),
                            repr(c.std),
                            str(c.count),
                            c.formatted,
                            "true" if c.best else "false",
                        ]
                    )
        return rows

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready representation."""
        return {
            "datasets": self.datasets,
            "models": self.models,
            "std_convention": "population",
            "cells": [asdict(c) for c in self.cells.values()],
        }


def summarize(table: ResultTable) -> Summary:
    """Mean ± population std per (dataset, model), flagging the best mean per dataset.

    The best flag compares the one-decimal percentages as printed; every model at the
    printed maximum is flagged.
    """
    if not table.records:
        raise DataError("cannot summarize an empty result table")
    stats = aggregate(table)
    summary = Summary(datasets=table.datasets(), models=table.models())
    for dataset in summary.datasets:
        present = {m: stats[(dataset, m)] for m in summary.models if (dataset, m) in stats}
        top = max(float(_percent(s.mean)) for s in present.values())
        for model, s in present.items():
            summary.cells[(model, dataset)] = SummaryCell(
                model=model,
                dataset=dataset,
                mean=s.mean,
                std=s.std,
                count=s.count,
                formatted=format_cell(s.mean, s.std),
                best=float(_percent(s.mean)) == top,
            )
    return summary


# --------------------------------------------------------------------------- #
# Boxplots
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class BoxplotSummary:
    """Five-number summary with Tukey whiskers (1.5 IQR) and the points beyond them."""

    dataset: str
    model: str
    min: float
    q1: float
    median: float
    q3: float
    max: float
    whisker_low: float
    whisker_high: float
    outliers: list[float]

    @classmethod
    def from_values(cls, dataset: str, model: str, values: list[float]) -> BoxplotSummary:
        """Compute the summary of ``values`` with linear-interpolation quartiles."""
        arr = np.sort(np.asarray(values, dtype=np.float64))
        q1, median, q3 = np.percentile(arr, [25, 50, 75], method=QUANTILE_METHOD)
        iqr = q3 - q1
        low_fence, high_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = arr[(arr >= low_fence) & (arr <= high_fence)]
        outliers = arr[(arr < low_fence) | (arr > high_fence)]
        return cls(
            dataset=dataset,
            model=model,
            min=float(arr[0]),
            q1=float(q1),
            median=float(median),
            q3=float(q3),
            max=float(arr[-1]),
            whisker_low=float(inside.min()),
            whisker_high=float(inside.max()),
            outliers=[float(v) for v in outliers],
        )


def boxplot_stats(
    table: ResultTable, min_records: int = MIN_BOXPLOT_RECORDS, strict: bool = True
) -> list[BoxplotSummary]:
    """Boxplot statistics of the test accuracies of every (dataset, model) cell.

    Raises:
        DataError: a cell has fewer than ``min_records`` records and ``strict`` is set.
            Without ``strict`` such cells are skipped.
    """
    result = []
    for dataset in table.datasets():
        for model in table.models():
            values = table.accuracies(dataset, model)
            if not values:
                continue
            if len(values) < min_records:
                msg = f"{dataset}/{model}: {len(values)} records, boxplots need {min_records}"
                if strict:
                    raise DataError(msg)
                logger.warning("Skipping boxplot for %s", msg)
                continue
            result.append(BoxplotSummary.from_values(dataset, model, values))
    return result


# --------------------------------------------------------------------------- #
# Split sensitivity
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SplitSensitivity:
    """Model ranking of one dataset under each split regime."""

    dataset: str
    rankings: dict[str, list[str]]
    flip: bool

    @property
    def top(self) -> dict[str, str]:
        """Best model per regime."""
        return {regime: ranking[0] for regime, ranking in self.rankings.items()}


def split_sensitivity_report(tables: Mapping[str, ResultTable]) -> list[SplitSensitivity]:
    """Compare rankings (mean test accuracy, descending) across split regimes.

    Only datasets present in every regime are reported. ``flip`` is set when the top
    model differs between any two regimes.
    """
    if len(tables) < 2:
        raise UsageError(f"split sensitivity needs at least 2 regimes, got {len(tables)}")
    stats = {regime: aggregate(t) for regime, t in tables.items()}
    common = [
        d
        for d in next(iter(tables.values())).datasets()
        if all(d in t.datasets() for t in tables.values())
    ]
    report = []
    for dataset in common:
        rankings = {}
        for regime, cells in stats.items():
            models = [(m, s.mean) for (d, m), s in cells.items() if d == dataset]
            rankings[regime] = [m for m, _ in sorted(models, key=lambda x: (-x[1], x[0]))]
        tops = {r[0] for r in rankings.values()}
        report.append(SplitSensitivity(dataset, rankings, flip=len(tops) > 1))
    return report


# --------------------------------------------------------------------------- #
# Writers
# --------------------------------------------------------------------------- #
def _write_csv(path: Path, rows: list[list[str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_report(table: ResultTable, out_dir: Path | str) -> dict[str, Path]:
    """Write every summary file into ``out_dir`` and return their paths by name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(table)
    paths = {
        "summary.csv": out / "summary.csv",
        "summary.json": out / "summary.json",
        "boxplots.json": out / "boxplots.json",
        "ranks.csv": out / "ranks.csv",
    }
    _write_csv(paths["summary.csv"], summary.to_rows())
    _write_json(paths["summary.json"], summary.to_dict())
    boxes = boxplot_stats(table, strict=False)
    _write_json(
        paths["boxplots.json"],
        {
            "quantile_method": QUANTILE_METHOD,
            "whisker_iqr": 1.5,
            "cells": [asdict(b) for b in boxes],
        },
    )

    rel = relative_accuracy(table)
    ranks = average_rank(table)
    excluded: dict[str, list[str]] = {}
    for dataset, model in rel.excluded:
        excluded.setdefault(model, []).append(dataset)
    rows = [["model", "relative_accuracy", "average_rank", "excluded_datasets"]]
    for model in summary.models:
        rows.append(
            [
                model,
                f"{rel.values[model]:.2f}",
                f"{ranks[model]:.2f}",
                ";".join(excluded.get(model, [])),
            ]
        )
    _write_csv(paths["ranks.csv"], rows)
    for name in paths:
        logger.debug("Wrote %s", paths[name])
    return paths
