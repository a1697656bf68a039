"""Report tables: build category/weighted/test tables and write TSV + JSON.

TSV files are for eyeballing: fixed six-significant-digit formatting, empty
cell for absent values, per-capita columns scaled by 100 and tagged
``[x1e-2]`` in the header. The JSON twins carry the unscaled full-precision
numbers and are the machine-readable form.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .metrics import PER_CAPITA_INDICATORS, SchemeSummary
from .stats import TestCell

# Indicators compared between categories in the difference tests.
TEST_INDICATORS = (
    "avail",
    "avail_per_resident",
    "avail_per_resident_job",
    "kde",
    "idle_mean_h",
    "trips",
)

AVAILABILITY_INDICATORS = ("avail", "avail_per_resident", "avail_per_resident_job", "kde")
USAGE_INDICATORS = (
    "trips",
    "trips_per_resident",
    "trips_per_resident_job",
    "idle_mean_h",
    "idle_median_h",
)

PER_CAPITA_SCALE = 100.0
_PER_CAPITA_TAG = " [x1e-2]"


@dataclass
class Table:
    """A rectangular table with typed cells (floats, ints, strings, None)."""

    name: str
    columns: List[str]
    rows: List[List[object]] = field(default_factory=list)

    def add(self, *cells: object) -> None:
        if len(cells) != len(self.columns):
            raise ValueError(f"table {self.name}: row width {len(cells)} != {len(self.columns)}")
        self.rows.append(list(cells))


def _is_per_capita(column: str) -> bool:
    return any(column == ind or column.startswith(ind + "_") for ind in PER_CAPITA_INDICATORS)


def _fmt(value: object, scale: float = 1.0) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value * scale:.6g}"
    return str(value)


def write_tsv(table: Table, path: Path) -> None:
    headers = [
        c + _PER_CAPITA_TAG if _is_per_capita(c) else c for c in table.columns
    ]
    lines = ["\t".join(headers)]
    scales = [PER_CAPITA_SCALE if _is_per_capita(c) else 1.0 for c in table.columns]
    for row in table.rows:
        lines.append("\t".join(_fmt(v, s) for v, s in zip(row, scales)))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def write_json(table: Table, path: Path) -> None:
    doc = {
        "name": table.name,
        "columns": table.columns,
        "rows": [dict(zip(table.columns, row)) for row in table.rows],
    }
    Path(path).write_bytes((json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8"))


def category_table(
    mode: str,
    summaries: Sequence[SchemeSummary],
    indicators: Sequence[str],
    kind: str,
) -> Table:
    """Stack per-scheme category summaries into one table for a mode.

    Every category row carries the zone count and mean/median per indicator;
    each scheme closes with its all-zones Average row and, when any zone
    could not be classified, an Unknown row.
    """
    columns = ["scheme", "category", "zones"]
    for ind in indicators:
        columns += [f"{ind}_mean", f"{ind}_median"]
    table = Table(name=f"{kind}_{mode}", columns=columns)

    def stat_cells(stats: Mapping[str, Tuple[Optional[float], Optional[float], int]]) -> List[object]:
        cells: List[object] = []
        for ind in indicators:
            mean, median, _n = stats.get(ind, (None, None, 0))
            cells += [mean, median]
        return cells

    for summary in summaries:
        scheme = summary.scheme.value
        for cat in summary.categories:
            table.add(scheme, cat.category, cat.member_count, *stat_cells(cat.stats))
        table.add(scheme, "Average", summary.average.member_count, *stat_cells(summary.average.stats))
        if summary.unknown is not None and summary.unknown.member_count > 0:
            table.add(scheme, "Unknown", summary.unknown.member_count, *stat_cells(summary.unknown.stats))
    return table


def weighted_table(entries: Mapping[str, Mapping[str, Mapping[str, Optional[float]]]]) -> Table:
    """Population-weighted citywide means; rows are (mode, resident group)."""
    table = Table(name="weighted", columns=["mode", "group", "avail", "kde"])
    for mode in sorted(entries):
        groups = entries[mode]
        for group in groups:
            vals = groups[group]
            table.add(mode, group, vals.get("avail"), vals.get("kde"))
    return table


def _test_cell_text(cell: TestCell) -> str:
    if cell.result is None:
        return f"n/a ({cell.reason})"
    r = cell.result
    star = "*" if r.significant else ""
    return f"t={r.t:.3f} p={r.p:.4f}{star}"


def welch_table(rows: Sequence[dict]) -> Table:
    """Difference-test grid; one row per (mode, pair), one column per indicator.

    Each row dict carries ``mode``, ``a``, ``b``, and ``cells`` mapping
    indicator name to a TestCell.
    """
    columns = ["mode", "group_a", "group_b", *TEST_INDICATORS]
    table = Table(name="welch", columns=columns)
    for row in rows:
        cells = [
            _test_cell_text(row["cells"][ind]) if ind in row["cells"] else ""
            for ind in TEST_INDICATORS
        ]
        table.add(row["mode"], row["a"], row["b"], *cells)
    return table


def welch_json_rows(rows: Sequence[dict]) -> List[dict]:
    """Structured twin of the welch table for the JSON output."""
    out: List[dict] = []
    for row in rows:
        cells: Dict[str, dict] = {}
        for ind in TEST_INDICATORS:
            cell = row["cells"].get(ind)
            if cell is None:
                continue
            if cell.result is None:
                cells[ind] = {"reason": cell.reason}
            else:
                r = cell.result
                cells[ind] = {
                    "t": r.t,
                    "df": r.df,
                    "p": r.p,
                    "significant": r.significant,
                    "n_a": r.n_a,
                    "n_b": r.n_b,
                    "mean_a": r.mean_a,
                    "mean_b": r.mean_b,
                }
        out.append({"mode": row["mode"], "a": row["a"], "b": row["b"], "cells": cells})
    return out
