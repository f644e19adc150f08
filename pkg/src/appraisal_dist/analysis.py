"""Second-order analyses: dimension rankings, group variance, significance and correlation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from .dataset import AppraisalRecord
from .dimensions import ABBREVIATIONS, sort_key
from .distributions import sample_variance
from .errors import DataError
from .metrics import EvalReport, ItemScore
from .persona import DEMOGRAPHIC_FIELDS, TIPI_PAIRS

logger = logging.getLogger(__name__)

TRAIT_FIELDS = tuple(t for t, _, _ in TIPI_PAIRS)


def _abbrev(dim: str) -> str:
    return ABBREVIATIONS.get(dim, dim)


def rank_dimensions(report: EvalReport, k: int) -> tuple[list[str], list[str]]:
    """Best and worst ``k`` dimensions by Wasserstein distance.

    ``top[0]`` is the best-modelled dimension and ``bottom[0]`` the worst.
    Ties are broken alphabetically, both when choosing members and when
    ordering them, so the two lists never overlap when ``2k`` fits.
    """
    dims = list(report.per_dimension)
    if k < 1 or k > len(dims):
        raise ValueError(f"k={k} is outside 1..{len(dims)} dimensions")
    w = {d: report.per_dimension[d].wasserstein for d in dims}
    ascending = sorted(dims, key=lambda d: (w[d], d))
    top = ascending[:k]
    bottom = sorted(ascending[len(ascending) - k:], key=lambda d: (-w[d], d))
    return top, bottom


# -- group variance ---------------------------------------------------------


@dataclass
class GroupVarianceTable:
    group_by: str
    rows: list[str]
    dimensions: list[str]
    # cells[g][d] is None when no situation had two ratings from group g
    cells: dict[str, dict[str, float | None]]
    n_situations: dict[str, dict[str, int]] = field(default_factory=dict)
    n_skipped: int = 0

    @property
    def columns(self) -> list[str]:
        return [_abbrev(d) for d in self.dimensions]

    def value(self, group: str, dimension: str) -> float | None:
        return self.cells[group][dimension]

    def matrix(self) -> np.ndarray:
        return np.array(
            [[np.nan if self.cells[g][d] is None else self.cells[g][d] for d in self.dimensions] for g in self.rows]
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.group_by, *self.columns])
        for g in self.rows:
            w.writerow([g, *("" if self.cells[g][d] is None else f"{self.cells[g][d]:.6f}" for d in self.dimensions)])
        return buf.getvalue()

    def to_long_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "dimension", "variance", "n_situations"])
        for g in self.rows:
            for d in self.dimensions:
                v = self.cells[g][d]
                w.writerow([g, _abbrev(d), "" if v is None else f"{v:.6f}", self.n_situations[g][d]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "group_by": self.group_by,
            "rows": self.rows,
            "columns": self.columns,
            "cells": {g: {_abbrev(d): self.cells[g][d] for d in self.dimensions} for g in self.rows},
            "n_situations": {g: {_abbrev(d): self.n_situations[g][d] for d in self.dimensions} for g in self.rows},
            "n_skipped": self.n_skipped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def _known_field(name: str, records: Sequence[AppraisalRecord]) -> bool:
    if name in DEMOGRAPHIC_FIELDS or name in TRAIT_FIELDS or name == "origin":
        return True
    return any(name in p.extra for r in records for p in r.profiles.values())


def group_variance(
    records: Iterable[AppraisalRecord],
    group_by: str,
    *,
    missing: str = "error",
) -> GroupVarianceTable:
    """Mean within-group rating variance per (group, dimension).

    For each situation and dimension the ratings of one group's annotators
    get an unbiased variance; cells average these over situations. Situations
    where a group contributes fewer than two ratings are skipped and counted.
    ``missing="skip"`` ignores annotators without the grouping field instead
    of raising.
    """
    records = list(records)
    if missing not in ("error", "skip"):
        raise ValueError("missing must be 'error' or 'skip'")
    if not _known_field(group_by, records):
        raise DataError(f"unknown grouping field {group_by!r}")
    per_cell: dict[tuple[str, str], list[float]] = {}
    dims: set[str] = set()
    groups: set[str] = set()
    skipped = 0
    for rec in records:
        buckets: dict[tuple[str, str], list[int]] = {}
        for a in rec.annotations:
            prof = rec.profiles.get(a.annotator_id)
            label = prof.get(group_by) if prof is not None else None
            if label is None:
                if missing == "skip":
                    continue
                raise DataError(
                    f"situation {rec.situation_id!r}: annotator {a.annotator_id!r} has no {group_by!r} field"
                )
            buckets.setdefault((label, a.dimension), []).append(a.rating)
        for (label, dim), ratings in buckets.items():
            groups.add(label)
            dims.add(dim)
            if len(ratings) < 2:
                skipped += 1
                continue
            per_cell.setdefault((label, dim), []).append(sample_variance(ratings))
    rows = sorted(groups)
    ordered_dims = sorted(dims, key=sort_key)
    cells: dict[str, dict[str, float | None]] = {}
    counts: dict[str, dict[str, int]] = {}
    for g in rows:
        cells[g], counts[g] = {}, {}
        for d in ordered_dims:
            vals = per_cell.get((g, d), [])
            # fsum keeps the mean independent of record order
            cells[g][d] = math.fsum(vals) / len(vals) if vals else None
            counts[g][d] = len(vals)
    return GroupVarianceTable(group_by, rows, ordered_dims, cells, counts, skipped)


# -- statistics -------------------------------------------------------------


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float


def welch_test(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Welch's t-test, one-tailed with alternative ``mean(b) < mean(a)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    se2 = va + vb
    if not se2 > 0:
        raise ValueError("degenerate variance: both samples are constant")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    # upper tail of Student's t
    p = float(special.stdtr(df, -t))
    return WelchResult(float(t), float(df), p)


def welch_one_tailed(a: Sequence[float], b: Sequence[float]) -> float:
    return welch_test(a, b).p


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("pearson is undefined for constant input")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def metric_correlation(report: EvalReport, x: str = "var_mae", y: str = "wasserstein") -> float:
    """Correlation of two metrics across the report's dimensions."""
    return pearson(report.metric_vector(x), report.metric_vector(y))


# -- profile ablation significance ------------------------------------------

AGGREGATE_ROW = "Average"


def _per_situation(items: Iterable[ItemScore]) -> dict[str, float]:
    by_sid: dict[str, list[float]] = {}
    for s in items:
        by_sid.setdefault(s.situation_id, []).append(s.wasserstein)
    return {sid: math.fsum(v) / len(v) for sid, v in sorted(by_sid.items())}


def _samples(report: EvalReport, dimension: str | None, unit: str) -> list[float]:
    if dimension is not None:
        return [s.wasserstein for s in report.items if s.dimension == dimension]
    if unit == "item":
        return [s.wasserstein for s in report.items]
    return list(_per_situation(report.items).values())


@dataclass
class SignificanceTable:
    rows: list[str]
    conditions: list[str]
    # None where the test is undefined (constant distances in both conditions)
    cells: dict[str, dict[str, float | None]]
    unit: str = "situation"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dimension", *self.conditions])
        for r in self.rows:
            w.writerow([_abbrev(r), *("" if self.cells[r][c] is None else f"{self.cells[r][c]:.3f}" for c in self.conditions)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"unit": self.unit, "conditions": self.conditions, "cells": {r: self.cells[r] for r in self.rows}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def significance_table(
    baseline: EvalReport,
    conditions: Mapping[str, EvalReport],
    *,
    unit: str = "situation",
) -> SignificanceTable:
    """One-tailed Welch p-values for "condition lowers W1 versus baseline".

    Dimension rows compare per-situation distances on that dimension. The
    aggregate row compares per-situation mean distances (``unit="situation"``)
    or pools every (situation, dimension) distance (``unit="item"``).
    """
    if unit not in ("situation", "item"):
        raise ValueError("unit must be 'situation' or 'item'")
    rows = [*baseline.per_dimension, AGGREGATE_ROW]
    cells: dict[str, dict[str, float | None]] = {r: {} for r in rows}
    for name, report in conditions.items():
        for r in rows:
            dim = None if r == AGGREGATE_ROW else r
            try:
                cells[r][name] = welch_one_tailed(_samples(baseline, dim, unit), _samples(report, dim, unit))
            except ValueError as exc:
                logger.warning("significance %s/%s undefined: %s", r, name, exc)
                cells[r][name] = None
    return SignificanceTable(rows, list(conditions), cells, unit)
