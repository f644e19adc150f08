"""Dataset ingestion: parse, unify dimensions and scales, group into rating multisets.

Three on-disk layouts are understood:

* ``jsonl`` -- the canonical format, one object per situation::

      {"situation_id": ..., "text": ..., "source_dataset": "EnVent",
       "annotations": [{"annotator_id": ..., "dimension": ..., "rating": ...}],
       "profiles": {"<annotator_id>": {...PersonaProfile fields...}}}

  Several lines may share a ``situation_id``; they are merged.
* ``long`` -- delimited text, one annotation per row
  (``situation_id, text, annotator_id, dimension, rating``).
* ``wide`` -- delimited text, one row per (situation, annotator) with one
  column per dimension, as in corpus exports.

Malformed rows never abort a parse; they go to a rejects report.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, NamedTuple, Sequence

from .dimensions import DimensionMap, SourceDataset, BUILTIN_MAP, sort_key
from .errors import DataError, LayoutError, NoValidRecordsError, UnmappedDimensionError
from .persona import DEMOGRAPHIC_FIELDS, TIPI_ALIASES, TIPI_ITEMS, PersonaProfile

logger = logging.getLogger(__name__)


class Annotation(NamedTuple):
    annotator_id: str
    dimension: str
    rating: int


@dataclass(frozen=True)
class AppraisalRecord:
    situation_id: str
    text: str
    annotations: tuple[Annotation, ...]
    source_dataset: SourceDataset = SourceDataset.ENVENT
    profiles: Mapping[str, PersonaProfile] = field(default_factory=dict)

    def __post_init__(self):
        if not self.annotations:
            raise ValueError(f"situation {self.situation_id!r} has no annotations")
        seen = set()
        for a in self.annotations:
            key = (a.annotator_id, a.dimension)
            if key in seen:
                raise ValueError(f"duplicate annotation {key} in situation {self.situation_id!r}")
            seen.add(key)
            if not 1 <= a.rating <= 5:
                raise ValueError(f"rating {a.rating} outside 1..5")

    @property
    def annotators(self) -> list[str]:
        return sorted({a.annotator_id for a in self.annotations})

    def to_dict(self) -> dict[str, Any]:
        return {
            "situation_id": self.situation_id,
            "text": self.text,
            "source_dataset": self.source_dataset.value,
            "annotations": [
                {"annotator_id": a.annotator_id, "dimension": a.dimension, "rating": a.rating}
                for a in self.annotations
            ],
            "profiles": {k: self.profiles[k].to_dict() for k in sorted(self.profiles)},
        }


class RatingMultiset(NamedTuple):
    situation_id: str
    dimension: str
    ratings: tuple[int, ...]


@dataclass(frozen=True)
class DatasetLayout:
    """How to read a dataset file.

    ``scale`` is the rating scale of the file (5, or 10 for raw FGE/CovidET,
    which is rescaled on read). ``source_dataset`` is used when rows do not
    name their own source.
    """

    kind: str = "jsonl"
    scale: int = 5
    source_dataset: SourceDataset | str = SourceDataset.ENVENT
    delimiter: str | None = None
    id_column: str = "situation_id"
    text_column: str = "text"
    annotator_column: str = "annotator_id"
    profile_columns: tuple[str, ...] = ()

    KINDS = ("jsonl", "long", "wide")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise LayoutError(f"unknown layout {self.kind!r}; expected one of {', '.join(self.KINDS)}")
        if self.scale not in (5, 10):
            raise LayoutError(f"unsupported rating scale {self.scale}")
        object.__setattr__(self, "source_dataset", SourceDataset.parse(self.source_dataset))
        object.__setattr__(self, "profile_columns", tuple(self.profile_columns))

    @classmethod
    def coerce(cls, value: "DatasetLayout | str | Mapping[str, Any] | None") -> "DatasetLayout":
        if value is None:
            return cls()
        if isinstance(value, DatasetLayout):
            return value
        if isinstance(value, str):
            return cls(kind=value)
        return cls(**dict(value))


def rescale_rating(r: int) -> int:
    """Map a 10-point rating to the 5-point scale: halve, round half up, clamp."""
    if isinstance(r, bool) or int(r) != r or not 1 <= r <= 10:
        raise ValueError(f"10-point rating must be an integer in 1..10, got {r!r}")
    return min(5, max(1, (int(r) + 1) // 2))


def _coerce_rating(raw: Any, scale: int) -> int:
    if isinstance(raw, bool):
        raise ValueError(f"rating {raw!r} is not a number")
    if isinstance(raw, str):
        raw = raw.strip()
        if not raw:
            raise ValueError("empty rating")
        value = float(raw)
    elif isinstance(raw, (int, float)):
        value = float(raw)
    else:
        raise ValueError(f"rating {raw!r} is not a number")
    if value != int(value):
        raise ValueError(f"rating {raw!r} is not an integer")
    value = int(value)
    if scale == 10:
        return rescale_rating(value)
    if not 1 <= value <= 5:
        raise ValueError(f"rating {value} outside 1..5")
    return value


@dataclass
class ParseResult:
    records: list[AppraisalRecord]
    rejects: list[dict[str, Any]]
    # source dimension name -> number of annotations dropped as unmapped
    dropped: dict[str, int]

    def write_rejects(self, path: str | Path) -> None:
        write_jsonl(path, self.rejects)


class _Builder:
    """Accumulates annotations per situation while collecting rejects."""

    def __init__(self, layout: DatasetLayout, dimension_map: DimensionMap):
        self.layout = layout
        self.map = dimension_map
        self.order: list[str] = []
        self.text: dict[str, str] = {}
        self.source: dict[str, SourceDataset] = {}
        self.annotations: dict[str, list[Annotation]] = {}
        self.keys: dict[str, set[tuple[str, str]]] = {}
        self.profiles: dict[str, dict[str, PersonaProfile]] = {}
        self.first_row: dict[str, int] = {}
        self.rejects: list[dict[str, Any]] = []
        self.dropped: Counter[str] = Counter()

    def reject(self, row: int, raw: Any, reason: str, annotation: int | None = None) -> None:
        entry: dict[str, Any] = {"row": row}
        if annotation is not None:
            entry["annotation"] = annotation
        entry["raw"] = raw if isinstance(raw, str) else json.dumps(raw, ensure_ascii=False, sort_keys=True)
        entry["reason"] = reason
        self.rejects.append(entry)

    def situation(self, sid: str, row: int, text: str | None, source: SourceDataset) -> None:
        if sid not in self.annotations:
            self.order.append(sid)
            self.annotations[sid] = []
            self.keys[sid] = set()
            self.profiles[sid] = {}
            self.first_row[sid] = row
            self.source[sid] = source
        if text and not self.text.get(sid):
            self.text[sid] = text

    def annotate(self, sid: str, row: int, annotator, dimension, rating, raw, index: int | None = None) -> None:
        if annotator in (None, ""):
            self.reject(row, raw, "missing annotator_id", index)
            return
        if dimension in (None, ""):
            self.reject(row, raw, "missing dimension", index)
            return
        try:
            canonical = self.map.lookup(self.source[sid], str(dimension))
        except UnmappedDimensionError:
            self.dropped[str(dimension)] += 1
            return
        try:
            value = _coerce_rating(rating, self.layout.scale)
        except (ValueError, TypeError) as exc:
            self.reject(row, raw, str(exc), index)
            return
        key = (str(annotator), canonical)
        if key in self.keys[sid]:
            self.reject(row, raw, f"duplicate rating by {annotator!r} on {canonical}", index)
            return
        self.keys[sid].add(key)
        self.annotations[sid].append(Annotation(str(annotator), canonical, value))

    def profile(self, sid: str, row: int, annotator: str, data: Mapping[str, Any], raw) -> None:
        try:
            self.profiles[sid][str(annotator)] = PersonaProfile.from_dict(data)
        except (ValueError, TypeError) as exc:
            self.reject(row, raw, f"invalid profile for {annotator!r}: {exc}")

    def finish(self) -> ParseResult:
        records = []
        for sid in self.order:
            anns = self.annotations[sid]
            if not anns:
                self.reject(self.first_row[sid], sid, "situation has no valid annotations")
                continue
            records.append(AppraisalRecord(
                situation_id=sid,
                text=self.text.get(sid, ""),
                annotations=tuple(anns),
                source_dataset=self.source[sid],
                profiles=self.profiles[sid],
            ))
        for name, n in sorted(self.dropped.items()):
            logger.warning("dropped %d annotation(s) on unmapped dimension %r", n, name)
        return ParseResult(records, self.rejects, dict(self.dropped))


def _source_of(value: Any, default: SourceDataset) -> SourceDataset:
    return default if value in (None, "") else SourceDataset.parse(value)


def _parse_jsonl(lines: Iterable[str], b: _Builder) -> None:
    for row, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            b.reject(row, line.rstrip("\n"), f"invalid JSON: {exc.msg}")
            continue
        if not isinstance(obj, dict) or obj.get("situation_id") in (None, ""):
            b.reject(row, line.rstrip("\n"), "missing situation_id")
            continue
        sid = str(obj["situation_id"])
        try:
            source = _source_of(obj.get("source_dataset"), b.layout.source_dataset)
        except ValueError as exc:
            b.reject(row, line.rstrip("\n"), str(exc))
            continue
        b.situation(sid, row, obj.get("text"), source)
        annotations = obj.get("annotations") or []
        if not isinstance(annotations, list):
            b.reject(row, line.rstrip("\n"), "annotations must be a list")
            annotations = []
        for i, ann in enumerate(annotations):
            if not isinstance(ann, dict):
                b.reject(row, ann, "annotation must be an object", i)
                continue
            b.annotate(sid, row, ann.get("annotator_id"), ann.get("dimension"), ann.get("rating"), ann, i)
        profiles = obj.get("profiles") or {}
        if isinstance(profiles, dict):
            for annotator, data in profiles.items():
                if isinstance(data, dict):
                    b.profile(sid, row, annotator, data, {annotator: data})
                else:
                    b.reject(row, {annotator: data}, f"profile for {annotator!r} must be an object")


def _is_profile_column(name: str, layout: DatasetLayout) -> bool:
    key = name.strip().lower()
    return (
        key in DEMOGRAPHIC_FIELDS
        or TIPI_ALIASES.get(key, key) in TIPI_ITEMS
        or name in layout.profile_columns
    )


def _reader(handle, layout: DatasetLayout, path: Path) -> csv.DictReader:
    delimiter = layout.delimiter or ("\t" if path.suffix.lower() in (".tsv", ".tab") else ",")
    reader = csv.DictReader(handle, delimiter=delimiter)
    if reader.fieldnames is None:
        raise NoValidRecordsError(f"{path} is empty")
    return reader


def _profile_from_row(row: Mapping[str, str], layout: DatasetLayout) -> dict[str, str]:
    return {k: v for k, v in row.items() if k and _is_profile_column(k, layout) and v not in (None, "")}


def _parse_long(handle, path: Path, b: _Builder) -> None:
    layout = b.layout
    reader = _reader(handle, layout, path)
    required = {layout.id_column, layout.annotator_column, "dimension", "rating"}
    missing = required - set(reader.fieldnames)
    if missing:
        raise LayoutError(f"{path}: long layout needs column(s) {', '.join(sorted(missing))}")
    for row_no, row in enumerate(reader, start=2):
        raw = json.dumps(row, ensure_ascii=False, sort_keys=True)
        sid = row.get(layout.id_column)
        if sid in (None, ""):
            b.reject(row_no, raw, "missing situation_id")
            continue
        try:
            source = _source_of(row.get("source_dataset"), layout.source_dataset)
        except ValueError as exc:
            b.reject(row_no, raw, str(exc))
            continue
        b.situation(sid, row_no, row.get(layout.text_column), source)
        annotator = row.get(layout.annotator_column)
        b.annotate(sid, row_no, annotator, row.get("dimension"), row.get("rating"), raw)
        prof = _profile_from_row(row, layout)
        if prof and annotator and annotator not in b.profiles[sid]:
            b.profile(sid, row_no, annotator, prof, raw)


def _parse_wide(handle, path: Path, b: _Builder) -> None:
    layout = b.layout
    reader = _reader(handle, layout, path)
    meta = {layout.id_column, layout.text_column, layout.annotator_column, "source_dataset"}
    missing = {layout.id_column, layout.annotator_column} - set(reader.fieldnames)
    if missing:
        raise LayoutError(f"{path}: wide layout needs column(s) {', '.join(sorted(missing))}")
    dim_columns = [c for c in reader.fieldnames if c and c not in meta and not _is_profile_column(c, layout)]
    for row_no, row in enumerate(reader, start=2):
        raw = json.dumps(row, ensure_ascii=False, sort_keys=True)
        sid = row.get(layout.id_column)
        if sid in (None, ""):
            b.reject(row_no, raw, "missing situation_id")
            continue
        try:
            source = _source_of(row.get("source_dataset"), layout.source_dataset)
        except ValueError as exc:
            b.reject(row_no, raw, str(exc))
            continue
        b.situation(sid, row_no, row.get(layout.text_column), source)
        annotator = row.get(layout.annotator_column)
        for col in dim_columns:
            value = row.get(col)
            if value in (None, ""):
                continue
            b.annotate(sid, row_no, annotator, col, value, raw)
        prof = _profile_from_row(row, layout)
        if prof and annotator:
            b.profile(sid, row_no, annotator, prof, raw)


def read_dataset(
    path: str | Path,
    layout: DatasetLayout | str | Mapping[str, Any] | None = None,
    *,
    dimension_map: DimensionMap | None = None,
) -> ParseResult:
    """Parse a dataset file into records plus a rejects report."""
    layout = DatasetLayout.coerce(layout)
    path = Path(path)
    builder = _Builder(layout, dimension_map or BUILTIN_MAP)
    try:
        with path.open(encoding="utf-8", newline="") as handle:
            if layout.kind == "jsonl":
                _parse_jsonl(handle, builder)
            elif layout.kind == "long":
                _parse_long(handle, path, builder)
            else:
                _parse_wide(handle, path, builder)
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    result = builder.finish()
    if not result.records:
        raise NoValidRecordsError(f"{path}: no valid records ({len(result.rejects)} rejected row(s))")
    return result


def parse_records(
    path: str | Path,
    layout: DatasetLayout | str | Mapping[str, Any] | None = None,
    *,
    dimension_map: DimensionMap | None = None,
    rejects_path: str | Path | None = None,
) -> list[AppraisalRecord]:
    result = read_dataset(path, layout, dimension_map=dimension_map)
    if result.rejects:
        logger.warning("%s: %d row(s) rejected", path, len(result.rejects))
    if rejects_path is not None:
        result.write_rejects(rejects_path)
    return result.records


def build_rating_multisets(records: Iterable[AppraisalRecord]) -> list[RatingMultiset]:
    """One multiset per (situation, dimension); annotator identity is dropped."""
    grouped: dict[tuple[str, str], list[int]] = {}
    rank: dict[str, int] = {}
    for rec in records:
        rank.setdefault(rec.situation_id, len(rank))
        for a in rec.annotations:
            grouped.setdefault((rec.situation_id, a.dimension), []).append(a.rating)
    keys = sorted(grouped, key=lambda k: (rank[k[0]], sort_key(k[1])))
    return [RatingMultiset(sid, dim, tuple(sorted(grouped[(sid, dim)]))) for sid, dim in keys]


def write_jsonl(path: str | Path, rows: Iterable[Mapping[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False) + "\n")


def iter_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_records(path: str | Path, records: Sequence[AppraisalRecord]) -> None:
    write_jsonl(path, (r.to_dict() for r in records))


def write_multisets(path: str | Path, multisets: Sequence[RatingMultiset]) -> None:
    write_jsonl(path, ({"situation_id": m.situation_id, "dimension": m.dimension, "ratings": list(m.ratings)} for m in multisets))


def read_multisets(path: str | Path) -> list[RatingMultiset]:
    return [RatingMultiset(str(o["situation_id"]), o["dimension"], tuple(int(r) for r in o["ratings"])) for o in iter_jsonl(path)]
