"""Canonical appraisal dimensions and the built-in cross-dataset mapping.

The 21 EnVent dimensions are the anchor schema. FGE and CovidET dimension
names are mapped onto them; anything without a canonical equivalent is
reported rather than guessed.
"""

from __future__ import annotations

import json
from enum import Enum
from pathlib import Path
from typing import Mapping

from .errors import UnmappedDimensionError


class SourceDataset(str, Enum):
    ENVENT = "EnVent"
    FGE = "FGE"
    COVIDET = "CovidET"
    OTHER = "Other"

    @classmethod
    def parse(cls, value: str | "SourceDataset") -> "SourceDataset":
        if isinstance(value, SourceDataset):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise ValueError(f"unknown source dataset {value!r}")


# (name, abbrev) in the canonical order used for every table and report.
# `standards` would also abbreviate to "SD", which collides with
# `suddenness`; "ST" keeps abbreviations usable as unique column labels.
_CANONICAL: tuple[tuple[str, str], ...] = (
    ("suddenness", "SD"),
    ("familiarity", "FL"),
    ("predict_event", "PE"),
    ("pleasantness", "PL"),
    ("unpleasantness", "UPL"),
    ("goal_relevance", "GR"),
    ("chance_responsibility", "CR"),
    ("self_responsibility", "SR"),
    ("other_responsibility", "OR"),
    ("predict_consequence", "PC"),
    ("goal_support", "GS"),
    ("urgency", "UG"),
    ("self_control", "SC"),
    ("other_control", "OC"),
    ("chance_control", "CC"),
    ("accept_consequence", "AC"),
    ("standards", "ST"),
    ("social_norms", "SN"),
    ("attention", "AT"),
    ("not_consider", "NC"),
    ("effort", "EF"),
)

DIMENSIONS: tuple[str, ...] = tuple(name for name, _ in _CANONICAL)
ABBREVIATIONS: dict[str, str] = dict(_CANONICAL)
_BY_ABBREV = {abbrev: name for name, abbrev in _CANONICAL}
_ORDER = {name: i for i, name in enumerate(DIMENSIONS)}


def is_canonical(name: str) -> bool:
    return name in _ORDER


def abbrev(name: str) -> str:
    return ABBREVIATIONS[name]


def from_abbrev(code: str) -> str:
    return _BY_ABBREV[code]


def sort_key(name: str) -> tuple[int, str]:
    """Canonical ordering; non-canonical names (from user maps) sort last."""
    return (_ORDER.get(name, len(_ORDER)), name)


# Column spellings used by the EnVent corpus export.
_ENVENT_ALIASES = {
    "chance_responsblt": "chance_responsibility",
    "self_responsblt": "self_responsibility",
    "other_responsblt": "other_responsibility",
    "predict_conseq": "predict_consequence",
    "accept_conseq": "accept_consequence",
}

_FGE = {
    "suddenness": "suddenness",
    "familiarity": "familiarity",
    "expectedness": "predict_event",
    "pleasantness": "pleasantness",
    "goal relevance": "goal_relevance",
    "agent_intention": "chance_responsibility",
    "self_cause": "self_responsibility",
    "agent_cause": "other_responsibility",
    "certainty": "predict_consequence",
    "goal_consistency": "goal_support",
    "control": "self_control",
    "coping": "accept_consequence",
    "self_consistency": "standards",
    "moral": "social_norms",
    "attention": "attention",
}

_COVIDET = {
    "familiarity": "familiarity",
    "expectedness": "predict_event",
    "pleasantness": "pleasantness",
    "goal relevance": "goal_relevance",
    "self-responsibility": "self_responsibility",
    "other-responsibility": "other_responsibility",
    "predictability": "predict_consequence",
    "goal conduciveness": "goal_support",
    "self-controllable": "self_control",
    "other-controllable": "other_control",
    "circumstances-controllable": "chance_control",
    "problem-focused coping": "accept_consequence",
    "consistency with internal values": "standards",
    "consistency with social norms": "social_norms",
    "attentional activity": "attention",
    "effort": "effort",
}


def _normalize(name: str) -> str:
    return " ".join(name.strip().lower().split())


class DimensionMap:
    """Function from (source dataset, source dimension name) to canonical name."""

    def __init__(self, entries: Mapping[SourceDataset, Mapping[str, str]] | None = None):
        self._entries: dict[SourceDataset, dict[str, str]] = {}
        for source, table in (entries or {}).items():
            self.update(source, table)

    def update(self, source: SourceDataset | str, table: Mapping[str, str]) -> None:
        source = SourceDataset.parse(source)
        bucket = self._entries.setdefault(source, {})
        for raw, target in table.items():
            key = _normalize(raw)
            if key in bucket and bucket[key] != target:
                raise ValueError(f"{source.value}: {raw!r} maps to both {bucket[key]!r} and {target!r}")
            bucket[key] = target

    def lookup(self, source: SourceDataset | str, name: str) -> str:
        source = SourceDataset.parse(source)
        key = _normalize(name)
        table = self._entries.get(source, {})
        if key in table:
            return table[key]
        if is_canonical(name.strip()):
            # already-unified records keep their canonical names under any source
            return name.strip()
        raise UnmappedDimensionError(source.value, name)

    def targets(self) -> set[str]:
        return {t for table in self._entries.values() for t in table.values()}

    @classmethod
    def builtin(cls) -> "DimensionMap":
        return cls({
            SourceDataset.ENVENT: _ENVENT_ALIASES,
            SourceDataset.FGE: _FGE,
            SourceDataset.COVIDET: _COVIDET,
        })

    @classmethod
    def from_json(cls, path: str | Path, base: "DimensionMap | None" = None) -> "DimensionMap":
        """Load a user map ``{source_dataset: {source_name: canonical_name}}``.

        Entries are layered over ``base`` (the built-in map by default).
        """
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        out = cls()
        src = base if base is not None else cls.builtin()
        for source, table in src._entries.items():
            out.update(source, table)
        for source, table in data.items():
            parsed = SourceDataset.parse(source)
            # user entries override built-ins
            out._entries.setdefault(parsed, {}).update({_normalize(k): v for k, v in table.items()})
        return out


BUILTIN_MAP = DimensionMap.builtin()


def map_dimension(source: SourceDataset | str, name: str, dimension_map: DimensionMap | None = None) -> str:
    """Canonical dimension for a source dataset's dimension name.

    Raises :class:`UnmappedDimensionError` when the source name has no
    canonical equivalent.
    """
    return (dimension_map or BUILTIN_MAP).lookup(source, name)
