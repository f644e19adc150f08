"""Annotator profiles and the four prompt variants built from them."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .errors import IncompleteProfileError

logger = logging.getLogger(__name__)

# (trait, high-pole item, low-pole item) in output order
TIPI_PAIRS: tuple[tuple[str, str, str], ...] = (
    ("openness", "open", "conventional"),
    ("conscientiousness", "dependable", "disorganized"),
    ("extraversion", "extraverted", "quiet"),
    ("agreeableness", "sympathetic", "critical"),
    ("emotional_stability", "calm", "anxious"),
)
TIPI_ITEMS: frozenset[str] = frozenset(item for _, a, b in TIPI_PAIRS for item in (a, b))
# spellings found in corpus exports
TIPI_ALIASES = {"extravert": "extraverted", "disorganised": "disorganized"}

DEMOGRAPHIC_FIELDS = ("age", "gender", "ethnicity", "education")
STATEMENTS_VERSION = "v1"


def _tipi_item(name: str) -> str:
    key = name.strip().lower()
    key = TIPI_ALIASES.get(key, key)
    if key not in TIPI_ITEMS:
        raise ValueError(f"unknown TIPI item {name!r}")
    return key


@dataclass(frozen=True)
class PersonaProfile:
    age: int | None = None
    gender: str | None = None
    ethnicity: str | None = None
    education: str | None = None
    tipi: Mapping[str, float] = field(default_factory=dict)
    # other profile columns (e.g. country, previous participation); usable for grouping
    extra: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        tipi = {}
        for name, value in dict(self.tipi).items():
            item = _tipi_item(name)
            value = float(value)
            if not 1 <= value <= 7:
                raise ValueError(f"TIPI rating for {item!r} must be in [1, 7], got {value}")
            tipi[item] = value
        object.__setattr__(self, "tipi", tipi)
        object.__setattr__(self, "extra", {str(k): str(v) for k, v in dict(self.extra).items()})
        if self.age is not None:
            object.__setattr__(self, "age", int(float(self.age)))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PersonaProfile":
        data = dict(data)
        tipi = dict(data.pop("tipi", None) or {})
        kwargs: dict[str, Any] = {}
        for key in DEMOGRAPHIC_FIELDS:
            value = data.pop(key, None)
            if value not in (None, ""):
                kwargs[key] = value
        extra = dict(data.pop("extra", None) or {})
        for key, value in data.items():
            if value in (None, ""):
                continue
            norm = TIPI_ALIASES.get(key.lower(), key.lower())
            if norm in TIPI_ITEMS:
                tipi[norm] = value
            else:
                extra[key] = value
        return cls(tipi=tipi, extra=extra, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {k: getattr(self, k) for k in DEMOGRAPHIC_FIELDS if getattr(self, k) is not None}
        if self.tipi:
            out["tipi"] = {k: self.tipi[k] for k in sorted(self.tipi)}
        if self.extra:
            out["extra"] = {k: self.extra[k] for k in sorted(self.extra)}
        return out

    def get(self, name: str) -> str | None:
        """Value of a grouping field: a demographic, an ``extra`` key, or a trait name.

        Trait names (``openness`` ...) resolve to the reduced TIPI descriptor.
        """
        if name in DEMOGRAPHIC_FIELDS:
            value = getattr(self, name)
            return None if value is None else str(value)
        if name == "origin" and "origin" not in self.extra:
            return self.ethnicity
        for trait, high, low in TIPI_PAIRS:
            if name == trait:
                return _pick(self.tipi, high, low)
        return self.extra.get(name)


def flatten_demographics(p: PersonaProfile) -> str:
    missing = [f for f in DEMOGRAPHIC_FIELDS if getattr(p, f) in (None, "")]
    if missing:
        raise IncompleteProfileError(f"profile lacks demographic field(s): {', '.join(missing)}")
    return (
        f"You are a {p.age} years old {p.ethnicity} {p.gender.lower()} "
        f'whose education level is "{p.education.lower()}".'
    )


def _pick(tipi: Mapping[str, float], high: str, low: str) -> str | None:
    if high not in tipi or low not in tipi or tipi[high] == tipi[low]:
        return None
    return high if tipi[high] > tipi[low] else low


def reduce_tipi(tipi: Mapping[str, float]) -> list[str]:
    """One descriptor per trait pair: the higher-rated item; ties and incomplete pairs are omitted."""
    tipi = {_tipi_item(k): float(v) for k, v in tipi.items()}
    return [d for _, high, low in TIPI_PAIRS if (d := _pick(tipi, high, low)) is not None]


def traits_sentence(descriptors: list[str]) -> str:
    if not descriptors:
        return ""
    return f"You are a {', '.join(descriptors)} person."


class Variant(str, Enum):
    VANILLA = "vanilla"
    DEMO = "demo"
    TRAITS = "traits"
    DEMO_TRAITS = "demo_traits"


_INSTRUCTION = (
    "Put yourself in the shoes of the writer at the time when the event happened, "
    "and try to reconstruct how that [Situation] was perceived. How much do these statements apply?"
)
SYSTEM_TEMPLATE = _INSTRUCTION + " (1 means “Not at all” and 5 means “Extremely”)"
RATING_FORMAT = 'Provide your rating in the following format: "Rating: [Score]".'
USER_TEMPLATE = (
    _INSTRUCTION
    + " Please rate the situation according to the statements using the Likert scale. "
    "The scale ranges from 1 to 5 where 1 means 'Not at all' and 5 means '“Extremely”'. "
    "{rating_format} Do not add any explanation or elaboration to your answer."
    "\n\n[Situation]\n{context}\n\n[Experiencer's Feeling]\n{statements}"
)


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str
    variant: Variant

    def messages(self) -> list[dict[str, str]]:
        return [{"role": "system", "content": self.system}, {"role": "user", "content": self.user}]


def _persona_prefix(profile: PersonaProfile | None, variant: Variant, fallback: bool) -> str:
    if variant is Variant.VANILLA:
        return ""
    if profile is None:
        if fallback:
            logger.warning("variant %s requested without a profile; using vanilla prompt", variant.value)
            return ""
        raise IncompleteProfileError(f"variant {variant.value!r} needs an annotator profile")
    parts = []
    if variant in (Variant.DEMO, Variant.DEMO_TRAITS):
        try:
            parts.append(flatten_demographics(profile))
        except IncompleteProfileError:
            if not fallback:
                raise
            logger.warning("incomplete demographics; dropping demographic sentence")
    if variant in (Variant.TRAITS, Variant.DEMO_TRAITS):
        sentence = traits_sentence(reduce_tipi(profile.tipi))
        if sentence:
            parts.append(sentence)
    return " ".join(parts)


def build_prompt(
    situation: str,
    statement: str,
    profile: PersonaProfile | None = None,
    variant: Variant | str = Variant.VANILLA,
    *,
    rating_format: str = RATING_FORMAT,
    fallback: bool = False,
) -> PromptBundle:
    """Fill the rating prompt for one (situation, dimension statement) pair.

    With ``fallback=True`` a missing or incomplete profile degrades to the
    vanilla text (with a logged warning) instead of raising.
    """
    variant = Variant(variant)
    prefix = _persona_prefix(profile, variant, fallback)
    lead = prefix + " " if prefix else ""
    user = USER_TEMPLATE.format(rating_format=rating_format, context=situation, statements=statement)
    return PromptBundle(system=lead + SYSTEM_TEMPLATE, user=lead + user, variant=variant)


def load_statements(path: str | Path | None = None, *, third_person: bool = False) -> dict[str, str]:
    """Statement text per dimension; ``path`` overrides the shipped resource."""
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        name = f"statements_third_person.{STATEMENTS_VERSION}.json" if third_person else f"statements.{STATEMENTS_VERSION}.json"
        text = resources.files("appraisal_dist.resources").joinpath(name).read_text(encoding="utf-8")
    data = json.loads(text)
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise ValueError("statement file must be a JSON object of dimension -> text")
    return data
