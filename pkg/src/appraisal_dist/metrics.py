"""Scoring predicted rating distributions against human sample distributions."""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .dataset import RatingMultiset, iter_jsonl, write_jsonl
from .dimensions import sort_key
from .distributions import (
    SCALE,
    RatingDistribution,
    empirical_distribution,
    moments,
    rating_mean,
    sample_variance,
    wasserstein1,
)
from .errors import DataError, InsufficientRepeatsError, MissingPredictionError

Key = tuple[str, str]
PROVENANCES = ("llm_samples", "prediction_file", "baseline")
METRICS = ("wasserstein", "mu_mae", "var_mae")
METRIC_LABELS = {"wasserstein": "Wasserstein", "mu_mae": "μ-MAE", "var_mae": "σ²-MAE"}


def key_order(key: Key) -> tuple:
    return (key[0], sort_key(key[1]))


@dataclass
class PredictionSet:
    entries: dict[Key, RatingDistribution] = field(default_factory=dict)
    provenance: str = "prediction_file"
    # free-form tag such as the calibrator or baseline name
    source: str | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key: Key) -> RatingDistribution:
        return self.entries[key]

    def __contains__(self, key: Key) -> bool:
        return key in self.entries

    def keys(self) -> list[Key]:
        return sorted(self.entries, key=key_order)

    def to_rows(self) -> list[dict[str, Any]]:
        rows = []
        for sid, dim in self.keys():
            d = self.entries[(sid, dim)]
            row: dict[str, Any] = {"situation_id": sid, "dimension": dim}
            if d.counts is not None:
                row["samples"] = [int(r) for r, c in zip(SCALE, d.counts) for _ in range(int(c))]
            else:
                row["pmf"] = d.to_list()
            row["provenance"] = self.provenance
            if self.source:
                row["source"] = self.source
            rows.append(row)
        return rows

    def write(self, path: str | Path) -> None:
        write_jsonl(path, self.to_rows())

    @classmethod
    def read(cls, path: str | Path, provenance: str | None = None) -> "PredictionSet":
        """Read ``{situation_id, dimension, pmf}`` or ``{..., samples}`` rows."""
        entries: dict[Key, RatingDistribution] = {}
        seen_prov: set[str] = set()
        sources: set[str] = set()
        for i, row in enumerate(iter_jsonl(path), start=1):
            try:
                key = (str(row["situation_id"]), str(row["dimension"]))
                if "samples" in row:
                    dist = RatingDistribution.from_samples(row["samples"])
                elif "pmf" in row:
                    dist = RatingDistribution(np.asarray(row["pmf"], dtype=float))
                else:
                    raise ValueError("row needs 'pmf' or 'samples'")
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{i}: invalid prediction row: {exc}") from exc
            if key in entries:
                raise DataError(f"{path}:{i}: duplicate prediction for {key}")
            entries[key] = dist
            if "provenance" in row:
                seen_prov.add(row["provenance"])
            if row.get("source"):
                sources.add(row["source"])
        if provenance is None:
            provenance = seen_prov.pop() if len(seen_prov) == 1 else "prediction_file"
        return cls(entries, provenance, sources.pop() if len(sources) == 1 else None)


@dataclass(frozen=True)
class ItemScore:
    situation_id: str
    dimension: str
    wasserstein: float
    mu_mae: float
    # None when the human multiset has a single rating
    var_mae: float | None


@dataclass(frozen=True)
class Scores:
    wasserstein: float
    mu_mae: float
    var_mae: float
    n_items: int
    n_var_skipped: int = 0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.wasserstein, self.mu_mae, self.var_mae)

    def to_dict(self) -> dict[str, Any]:
        return {
            "wasserstein": self.wasserstein,
            "mu_mae": self.mu_mae,
            "var_mae": self.var_mae,
            "n_items": self.n_items,
            "n_var_skipped": self.n_var_skipped,
        }


@dataclass
class EvalReport:
    per_dimension: dict[str, Scores]
    aggregate: Scores
    n_items: int
    weighting: str = "unweighted"
    items: list[ItemScore] = field(default_factory=list, repr=False)

    @property
    def n_var_skipped(self) -> int:
        return self.aggregate.n_var_skipped

    def metric_vector(self, metric: str) -> list[float]:
        """Per-dimension values of one metric, in canonical dimension order."""
        return [getattr(self.per_dimension[d], metric) for d in self.per_dimension]

    def to_dict(self) -> dict[str, Any]:
        return {
            "aggregate": self.aggregate.to_dict(),
            "per_dimension": {d: s.to_dict() for d, s in self.per_dimension.items()},
            "n_items": self.n_items,
            "weighting": self.weighting,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalReport":
        per_dim = {d: Scores(**s) for d, s in data["per_dimension"].items()}
        return cls(per_dim, Scores(**data["aggregate"]), int(data["n_items"]), data.get("weighting", "unweighted"))

    def to_table(self) -> str:
        """Aligned text table: one row per dimension plus the average."""
        rows = [(d, s) for d, s in self.per_dimension.items()] + [("Average", self.aggregate)]
        width = max(len("Dimension"), *(len(d) for d, _ in rows))
        head = f"{'Dimension':<{width}}  " + "  ".join(f"{METRIC_LABELS[m]:>11}" for m in METRICS)
        lines = [head, "-" * len(head)]
        for name, s in rows:
            if name == "Average":
                lines.append("-" * len(head))
            lines.append(f"{name:<{width}}  " + "  ".join(f"{getattr(s, m):>11.3f}" for m in METRICS))
        return "\n".join(lines) + "\n"


def format_results_table(reports: Mapping[str, EvalReport]) -> str:
    """Models as rows, the three aggregate metrics as columns."""
    width = max(len("Models"), *(len(n) for n in reports))
    head = f"{'Models':<{width}}  " + "  ".join(f"{METRIC_LABELS[m]:>11}" for m in METRICS)
    lines = [head, "-" * len(head)]
    for name, rep in reports.items():
        lines.append(f"{name:<{width}}  " + "  ".join(f"{getattr(rep.aggregate, m):>11.3f}" for m in METRICS))
    return "\n".join(lines) + "\n"


def _predicted_variance(pred: RatingDistribution, mode: str) -> float:
    if mode == "auto" and pred.counts is not None and pred.n_samples >= 2:
        return sample_variance(pred)
    return moments(pred)[1]


def score_item(pred: RatingDistribution, truth: RatingMultiset, variance: str = "auto") -> ItemScore:
    """Per-item W1, |mean error| and |variance error|.

    ``variance="auto"`` compares count-backed predictions (sampled ratings)
    with the same unbiased estimator used for the human side; pmf-only
    predictions always use the population variance of the pmf.
    """
    human = empirical_distribution(truth)
    w = wasserstein1(pred, human)
    mu = abs(moments(pred)[0] - rating_mean(truth))
    var = None
    if len(truth.ratings) >= 2:
        var = abs(_predicted_variance(pred, variance) - sample_variance(truth))
    return ItemScore(truth.situation_id, truth.dimension, w, mu, var)


def _mean(values: Sequence[float]) -> float:
    # fsum is exactly rounded, so the result does not depend on item order
    return math.fsum(values) / len(values)


def _summarize(items: Sequence[ItemScore]) -> Scores:
    var = [s.var_mae for s in items if s.var_mae is not None]
    if not var:
        raise InsufficientRepeatsError(
            f"dimension {items[0].dimension!r}: no item has two or more ratings for variance scoring"
        )
    return Scores(
        _mean([s.wasserstein for s in items]),
        _mean([s.mu_mae for s in items]),
        _mean(var),
        len(items),
        len(items) - len(var),
    )


def summarize(items: Sequence[ItemScore], weighting: str = "unweighted") -> EvalReport:
    if weighting not in ("unweighted", "item"):
        raise ValueError(f"weighting must be 'unweighted' or 'item', got {weighting!r}")
    if not items:
        raise DataError("nothing to evaluate")
    by_dim: dict[str, list[ItemScore]] = {}
    for s in items:
        by_dim.setdefault(s.dimension, []).append(s)
    per_dim = {d: _summarize(by_dim[d]) for d in sorted(by_dim, key=sort_key)}
    skipped = sum(s.n_var_skipped for s in per_dim.values())
    if weighting == "unweighted":
        dims = list(per_dim.values())
        agg = Scores(
            _mean([s.wasserstein for s in dims]),
            _mean([s.mu_mae for s in dims]),
            _mean([s.var_mae for s in dims]),
            len(items),
            skipped,
        )
    else:
        agg = _summarize(items)
    ordered = sorted(items, key=lambda s: key_order((s.situation_id, s.dimension)))
    return EvalReport(per_dim, agg, len(items), weighting, ordered)


def evaluate(
    preds: PredictionSet | Mapping[Key, RatingDistribution],
    truth: Iterable[RatingMultiset],
    *,
    weighting: str = "unweighted",
    variance: str = "auto",
    workers: int = 1,
) -> EvalReport:
    """Score predictions against human multisets.

    Per-dimension values are item means; the aggregate is the unweighted mean
    over dimensions (``weighting="item"`` pools all items instead).
    """
    entries = preds.entries if isinstance(preds, PredictionSet) else preds
    truth = list(truth)
    for m in truth:
        if (m.situation_id, m.dimension) not in entries:
            raise MissingPredictionError(f"no prediction for situation {m.situation_id!r}, dimension {m.dimension!r}")

    def one(m: RatingMultiset) -> ItemScore:
        return score_item(entries[(m.situation_id, m.dimension)], m, variance)

    if workers > 1 and len(truth) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            items = list(pool.map(one, truth))
    else:
        items = [one(m) for m in truth]
    return summarize(items, weighting)


def random_baseline(truth_keys: Iterable[Key], n_samples: int = 30, seed: int = 0) -> PredictionSet:
    """Each key gets the empirical distribution of ``n_samples`` uniform draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    keys = sorted(set(truth_keys), key=key_order)
    rng = np.random.default_rng(seed)
    entries = {}
    for key in keys:
        draws = rng.integers(1, 6, size=n_samples)
        entries[key] = RatingDistribution.from_counts(np.bincount(draws, minlength=6)[1:])
    return PredictionSet(entries, "baseline", "random")


@dataclass(frozen=True)
class MajorityBaseline:
    """Per-dimension modal training rating, applied to every test item."""

    modes: dict[str, int]

    def predict(self, keys: Iterable[Key]) -> PredictionSet:
        entries = {}
        for sid, dim in keys:
            if dim not in self.modes:
                raise DataError(f"dimension {dim!r} absent from majority training data")
            entries[(sid, dim)] = RatingDistribution.point_mass(self.modes[dim])
        return PredictionSet(entries, "baseline", "majority")


def majority_baseline(train: Iterable[RatingMultiset]) -> MajorityBaseline:
    counts: dict[str, Counter[int]] = {}
    for m in train:
        counts.setdefault(m.dimension, Counter()).update(m.ratings)
    if not counts:
        raise DataError("majority baseline needs training data")
    # max over (count, -rating) breaks ties toward the smaller rating
    modes = {d: max(c, key=lambda r: (c[r], -r)) for d, c in counts.items()}
    return MajorityBaseline({d: modes[d] for d in sorted(modes, key=sort_key)})
