"""Discrete distributions over the 5-point rating scale.

Everything here works on a fixed support ``1..5`` with unit spacing, which
is what makes the closed-form Wasserstein-1 (sum of absolute CDF gaps) valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from .errors import InsufficientRepeatsError

SCALE = np.arange(1, 6)
N_POINTS = 5
PMF_TOL = 1e-9


def _ratings_of(m) -> Sequence[int]:
    return m.ratings if hasattr(m, "ratings") else m


def histogram(ratings: Iterable[int]) -> npt.NDArray[np.int64]:
    counts = np.zeros(N_POINTS, dtype=np.int64)
    for r in ratings:
        r = int(r)
        if not 1 <= r <= 5:
            raise ValueError(f"rating {r} outside 1..5")
        counts[r - 1] += 1
    return counts


@dataclass(frozen=True, eq=False)
class RatingDistribution:
    """A pmf over ratings 1..5.

    Distributions built from observed ratings keep their integer ``counts`` so
    the moments can be computed exactly; pmf-only distributions (smoothed
    targets, calibrator output, model files) have ``counts=None``.
    """

    pmf: npt.NDArray[np.float64]
    counts: npt.NDArray[np.int64] | None = field(default=None)

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64).reshape(-1).copy()
        if pmf.shape != (N_POINTS,):
            raise ValueError(f"pmf must have {N_POINTS} entries, got {pmf.shape[0]}")
        if not np.all(np.isfinite(pmf)) or np.any(pmf < 0):
            raise ValueError(f"pmf entries must be finite and non-negative: {pmf}")
        if abs(pmf.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"pmf must sum to 1 (got {pmf.sum():.12g})")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        if self.counts is not None:
            counts = np.asarray(self.counts, dtype=np.int64).reshape(-1).copy()
            if counts.shape != (N_POINTS,) or np.any(counts < 0) or counts.sum() < 1:
                raise ValueError(f"invalid counts {counts}")
            counts.setflags(write=False)
            object.__setattr__(self, "counts", counts)

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "RatingDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        if total < 1:
            raise ValueError("histogram is empty")
        return cls(counts / total, counts)

    @classmethod
    def from_samples(cls, ratings: Iterable[int]) -> "RatingDistribution":
        return cls.from_counts(histogram(ratings))

    @classmethod
    def point_mass(cls, rating: int) -> "RatingDistribution":
        pmf = np.zeros(N_POINTS)
        pmf[int(rating) - 1] = 1.0
        return cls(pmf)

    @classmethod
    def uniform(cls) -> "RatingDistribution":
        return cls(np.full(N_POINTS, 1.0 / N_POINTS))

    @property
    def n_samples(self) -> int | None:
        return None if self.counts is None else int(self.counts.sum())

    def cdf(self) -> npt.NDArray[np.float64]:
        return np.cumsum(self.pmf)

    def to_list(self) -> list[float]:
        return [float(x) for x in self.pmf]

    def __array__(self, dtype=None, copy=None):
        return self.pmf if dtype is None else self.pmf.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RatingDistribution):
            return NotImplemented
        return bool(np.array_equal(self.pmf, other.pmf))

    def __repr__(self) -> str:
        return "RatingDistribution(" + ", ".join(f"{x:.3f}" for x in self.pmf) + ")"


def as_pmf(d) -> npt.NDArray[np.float64]:
    return d.pmf if isinstance(d, RatingDistribution) else np.asarray(d, dtype=np.float64)


def empirical_distribution(m) -> RatingDistribution:
    """Relative frequencies of a rating multiset (or any iterable of ratings)."""
    ratings = list(_ratings_of(m))
    if not ratings:
        raise ValueError("cannot build a distribution from an empty multiset")
    return RatingDistribution.from_samples(ratings)


def _count_sums(counts: npt.NDArray[np.int64]) -> tuple[int, int, int]:
    n = int(counts.sum())
    s1 = int(np.dot(counts, SCALE))
    s2 = int(np.dot(counts, SCALE * SCALE))
    return n, s1, s2


def moments(d) -> tuple[float, float]:
    """Mean and population variance of a distribution.

    For count-backed distributions both are computed in exact rational
    arithmetic, so the mean equals the arithmetic mean of the ratings.
    """
    if isinstance(d, RatingDistribution) and d.counts is not None:
        n, s1, s2 = _count_sums(d.counts)
        return float(Fraction(s1, n)), float(Fraction(n * s2 - s1 * s1, n * n))
    pmf = as_pmf(d)
    mean = float(np.dot(SCALE, pmf))
    var = float(np.dot((SCALE - mean) ** 2, pmf))
    return mean, max(var, 0.0)


def rating_mean(m) -> float:
    ratings = [int(r) for r in _ratings_of(m)]
    if not ratings:
        raise ValueError("empty multiset")
    return float(Fraction(sum(ratings), len(ratings)))


def _unbiased_from_counts(counts) -> float:
    n, s1, s2 = _count_sums(np.asarray(counts))
    if n < 2:
        raise InsufficientRepeatsError(f"sample variance needs at least 2 ratings, got {n}")
    return float(Fraction(n * s2 - s1 * s1, n * (n - 1)))


def sample_variance(m) -> float:
    """Unbiased (n - 1) variance of repeated ratings."""
    if isinstance(m, RatingDistribution):
        if m.counts is None:
            raise InsufficientRepeatsError("distribution carries no sample counts")
        return _unbiased_from_counts(m.counts)
    return _unbiased_from_counts(histogram(_ratings_of(m)))


def wasserstein1(p, q) -> float:
    """W1 on the unit-spaced 5-point support: sum of |F_p(k) - F_q(k)|, k=1..4."""
    diff = np.cumsum(as_pmf(p) - as_pmf(q))[:-1]
    return float(np.abs(diff).sum())


def modality(h: Sequence[int], rule: str = "plateau") -> int:
    """Number of modes of a rating histogram, in ``1..5``.

    ``rule="plateau"``: count local maxima, where a run of equal positive
    counts whose neighbours are strictly lower (or off the scale) is one
    mode; an all-equal histogram is uniform and reported as 5.

    ``rule="multimode"``: number of ratings that attain the maximum count.
    With five annotators this can only be 1, 2 or 5.
    """
    counts = [int(c) for c in h]
    if len(counts) != N_POINTS or min(counts) < 0 or sum(counts) < 1:
        raise ValueError(f"invalid histogram {counts}")
    if rule == "multimode":
        return counts.count(max(counts))
    if rule != "plateau":
        raise ValueError(f"unknown modality rule {rule!r}")
    if len(set(counts)) == 1:
        return N_POINTS
    modes = 0
    i = 0
    while i < N_POINTS:
        j = i
        while j + 1 < N_POINTS and counts[j + 1] == counts[i]:
            j += 1
        left = counts[i - 1] if i > 0 else -1
        right = counts[j + 1] if j + 1 < N_POINTS else -1
        if counts[i] > 0 and counts[i] > left and counts[i] > right:
            modes += 1
        i = j + 1
    return modes


def modality_census(multisets, rule: str = "plateau") -> dict[str, list[int]]:
    """Per-dimension counts of items with 1..5 modes (index 0 is unimodal)."""
    from .dimensions import sort_key

    census: dict[str, list[int]] = {}
    for m in multisets:
        row = census.setdefault(m.dimension, [0] * N_POINTS)
        row[modality(histogram(m.ratings), rule=rule) - 1] += 1
    return {d: census[d] for d in sorted(census, key=sort_key)}


def smooth_unimodal(center: int, sigma: float = 1.0) -> RatingDistribution:
    """Discretized Gaussian over 1..5 centred on ``center``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 1 <= int(center) <= 5:
        raise ValueError(f"center {center} outside 1..5")
    z = -((SCALE - int(center)) ** 2) / (2.0 * float(sigma) ** 2)
    w = np.exp(z - z.max())
    return RatingDistribution(w / w.sum())


def non_adjacent(center: int) -> list[int]:
    return [r for r in range(1, 6) if abs(r - int(center)) >= 2]


def smooth_bimodal(center: int, second: int, sigma: float = 1.0, w: float = 0.7) -> RatingDistribution:
    """Mixture ``w * G(center) + (1 - w) * G(second)`` of discretized Gaussians."""
    if abs(int(second) - int(center)) < 2:
        valid = [str(r) for r in non_adjacent(center)]
        raise ValueError(f"modes adjacent or equal: second mode for {center} must be one of {valid}, got {second}")
    if not 0 < w < 1:
        raise ValueError(f"mixture weight must be in (0, 1), got {w}")
    mix = w * smooth_unimodal(center, sigma).pmf + (1 - w) * smooth_unimodal(second, sigma).pmf
    return RatingDistribution(mix / mix.sum())


def smoothed_target(
    rating: int,
    kind: str = "unimodal",
    sigma: float = 1.0,
    w: float = 0.7,
    rng: np.random.Generator | None = None,
) -> RatingDistribution:
    """Soft training target for a single ground-truth rating.

    The bimodal second mode is drawn uniformly from the non-adjacent ratings.
    """
    if kind == "unimodal":
        return smooth_unimodal(rating, sigma)
    if kind != "bimodal":
        raise ValueError(f"unknown smoothing kind {kind!r}")
    if rng is None:
        raise ValueError("bimodal targets need a random generator for the second mode")
    second = int(rng.choice(non_adjacent(rating)))
    return smooth_bimodal(rating, second, sigma, w)
