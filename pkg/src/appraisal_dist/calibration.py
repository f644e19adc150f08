"""Post-hoc calibration of sampled LLM outputs into rating distributions.

* Avg-Conf: confidence-weighted normalization of (rating, confidence) pairs.
* Pair-Rank: a categorical distribution fitted to sampled rankings of the
  five ratings by maximizing the Plackett-Luce log-likelihood.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .distributions import N_POINTS, RatingDistribution

CONFIDENCE_FORMAT = (
    'Provide your rating in the following format: "Rating: [Score]" '
    "and your confidence between 0 and 1 in the format 'Confidence: [value]'."
)
RANKING_FORMAT = (
    "Rank all five ratings from most to least applicable in the following format: "
    '"Ranking: [Score], [Score], [Score], [Score], [Score]".'
)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ConfSample:
    rating: int
    confidence: float

    def __post_init__(self):
        if not 1 <= int(self.rating) <= 5:
            raise ValueError(f"rating {self.rating} outside 1..5")
        if not 0 <= float(self.confidence) <= 1:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class RankingSample:
    """A full ranking of the ratings 1..5, most preferred first."""

    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(r) for r in self.order)
        if sorted(order) != [1, 2, 3, 4, 5]:
            raise ValueError(f"ranking must be a permutation of 1..5, got {order}")
        object.__setattr__(self, "order", order)


def avg_conf(samples: Sequence[ConfSample]) -> RatingDistribution:
    if not samples:
        raise ValueError("avg_conf needs at least one sample")
    mass = np.zeros(N_POINTS)
    for s in samples:
        mass[s.rating - 1] += s.confidence
    total = mass.sum()
    if total <= 0:
        raise ValueError("all confidences are zero")
    return RatingDistribution(mass / total)


@dataclass
class PairRankFit:
    logits: npt.NDArray[np.float64]
    history: list[float] = field(repr=False)
    converged: bool = True

    @property
    def distribution(self) -> RatingDistribution:
        return RatingDistribution(_softmax(self.logits))

    @property
    def objective(self) -> float:
        return self.history[-1]


def _softmax(z: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    w = np.exp(z - z.max())
    return w / w.sum()


class _PLObjective:
    """Mean Plackett-Luce log-likelihood over a set of rankings and its gradient."""

    def __init__(self, rankings: Sequence[RankingSample]):
        orders = np.array([r.order for r in rankings], dtype=np.int64) - 1
        # duplicates are common; weight unique rankings by frequency
        self.orders, counts = np.unique(orders, axis=0, return_counts=True)
        self.weights = counts / counts.sum()
        u = len(self.orders)
        # remaining[j][u, k]: rating k not yet placed before position j in ranking u
        self.remaining = np.zeros((N_POINTS - 1, u, N_POINTS))
        for j in range(N_POINTS - 1):
            rows = np.repeat(np.arange(u), N_POINTS - j)
            self.remaining[j, rows, self.orders[:, j:].reshape(-1)] = 1.0
        # constant part of the gradient: how often each rating is chosen at positions 0..3
        self.chosen = np.zeros(N_POINTS)
        for j in range(N_POINTS - 1):
            np.add.at(self.chosen, self.orders[:, j], self.weights)

    def value_and_grad(self, theta: npt.NDArray[np.float64]) -> tuple[float, npt.NDArray[np.float64]]:
        shift = theta.max()
        e = np.exp(theta - shift)
        value = 0.0
        grad = self.chosen.copy()
        for j in range(N_POINTS - 1):
            mask = self.remaining[j]
            denom = mask @ e
            value += float(self.weights @ (theta[self.orders[:, j]] - shift - np.log(denom)))
            grad -= (self.weights / denom) @ (mask * e)
        return value, grad


def fit_plackett_luce(
    rankings: Sequence[RankingSample],
    steps: int = 500,
    learning_rate: float = 0.05,
    tol: float = 1e-8,
    init_logits: Sequence[float] | None = None,
) -> PairRankFit:
    """Full-batch gradient ascent on the mean ranking log-likelihood."""
    if not rankings:
        raise ValueError("pair_rank_fit needs at least one ranking")
    obj = _PLObjective(rankings)
    theta = np.zeros(N_POINTS) if init_logits is None else np.asarray(init_logits, dtype=float).copy()
    value, grad = obj.value_and_grad(theta)
    history = [value]
    for _ in range(steps):
        theta = theta + learning_rate * grad
        value, grad = obj.value_and_grad(theta)
        history.append(value)
    converged = len(history) < 2 or history[-1] - history[-2] <= tol
    if not converged:
        warnings.warn(
            f"Pair-Rank fit still improving after {steps} steps "
            f"(last delta {history[-1] - history[-2]:.3g} > {tol:g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return PairRankFit(theta, history, converged)


def pair_rank_fit(
    rankings: Sequence[RankingSample],
    steps: int = 500,
    learning_rate: float = 0.05,
    tol: float = 1e-8,
    init_logits: Sequence[float] | None = None,
) -> RatingDistribution:
    return fit_plackett_luce(rankings, steps, learning_rate, tol, init_logits).distribution


_RATING = re.compile(r"rating\s*[:=]\s*[\[\(\"'*\s]*([1-5])(?![\d.]\d)", re.IGNORECASE)
_CONF = re.compile(r"confidence\s*[:=]\s*[\[\(\"'*\s]*(\d*\.?\d+)\s*(%?)", re.IGNORECASE)
_RANKING = re.compile(r"ranking\s*[:=]\s*(.*)", re.IGNORECASE | re.DOTALL)


def parse_conf_sample(reply: str) -> ConfSample:
    """``Rating: 3 ... Confidence: 0.8`` (or ``80%``) -> ConfSample."""
    r = _RATING.search(reply)
    c = _CONF.search(reply)
    if not r or not c:
        raise ValueError(f"no rating/confidence pair in {reply[:80]!r}")
    conf = float(c.group(1))
    if c.group(2) == "%" or conf > 1:
        conf /= 100.0
    return ConfSample(int(r.group(1)), conf)


def parse_ranking(reply: str) -> RankingSample:
    """``Ranking: 3, 4, 2, 5, 1`` (any separators) -> RankingSample."""
    m = _RANKING.search(reply)
    body = m.group(1) if m else reply
    digits = [int(d) for d in re.findall(r"\d+", body)[:N_POINTS]]
    return RankingSample(tuple(digits))
