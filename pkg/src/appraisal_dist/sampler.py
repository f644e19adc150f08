"""Collect rating samples from a chat endpoint and search the sampling temperature."""

from __future__ import annotations

import hashlib
import logging
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .cache import NullCache, ResponseCache, fingerprint
from .dataset import RatingMultiset
from .distributions import RatingDistribution
from .endpoints import ChatEndpoint, ChatRequest, TransientEndpointError
from .errors import SamplingError
from .metrics import EvalReport, PredictionSet, evaluate
from .persona import PromptBundle

logger = logging.getLogger(__name__)

MAX_TEMPERATURE = 1.5
DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5)

_MARKER = re.compile(r"rating\s*[:=]\s*[\[\(\"'*\s]*(\d+(?:\.\d+)?)", re.IGNORECASE)
_LEADING = re.compile(r"^\W*(\d+(?:\.\d+)?)\b")


class RatingParseError(ValueError):
    pass


def _as_rating(token: str) -> int:
    value = float(token)
    if value != int(value) or not 1 <= value <= 5:
        raise RatingParseError(f"{token!r} is not a rating in 1..5")
    return int(value)


def parse_rating(reply: str) -> int:
    """Rating from a reply such as ``Rating: 4``.

    The first number after a case-insensitive ``Rating:`` marker wins; with no
    marker, a lone leading number is accepted. Anything else is an error.
    """
    m = _MARKER.search(reply)
    if m:
        return _as_rating(m.group(1))
    m = _LEADING.match(reply.strip())
    if m and not reply.strip()[m.end():].strip(" .!\n\t"):
        return _as_rating(m.group(1))
    raise RatingParseError(f"no rating found in {reply[:80]!r}")


@dataclass(frozen=True)
class SampleRequest:
    prompt: PromptBundle
    temperature: float
    n: int = 30
    model_name: str = "model"

    def __post_init__(self):
        if not 0 <= self.temperature <= MAX_TEMPERATURE:
            raise ValueError(f"temperature must be in [0, {MAX_TEMPERATURE}], got {self.temperature}")
        if self.n < 1:
            raise ValueError("n must be at least 1")

    def sample_fingerprint(self, index: int) -> str:
        return fingerprint(self.model_name, self.prompt.system, self.prompt.user, self.temperature, index)

    def fingerprints(self) -> list[str]:
        # temperature 0 is deterministic: one reply stands in for all n
        if self.temperature == 0:
            return [self.sample_fingerprint(0)] * self.n
        return [self.sample_fingerprint(i) for i in range(self.n)]


@dataclass
class SampleBatch:
    fingerprint: str
    raw_replies: list[str]
    parsed: list[int]
    failures: list[tuple[int, str, str]]
    sample_fingerprints: list[str] = field(default_factory=list, repr=False)

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / len(self.raw_replies) if self.raw_replies else 1.0

    def distribution(self) -> RatingDistribution:
        if not self.parsed:
            raise SamplingError(f"batch {self.fingerprint[:12]} has no parseable replies")
        return RatingDistribution.from_samples(self.parsed)


def _batch_fingerprint(fps: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(fps).encode()).hexdigest()


def _make_batch(replies: list[str], fps: list[str], parser: Callable[[str], object]) -> SampleBatch:
    parsed, failures = [], []
    for i, text in enumerate(replies):
        try:
            parsed.append(parser(text))
        except ValueError as exc:
            failures.append((i, text, str(exc)))
    return SampleBatch(_batch_fingerprint(fps), replies, parsed, failures, fps)


@dataclass
class SamplerSettings:
    max_tokens: int | None = 16
    stop: tuple[str, ...] | None = None
    attempts: int = 3
    backoff: float = 0.5
    max_failure_rate: float = 0.5
    workers: int = 4


class Sampler:
    """Cache-first request driver around a :class:`ChatEndpoint`."""

    def __init__(
        self,
        endpoint: ChatEndpoint | None,
        cache: ResponseCache | NullCache | None = None,
        settings: SamplerSettings | None = None,
        *,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.cache = cache if cache is not None else NullCache()
        self.settings = settings or SamplerSettings()
        self._sleep = sleep
        self.network_calls = 0
        self._count_lock = threading.Lock()

    def _live(self, req: SampleRequest, fp: str, index: int) -> str:
        if self.endpoint is None:
            raise TransientEndpointError("no endpoint configured and reply not cached")
        chat = ChatRequest(
            model=req.model_name,
            messages=req.prompt.messages(),
            temperature=req.temperature,
            max_tokens=self.settings.max_tokens,
            stop=self.settings.stop,
            seed=int(fp[:8], 16),
        )
        delay = self.settings.backoff
        for attempt in range(1, self.settings.attempts + 1):
            try:
                with self._count_lock:
                    self.network_calls += 1
                return self.endpoint.complete(chat)
            except TransientEndpointError as exc:
                if attempt == self.settings.attempts:
                    raise type(exc)(f"{exc} (after {attempt} attempts)") from exc
                logger.info("attempt %d failed (%s); retrying", attempt, exc)
                self._sleep(delay + random.uniform(0, delay))
                delay *= 2
        raise AssertionError("unreachable")

    def _fetch(self, job: tuple[SampleRequest, str, int]) -> str:
        req, fp, index = job
        text = self.cache.get(fp)
        if text is None:
            text = self._live(req, fp, index)
            self.cache.put(fp, text, model=req.model_name, temperature=req.temperature, sample_index=index)
        return text

    def fetch(self, requests: Sequence[SampleRequest]) -> list[list[str]]:
        """Raw replies per request, in request order."""
        jobs: list[tuple[SampleRequest, str, int]] = []
        spans = []
        seen: set[str] = set()
        for req in requests:
            fps = req.fingerprints()
            spans.append(fps)
            for i, fp in enumerate(fps):
                if fp not in seen:
                    seen.add(fp)
                    jobs.append((req, fp, i))
        if self.settings.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=self.settings.workers) as pool:
                texts = list(pool.map(self._fetch, jobs))
        else:
            texts = [self._fetch(j) for j in jobs]
        by_fp = {job[1]: t for job, t in zip(jobs, texts)}
        return [[by_fp[fp] for fp in fps] for fps in spans]

    def collect(self, req: SampleRequest, *, parser: Callable[[str], object] = parse_rating, check: bool = True) -> SampleBatch:
        return self.collect_merged([req], parser=parser, check=check)

    def collect_merged(
        self,
        requests: Sequence[SampleRequest],
        *,
        parser: Callable[[str], object] = parse_rating,
        check: bool = True,
    ) -> SampleBatch:
        """One batch from several requests, e.g. one situation under many personas."""
        return self.collect_items([list(requests)], parser=parser, check=check)[0]

    def collect_items(
        self,
        items: Sequence[Sequence[SampleRequest]],
        *,
        parser: Callable[[str], object] = parse_rating,
        check: bool = True,
    ) -> list[SampleBatch]:
        """Batches for many items, sharing one worker pool."""
        flat = [req for reqs in items for req in reqs]
        replies = self.fetch(flat)
        batches, pos = [], 0
        for reqs in items:
            texts, fps = [], []
            for req in reqs:
                texts.extend(replies[pos])
                fps.extend(req.fingerprints())
                pos += 1
            batch = _make_batch(texts, fps, parser)
            if check:
                self._check(batch)
            batches.append(batch)
        return batches

    def _check(self, batch: SampleBatch) -> None:
        if not batch.parsed:
            raise SamplingError(f"all {len(batch.raw_replies)} replies unparseable (batch {batch.fingerprint[:12]})")
        if batch.failure_rate > self.settings.max_failure_rate:
            examples = "; ".join(repr(f[1][:40]) for f in batch.failures[:3])
            raise SamplingError(
                f"{len(batch.failures)}/{len(batch.raw_replies)} replies unparseable "
                f"(batch {batch.fingerprint[:12]}), e.g. {examples}"
            )


@dataclass(frozen=True)
class DevItem:
    """One (situation, dimension) with the prompts to send and the human ratings."""

    situation_id: str
    dimension: str
    prompts: tuple[tuple[PromptBundle, int], ...]
    truth: RatingMultiset

    def requests(self, temperature: float, model_name: str) -> list[SampleRequest]:
        return [SampleRequest(p, temperature, n, model_name) for p, n in self.prompts]


def predict_items(
    sampler: Sampler,
    items: Sequence[DevItem],
    temperature: float,
    model_name: str,
) -> tuple[PredictionSet, list[SampleBatch]]:
    batches = sampler.collect_items([it.requests(temperature, model_name) for it in items])
    entries = {(it.situation_id, it.dimension): b.distribution() for it, b in zip(items, batches)}
    return PredictionSet(entries, "llm_samples", model_name), batches


@dataclass
class GridResult:
    best_temperature: float
    reports: dict[float, EvalReport]

    def rows(self) -> list[tuple[float, float, float, float]]:
        return [
            (t, r.aggregate.wasserstein, r.aggregate.mu_mae, r.aggregate.var_mae)
            for t, r in sorted(self.reports.items())
        ]

    def to_csv(self) -> str:
        lines = ["temperature,wasserstein,mu_mae,var_mae"]
        lines += [f"{t:.2f},{w:.6f},{m:.6f},{v:.6f}" for t, w, m, v in self.rows()]
        return "\n".join(lines) + "\n"


def select_temperature(reports: dict[float, EvalReport]) -> float:
    """Grid point with the lowest aggregate W1; ties go to the lower temperature."""
    return min(reports, key=lambda t: (reports[t].aggregate.wasserstein, t))


def grid_search_temperature(
    dev_items: Sequence[DevItem],
    sampler: Sampler,
    grid: Iterable[float] = DEFAULT_GRID,
    *,
    model_name: str = "model",
    workers: int = 1,
) -> GridResult:
    grid = sorted(set(float(t) for t in grid))
    if not grid:
        raise ValueError("temperature grid is empty")
    for t in grid:
        if not 0 <= t <= MAX_TEMPERATURE:
            raise ValueError(f"grid temperature {t} outside [0, {MAX_TEMPERATURE}]")
    truth = [it.truth for it in dev_items]
    reports = {}
    for t in grid:
        preds, _ = predict_items(sampler, dev_items, t, model_name)
        reports[t] = evaluate(preds, truth, workers=workers)
        logger.info("T=%.2f  W1=%.4f", t, reports[t].aggregate.wasserstein)
    return GridResult(select_temperature(reports), reports)
