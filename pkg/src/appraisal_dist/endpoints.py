"""Chat-completion endpoints: an OpenAI-compatible HTTP client and an offline stub."""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np

from .errors import EndpointError, QuotaExhaustedError


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: Sequence[dict[str, str]]
    temperature: float
    max_tokens: int | None = None
    stop: Sequence[str] | None = None
    seed: int | None = None

    def payload(self) -> dict:
        body: dict = {"model": self.model, "messages": list(self.messages), "temperature": self.temperature, "n": 1}
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        if self.stop:
            body["stop"] = list(self.stop)
        if self.seed is not None:
            body["seed"] = self.seed
        return body


class ChatEndpoint(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class TransientEndpointError(EndpointError):
    """Worth retrying: timeouts, connection resets, 429 rate limits, 5xx."""


class OpenAIChatEndpoint:
    """POSTs to ``{base_url}/chat/completions``.

    The ``httpx.Client`` is shared across worker threads, which httpx supports.
    """

    def __init__(self, base_url: str, api_key: str | None = None, *, timeout: float = 60.0, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers

    @classmethod
    def from_env(cls, base_url_env: str = "OPENAI_BASE_URL", api_key_env: str = "OPENAI_API_KEY", **kwargs) -> "OpenAIChatEndpoint":
        base_url = os.environ.get(base_url_env)
        if not base_url:
            raise EndpointError(f"environment variable {base_url_env} is not set")
        return cls(base_url, os.environ.get(api_key_env), **kwargs)

    def complete(self, request: ChatRequest) -> str:
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=request.payload(), headers=self._headers)
        except httpx.TransportError as exc:
            raise TransientEndpointError(f"transport error: {exc}") from exc
        if resp.status_code == 429:
            if "insufficient_quota" in resp.text:
                raise QuotaExhaustedError(f"quota exhausted: {resp.text[:200]}")
            raise TransientEndpointError(f"rate limited (429): {resp.text[:200]}")
        if resp.status_code >= 500:
            raise TransientEndpointError(f"server error {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise EndpointError(f"request rejected ({resp.status_code}): {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed completion response: {resp.text[:200]}") from exc
        return content if isinstance(content, str) else ""

    def close(self) -> None:
        self._client.close()


def _unit_floats(text: str, k: int) -> np.ndarray:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.frombuffer(digest[: 4 * k], dtype="<u4") / 2.0**32


def hashed_utilities(prompt_text: str, scale: float = 3.0) -> np.ndarray:
    """Per-prompt rating utilities in [0, scale), fixed by a hash of the prompt."""
    return scale * _unit_floats(prompt_text, 5)


@dataclass
class BoltzmannStubEndpoint:
    """Offline endpoint replying ``Rating: r`` with r drawn from softmax(utility / T).

    The draw is seeded from the request seed, so replies depend only on the
    request content, never on call order or thread scheduling. At T = 0 the
    reply is the argmax rating.
    """

    utilities: Callable[[str], np.ndarray] = hashed_utilities
    template: str = "Rating: {rating}"
    calls: int = field(default=0, init=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def distribution(self, prompt_text: str, temperature: float) -> np.ndarray:
        u = np.asarray(self.utilities(prompt_text), dtype=float)
        if temperature <= 0:
            p = np.zeros(5)
            p[int(np.argmax(u))] = 1.0
            return p
        z = u / temperature
        w = np.exp(z - z.max())
        return w / w.sum()

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
        user = request.messages[-1]["content"]
        # utilities come from everything except the answer-format instruction,
        # so rating, confidence and ranking prompts share one preference
        context = [m["content"] for m in request.messages[:-1]] + [user.split("\n\n", 1)[-1]]
        p = self.distribution("\n".join(context), request.temperature)
        rng = np.random.default_rng(request.seed if request.seed is not None else 0)
        if "Ranking:" in user:
            # Plackett-Luce draw via Gumbel-perturbed log-probabilities
            with np.errstate(divide="ignore"):
                keys = np.log(p) + rng.gumbel(size=5)
            order = np.argsort(-keys, kind="stable") + 1
            return "Ranking: " + ", ".join(str(int(r)) for r in order)
        rating = int(rng.choice(5, p=p)) + 1
        reply = self.template.format(rating=rating)
        if "Confidence:" in user:
            reply += f" Confidence: {p[rating - 1]:.2f}"
        return reply
