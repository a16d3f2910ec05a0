"""Uniform client for sampling completions with per-token logprobs and for
teacher-forced scoring of given text.

Two backends implement the same call surface: an HTTP client speaking a
completion-style wire protocol (with an echo-scoring variant), and the
in-process mock model in :mod:`seqdistill.mockmodel`. Retries are bounded
(3 attempts, exponential backoff from 250 ms); idempotency across retries
relies on caller-supplied seeds.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

import requests

from .records import ResponseRecord, TokenSpan, validate_tiling

API_KEY_ENV = "SEQDISTILL_API_KEY"
DEFAULT_MAX_IN_FLIGHT = 8
DEFAULT_TIMEOUT_MS = 30000
MAX_ATTEMPTS = 3
BACKOFF_START_S = 0.25


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Backend unreachable or persistently failing after bounded retries."""


class CapabilityError(GatewayError):
    """Backend lacks a required capability (logprobs, echo scoring, tokenize)."""


class ProtocolError(GatewayError):
    """Backend returned a malformed or inconsistent reply."""


@dataclass(frozen=True)
class GenerationRequest:
    model_id: str
    prompt: str
    temperature: float
    max_tokens: int
    n: int = 1
    top_p: float = 1.0
    seed: int | None = None

    def validate(self) -> None:
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.temperature < 0:
            raise ValueError(f"temperature {self.temperature} is negative")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0,1]")


@dataclass(frozen=True)
class ScoringRequest:
    model_id: str
    prompt: str
    completion: str

    def validate(self) -> None:
        if not self.completion:
            raise ValueError("completion must be non-empty")


@dataclass(frozen=True)
class TokenCounter:
    """Counts tokens of a text under one model's tokenizer.

    ``exact`` is False for the whitespace fallback, which the hard length
    filter refuses unless explicitly forced.
    """

    model_id: str
    count: Callable[[str], int]
    exact: bool


def approximate_counter(model_id: str) -> TokenCounter:
    """Whitespace-delimited word counter, flagged approximate."""
    return TokenCounter(model_id=model_id, count=lambda text: len(text.split()), exact=False)


def request_digest(*parts: Any) -> int:
    """Stable 64-bit digest of request fields, for record ids and RNG keys."""
    joined = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:8], "big")


class HttpGateway:
    """Client for a completion-style HTTP backend exposing per-token logprobs.

    Endpoints (JSON bodies, UTF-8):
      POST {base}/v1/completions  {model, prompt, temperature, top_p,
                                   max_tokens, n, seed, logprobs: true}
      POST {base}/v1/score        {model, prompt, completion, logprobs: true}
      POST {base}/v1/tokenize     {model, text}

    Completion choices and score replies carry tokens as
    {text, logprob, char_start, char_end} tiling the generated/scored text.
    At most ``max_in_flight`` requests are outstanding at once.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_s = timeout_ms / 1000.0
        self._semaphore = threading.Semaphore(max_in_flight)
        self._session = session or requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(MAX_ATTEMPTS):
            if attempt > 0:
                time.sleep(BACKOFF_START_S * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    resp = self._session.post(
                        url, json=payload, headers=headers, timeout=self.timeout_s
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code in (404, 501):
                raise CapabilityError(
                    f"{url} returned {resp.status_code}: backend does not support this operation"
                )
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = ProtocolError(f"{url} returned {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned non-JSON body") from exc
        raise TransportError(
            f"{url} unreachable after {MAX_ATTEMPTS} attempts: {last_error}"
        ) from last_error

    @staticmethod
    def _parse_tokens(raw_tokens: Any, text: str, where: str) -> list[TokenSpan]:
        if raw_tokens is None:
            raise CapabilityError(
                f"{where}: backend returned no token logprobs; enable logprobs on the backend"
            )
        spans = []
        for tok in raw_tokens:
            if "logprob" not in tok or tok["logprob"] is None:
                raise CapabilityError(
                    f"{where}: token without logprob; enable logprobs on the backend"
                )
            spans.append(
                TokenSpan(
                    text=tok["text"],
                    logprob=float(tok["logprob"]),
                    char_start=int(tok["char_start"]),
                    char_end=int(tok["char_end"]),
                )
            )
        try:
            validate_tiling(spans, text)
        except ValueError as exc:
            raise ProtocolError(f"{where}: token offsets do not tile the text: {exc}") from exc
        return spans

    def sample(self, req: GenerationRequest) -> list[ResponseRecord]:
        req.validate()
        body = {
            "model": req.model_id,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
            "n": req.n,
            "seed": req.seed,
            "logprobs": True,
        }
        reply = self._post("/v1/completions", body)
        choices = reply.get("choices")
        if not isinstance(choices, list) or len(choices) != req.n:
            raise ProtocolError(
                f"/v1/completions returned {0 if not isinstance(choices, list) else len(choices)} "
                f"choices, expected {req.n}"
            )
        records = []
        digest = request_digest(req.model_id, req.prompt, req.temperature, req.top_p,
                                req.max_tokens, req.seed)
        for i, choice in enumerate(choices):
            text = choice["text"]
            tokens = self._parse_tokens(choice.get("tokens"), text, f"choice {i}")
            records.append(
                ResponseRecord(
                    id=f"{digest:016x}-{i:02d}",
                    question_id="",
                    model_id=req.model_id,
                    model_role="teacher",
                    temperature=req.temperature,
                    text=text,
                    finish_reason=choice["finish_reason"],
                    tokens=tokens,
                    provenance="sampled",
                )
            )
        return records

    def score(self, req: ScoringRequest) -> list[TokenSpan]:
        req.validate()
        body = {
            "model": req.model_id,
            "prompt": req.prompt,
            "completion": req.completion,
            "logprobs": True,
        }
        reply = self._post("/v1/score", body)
        return self._parse_tokens(reply.get("tokens"), req.completion, "score")

    def count_tokens(self, model_id: str, text: str) -> int:
        if text == "":
            return 0
        reply = self._post("/v1/tokenize", {"model": model_id, "text": text})
        count = reply.get("count")
        if not isinstance(count, int) or count < 0:
            raise ProtocolError(f"/v1/tokenize returned bad count {count!r}")
        return count

    def counter(self, model_id: str) -> TokenCounter:
        return TokenCounter(
            model_id=model_id, count=lambda text: self.count_tokens(model_id, text), exact=True
        )
