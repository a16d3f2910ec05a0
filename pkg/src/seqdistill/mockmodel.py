"""Deterministic mock backend: a fixed-vocabulary character-trigram model.

Each model is an explicit conditional table mapping a two-character context
(left-padded with ``^``, out-of-vocabulary characters also map to ``^``) to a
probability vector over single-character tokens plus an end-of-text symbol.
Sampling draws from a counter-based (Philox) stream keyed by the request, so
(seed, request) fully determines outputs regardless of call order or
concurrency. Recorded logprobs are always the base model's (temperature and
top-p shape the sampling distribution only), which keeps sample-time logprobs
identical to what teacher-forced re-scoring returns.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .gateway import (
    CapabilityError,
    GenerationRequest,
    ScoringRequest,
    TokenCounter,
    request_digest,
)
from .records import ResponseRecord, TokenSpan

EOT = "<eot>"
PAD = "^"


class MockModelError(ValueError):
    pass


def philox_key(*parts) -> int:
    """128-bit Philox key derived from request fields."""
    joined = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:16], "big")


@dataclass
class MockModel:
    """Character-trigram language model with an explicit conditional table."""

    model_id: str
    vocab: tuple[str, ...]
    table: dict[str, dict[str, float]] = field(repr=False)

    def __post_init__(self):
        if PAD in self.vocab:
            raise MockModelError(f"vocabulary must not contain the padding symbol {PAD!r}")
        for ch in self.vocab:
            if len(ch) != 1:
                raise MockModelError(f"vocabulary entries must be single characters, got {ch!r}")
        symbols = set(self.vocab) | {EOT}
        for ctx, probs in self.table.items():
            if len(ctx) != 2:
                raise MockModelError(f"context {ctx!r} is not two characters")
            total = sum(probs.values())
            if abs(total - 1.0) > 1e-9:
                raise MockModelError(f"conditional for context {ctx!r} sums to {total}")
            for sym, p in probs.items():
                if sym not in symbols:
                    raise MockModelError(f"context {ctx!r} emits unknown symbol {sym!r}")
                if p < 0:
                    raise MockModelError(f"negative probability {p} in context {ctx!r}")

    def context(self, text: str) -> str:
        """Last two characters of the text, out-of-vocabulary mapped to PAD."""
        tail = text[-2:] if len(text) >= 2 else text
        mapped = "".join(ch if ch in self.vocab else PAD for ch in tail)
        return mapped.rjust(2, PAD)

    def conditional(self, ctx: str) -> dict[str, float]:
        try:
            return self.table[ctx]
        except KeyError:
            raise MockModelError(
                f"model {self.model_id} has no conditional for context {ctx!r}"
            ) from None

    def _sampling_dist(
        self, probs: dict[str, float], temperature: float, top_p: float
    ) -> list[tuple[str, float]]:
        """Temperature- and nucleus-adjusted distribution in a fixed symbol order."""
        items = [(sym, p) for sym, p in sorted(probs.items()) if p > 0]
        if temperature == 0.0:
            best = max(items, key=lambda kv: (kv[1], kv[0]))
            return [(best[0], 1.0)]
        if temperature != 1.0:
            inv_t = 1.0 / temperature
            items = [(sym, p**inv_t) for sym, p in items]
            z = sum(p for _, p in items)
            items = [(sym, p / z) for sym, p in items]
        if top_p < 1.0:
            by_mass = sorted(items, key=lambda kv: (-kv[1], kv[0]))
            kept: list[tuple[str, float]] = []
            cum = 0.0
            for sym, p in by_mass:
                kept.append((sym, p))
                cum += p
                if cum >= top_p - 1e-12:
                    break
            z = sum(p for _, p in kept)
            items = sorted(((sym, p / z) for sym, p in kept), key=lambda kv: kv[0])
        return items

    def generate(
        self,
        prompt: str,
        max_tokens: int,
        temperature: float,
        top_p: float,
        rng: np.random.Generator,
    ) -> tuple[str, list[TokenSpan], str]:
        """Sample up to max_tokens characters; returns (text, spans, finish_reason)."""
        out: list[str] = []
        spans: list[TokenSpan] = []
        finish = "length"
        for step in range(max_tokens):
            ctx = self.context(prompt + "".join(out))
            probs = self.conditional(ctx)
            dist = self._sampling_dist(probs, temperature, top_p)
            u = rng.random()
            cum = 0.0
            sym = dist[-1][0]
            for cand, p in dist:
                cum += p
                if u < cum:
                    sym = cand
                    break
            if sym == EOT:
                finish = "stop"
                break
            spans.append(
                TokenSpan(text=sym, logprob=math.log(probs[sym]), char_start=step, char_end=step + 1)
            )
            out.append(sym)
        return "".join(out), spans, finish

    def score_text(self, prompt: str, completion: str) -> list[TokenSpan]:
        """Teacher-forced logprob of each completion character given prompt +
        preceding completion characters."""
        spans = []
        for i, ch in enumerate(completion):
            if ch not in self.vocab:
                raise MockModelError(
                    f"model {self.model_id} cannot score out-of-vocabulary character {ch!r} "
                    f"at offset {i}"
                )
            ctx = self.context(prompt + completion[:i])
            p = self.conditional(ctx).get(ch, 0.0)
            if p <= 0.0:
                raise MockModelError(
                    f"model {self.model_id} assigns zero probability to {ch!r} at offset {i}"
                )
            spans.append(TokenSpan(text=ch, logprob=math.log(p), char_start=i, char_end=i + 1))
        return spans


class MockGateway:
    """Gateway over named in-process mock models. Safe for concurrent use:
    everything is pure and every sampling stream is derived from the request."""

    def __init__(self, models: dict[str, MockModel]):
        self.models = dict(models)

    def model(self, model_id: str) -> MockModel:
        try:
            return self.models[model_id]
        except KeyError:
            raise CapabilityError(f"mock backend has no model {model_id!r}") from None

    def sample(self, req: GenerationRequest) -> list[ResponseRecord]:
        req.validate()
        model = self.model(req.model_id)
        digest = request_digest(
            req.model_id, req.prompt, req.temperature, req.top_p, req.max_tokens, req.seed
        )
        records = []
        for i in range(req.n):
            key = philox_key(
                req.model_id, req.prompt, req.temperature, req.top_p,
                req.max_tokens, req.seed, i,
            )
            rng = np.random.Generator(np.random.Philox(key=key))
            text, spans, finish = model.generate(
                req.prompt, req.max_tokens, req.temperature, req.top_p, rng
            )
            records.append(
                ResponseRecord(
                    id=f"{digest:016x}-{i:02d}",
                    question_id="",
                    model_id=req.model_id,
                    model_role="teacher",
                    temperature=req.temperature,
                    text=text,
                    finish_reason=finish,
                    tokens=spans,
                    provenance="sampled",
                )
            )
        return records

    def score(self, req: ScoringRequest) -> list[TokenSpan]:
        req.validate()
        return self.model(req.model_id).score_text(req.prompt, req.completion)

    def count_tokens(self, model_id: str, text: str) -> int:
        self.model(model_id)
        return len(text)

    def counter(self, model_id: str) -> TokenCounter:
        self.model(model_id)
        return TokenCounter(
            model_id=model_id, count=lambda text: self.count_tokens(model_id, text), exact=True
        )


# ---------------------------------------------------------------------------
# Table factories for pipeline-shaped mock models.
#
# The "structured" model emits text shaped like a channel-delimited response:
# an analysis segment in [ ... ] over one letter set, then a final segment in
# { ... } over another, with sentence punctuation inside each and a rare tool
# marker "!" inside the analysis. Every transition a structured model can
# emit is supported (with the same support set) by every other structured
# model over the same letters, so cross-model teacher-forced scoring never
# hits zero probability.
# ---------------------------------------------------------------------------

ANALYSIS_OPEN = "["
ANALYSIS_CLOSE = "]"
FINAL_OPEN = "{"
FINAL_CLOSE = "}"
TOOL_MARKER = "!"


def structured_model(
    model_id: str,
    seed: int,
    analysis_letters: str = "ab",
    final_letters: str = "xy",
    sentence_rate: float = 0.18,
    close_analysis_rate: float = 0.05,
    close_final_rate: float = 0.15,
    close_after_sentence_rate: float = 0.35,
    tool_rate: float = 0.01,
    letter_concentration: float = 0.8,
) -> MockModel:
    """Build a structured trigram model with letter preferences jittered by seed.

    Lower close rates make the model more long-winded; ``tool_rate`` is the
    per-step chance of emitting the tool-call marker inside the analysis;
    lower ``letter_concentration`` makes per-context letter preferences more
    extreme, widening disagreement between differently seeded models.
    """
    a_letters = tuple(analysis_letters)
    f_letters = tuple(final_letters)
    reserved = {ANALYSIS_OPEN, ANALYSIS_CLOSE, FINAL_OPEN, FINAL_CLOSE, TOOL_MARKER, ".", ";", " ", PAD}
    if set(a_letters) & set(f_letters) or reserved & (set(a_letters) | set(f_letters)):
        raise MockModelError("analysis and final letter sets must be disjoint and unreserved")
    vocab = (
        ANALYSIS_OPEN, ANALYSIS_CLOSE, FINAL_OPEN, FINAL_CLOSE,
        TOOL_MARKER, ".", ";", " ",
    ) + a_letters + f_letters
    charset = vocab + (PAD,)

    def letter_split(ctx: str, letters: tuple[str, ...], mass: float) -> dict[str, float]:
        rng = np.random.Generator(np.random.Philox(key=philox_key("letters", seed, ctx)))
        weights = rng.dirichlet([letter_concentration] * len(letters))
        # keep every letter scoreable by any same-shaped model
        floor = 0.02
        weights = (weights + floor) / (1.0 + floor * len(letters))
        return {ch: float(mass * w) for ch, w in zip(letters, weights)}

    table: dict[str, dict[str, float]] = {}
    for c1 in charset:
        for c2 in charset:
            ctx = c1 + c2
            if c2 == PAD:
                row = {ANALYSIS_OPEN: 1.0}
            elif c2 == ANALYSIS_OPEN or c2 == TOOL_MARKER:
                row = letter_split(ctx, a_letters, 1.0)
            elif c2 in a_letters:
                cont = 1.0 - sentence_rate - close_analysis_rate - tool_rate
                row = letter_split(ctx, a_letters, cont)
                row["."] = sentence_rate
                row[ANALYSIS_CLOSE] = close_analysis_rate
                row[TOOL_MARKER] = tool_rate
            elif c2 == "." or c2 == ";":
                row = {" ": 1.0}
            elif c2 == " ":
                if c1 == ";":
                    row = letter_split(ctx, f_letters, 1.0 - close_after_sentence_rate)
                    row[FINAL_CLOSE] = close_after_sentence_rate
                else:
                    row = letter_split(ctx, a_letters, 1.0 - close_after_sentence_rate)
                    row[ANALYSIS_CLOSE] = close_after_sentence_rate
            elif c2 == ANALYSIS_CLOSE:
                row = {FINAL_OPEN: 1.0}
            elif c2 == FINAL_OPEN:
                row = letter_split(ctx, f_letters, 1.0)
            elif c2 in f_letters:
                cont = 1.0 - sentence_rate - close_final_rate
                row = letter_split(ctx, f_letters, cont)
                row[";"] = sentence_rate
                row[FINAL_CLOSE] = close_final_rate
            elif c2 == FINAL_CLOSE:
                row = {EOT: 1.0}
            else:  # pragma: no cover - charset is closed
                raise MockModelError(f"unhandled context char {c2!r}")
            table[ctx] = row
    return MockModel(model_id=model_id, vocab=vocab, table=table)


def blend_model(model_id: str, a: MockModel, b: MockModel, weight: float) -> MockModel:
    """Geometric interpolation of two tables: p ∝ a^w * b^(1-w), renormalized.

    Mimics a model trained toward ``a`` starting from ``b``; shares the two
    parents' common support.
    """
    if a.vocab != b.vocab:
        raise MockModelError("blend parents must share a vocabulary")
    if not 0.0 <= weight <= 1.0:
        raise MockModelError(f"blend weight {weight} outside [0,1]")
    table: dict[str, dict[str, float]] = {}
    for ctx in a.table:
        if ctx not in b.table:
            raise MockModelError(f"blend parents disagree on context {ctx!r}")
        pa, pb = a.table[ctx], b.table[ctx]
        merged = {}
        for sym in sorted(set(pa) | set(pb)):
            p1, p2 = pa.get(sym, 0.0), pb.get(sym, 0.0)
            if p1 > 0 and p2 > 0:
                merged[sym] = (p1**weight) * (p2 ** (1.0 - weight))
        z = sum(merged.values())
        if z <= 0:
            raise MockModelError(f"blend has empty support for context {ctx!r}")
        table[ctx] = {sym: p / z for sym, p in merged.items()}
    return MockModel(model_id=model_id, vocab=a.vocab, table=table)
