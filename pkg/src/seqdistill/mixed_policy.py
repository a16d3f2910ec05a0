"""Mixed-policy data construction for exposure-bias mitigation.

The trained student regenerates answers under a token cap of ``cap_factor``
times the reference response length; regenerations that hit the cap are the
cut-off set. Each cut-off response is truncated at a uniformly random token
index beyond half its length, the teacher continues from the truncation
point, and continuations that pass the quality gate become training examples
whose target is the student prefix plus the teacher continuation, with an
optional loss mask over the prefix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .filters import (
    FilterError,
    MarkerTable,
    RepetitionConfig,
    continuation_structure_check,
    repetition_filter,
)
from .gateway import GatewayError, GenerationRequest, TokenCounter, request_digest
from .mockmodel import philox_key
from .records import (
    MixedPolicyRecord,
    QuestionRecord,
    ResponseRecord,
    TrainingExampleRecord,
)

DEFAULT_CAP_FACTOR = 1.5
DEFAULT_BIN_EDGES = (0, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 65536, 262144)


class MixedPolicyError(ValueError):
    pass


@dataclass
class CutoffBin:
    length_lo: int
    length_hi: int
    total: int = 0
    cut_off: int = 0

    @property
    def ratio(self) -> float:
        return self.cut_off / self.total if self.total > 0 else 0.0


@dataclass
class CutoffTable:
    """Cut-off counts per reference-length bin (last bin closed on the right)."""

    bins: list[CutoffBin]

    def validate(self) -> None:
        for b in self.bins:
            if not 0 <= b.cut_off <= b.total:
                raise MixedPolicyError(
                    f"bin [{b.length_lo},{b.length_hi}) has cut_off {b.cut_off} > total {b.total}"
                )


def regenerate(
    questions: Sequence[QuestionRecord],
    teacher_lengths: Mapping[str, int],
    gateway,
    student_model_id: str,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    temperature: float = 1.0,
    top_p: float = 1.0,
    seed: int = 0,
    prompt_template: str = "{prompt}",
) -> tuple[list[ResponseRecord], list[tuple[str, str]]]:
    """Regenerate each question with the student under a per-question token cap
    of ceil(cap_factor * reference length).

    finish_reason == "length" marks a cut-off response. Gateway failures are
    collected per question and never abort the batch.
    """
    if cap_factor <= 1.0:
        raise MixedPolicyError(f"cap_factor must exceed 1, got {cap_factor}")
    records: list[ResponseRecord] = []
    errors: list[tuple[str, str]] = []
    for question in questions:
        ref_len = teacher_lengths.get(question.id)
        if ref_len is None or ref_len <= 0:
            errors.append((question.id, f"no positive reference length for {question.id!r}"))
            continue
        cap = math.ceil(cap_factor * ref_len)
        req = GenerationRequest(
            model_id=student_model_id,
            prompt=prompt_template.format(prompt=question.prompt),
            temperature=temperature,
            top_p=top_p,
            max_tokens=cap,
            n=1,
            seed=request_digest(seed, "regen", question.id) % (2**31),
        )
        try:
            record = gateway.sample(req)[0]
        except GatewayError as exc:
            errors.append((question.id, str(exc)))
            continue
        record.id = f"{question.id}-regen"
        record.question_id = question.id
        record.model_role = "student"
        records.append(record)
    return records, errors


def cutoff_rate(
    records: Sequence[ResponseRecord],
    teacher_lengths: Mapping[str, int],
    bin_edges: Sequence[int] = DEFAULT_BIN_EDGES,
) -> CutoffTable:
    """Fraction of cut-off regenerations per reference-length bin."""
    edges = list(bin_edges)
    if edges != sorted(edges) or len(set(edges)) != len(edges):
        raise MixedPolicyError("bin edges must be strictly ascending")
    if len(edges) < 2:
        raise MixedPolicyError("need at least two bin edges")
    bins = [CutoffBin(length_lo=lo, length_hi=hi) for lo, hi in zip(edges[:-1], edges[1:])]

    for record in records:
        length = teacher_lengths.get(record.question_id)
        if length is None:
            raise MixedPolicyError(f"record {record.id} has no reference length")
        idx = None
        for k, b in enumerate(bins):
            if b.length_lo <= length < b.length_hi or (
                k == len(bins) - 1 and length == b.length_hi
            ):
                idx = k
                break
        if idx is None:
            raise MixedPolicyError(
                f"record {record.id}: reference length {length} falls outside the bins"
            )
        bins[idx].total += 1
        if record.finish_reason == "length":
            bins[idx].cut_off += 1

    table = CutoffTable(bins=bins)
    table.validate()
    return table


def write_cutoff_csv(table: CutoffTable, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["length_lo", "length_hi", "total", "cut_off", "ratio"])
        for b in table.bins:
            writer.writerow([b.length_lo, b.length_hi, b.total, b.cut_off, repr(b.ratio)])


def cut_bounds(token_count: int) -> tuple[int, int]:
    """Inclusive [lo, hi] range of valid cut token indices for a response of
    ``token_count`` tokens: beyond half the length, before the last token ends."""
    if token_count < 2:
        raise MixedPolicyError(f"need at least 2 tokens to truncate, got {token_count}")
    return math.ceil(token_count / 2), token_count - 1


def draw_cut_index(token_count: int, rng: np.random.Generator) -> int:
    """Uniform draw over the valid cut range."""
    lo, hi = cut_bounds(token_count)
    return int(rng.integers(lo, hi + 1))


@dataclass
class ContinuationConfig:
    """Knobs for the teacher-continuation call and its quality gate."""

    teacher_model_id: str
    markers: MarkerTable
    counter: TokenCounter
    max_tokens: int = 65536
    continuation_max_tokens: int = 4096
    temperature: float = 1.0
    top_p: float = 1.0
    prompt_template: str = "{prompt}\n{prefix}"
    repetition: RepetitionConfig = field(default_factory=RepetitionConfig)


def truncate_and_continue(
    student_record: ResponseRecord,
    question: QuestionRecord,
    gateway,
    cfg: ContinuationConfig,
    seed: int,
    mask_prefix: bool = False,
) -> tuple[MixedPolicyRecord | None, str | None]:
    """Cut a cut-off student response and have the teacher finish it.

    Returns (record, None) on success or (None, rejection_reason). The cut
    token index is drawn uniformly from [ceil(L/2), L-1] in the student's own
    tokenization; the prefix runs to that token's character end. The
    continuation must contain a complete final answer, and prefix +
    continuation must pass the repetition and length gates.
    """
    if not student_record.tokens:
        return None, "missing_tokens"
    tokens = student_record.tokens
    if len(tokens) < 2:
        return None, "too_short"

    rng = np.random.Generator(np.random.Philox(key=philox_key(seed, "cut", student_record.id)))
    cut = draw_cut_index(len(tokens), rng)
    prefix = student_record.text[: tokens[cut].char_end]

    prompt = cfg.prompt_template.format(prompt=question.prompt, prefix=prefix)
    req = GenerationRequest(
        model_id=cfg.teacher_model_id,
        prompt=prompt,
        temperature=cfg.temperature,
        top_p=cfg.top_p,
        max_tokens=cfg.continuation_max_tokens,
        n=1,
        seed=request_digest(seed, "continue", student_record.id) % (2**31),
    )
    try:
        continuation = gateway.sample(req)[0]
    except GatewayError:
        return None, "transport"
    if not continuation.text:
        return None, "empty_continuation"

    verdict = continuation_structure_check(prefix, continuation.text, cfg.markers)
    if not verdict.kept:
        return None, verdict.reasons[0]
    try:
        verdict = repetition_filter(prefix + continuation.text, cfg.repetition)
    except FilterError:
        return None, "error"
    if not verdict.kept:
        return None, verdict.reasons[0]
    rendered = prompt + continuation.text
    if cfg.counter.count(rendered) > cfg.max_tokens:
        return None, "too_long"

    record = MixedPolicyRecord(
        question_id=question.id,
        student_prefix=prefix,
        teacher_continuation=continuation.text,
        boundary_char=len(prefix),
        cut_token_index=cut,
        mask_prefix=mask_prefix,
        source_student_response_id=student_record.id,
    )
    record.validate()
    return record, None


def emit_training_examples(
    records: Sequence[MixedPolicyRecord],
    mask: bool,
    questions: Mapping[str, QuestionRecord],
) -> list[TrainingExampleRecord]:
    """Render mixed-policy examples: target = prefix + continuation.

    With mask=True the prefix character range [0, boundary) is excluded from
    the loss; with mask=False the whole target trains.
    """
    examples = []
    for record in sorted(records, key=lambda r: r.source_student_response_id):
        record.validate()
        question = questions.get(record.question_id)
        if question is None:
            raise MixedPolicyError(
                f"mixed-policy record for unknown question {record.question_id!r}"
            )
        target = record.student_prefix + record.teacher_continuation
        if not 0 < record.boundary_char < len(target):
            raise MixedPolicyError(
                f"boundary {record.boundary_char} out of range for target of length {len(target)}"
            )
        examples.append(
            TrainingExampleRecord(
                response_id=f"{record.source_student_response_id}-mx",
                question_id=record.question_id,
                prompt=question.prompt,
                target=target,
                loss_mask=[[0, record.boundary_char]] if mask else None,
            )
        )
    return examples
