"""Divergence-aware candidate scoring and budgeted selection.

Teacher candidates are scored by the token-weighted fraction of their
sentences where the teacher's per-token likelihood exceeds the student's by
at least tau nats (sentences identifiable before any training, from two
models only). Selection keeps the highest-scoring candidates per question
under a global budget, with deterministic id-based tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .divergence import DEFAULT_TAU, teacher_gap


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredCandidate:
    response_id: str
    question_id: str
    das_score: float
    sentence_count: int
    token_count: int

    def __post_init__(self):
        if not 0.0 <= self.das_score <= 1.0:
            raise SelectionError(f"das_score {self.das_score} outside [0,1]")


def das_score(
    teacher_spans: Sequence[float],
    student_spans: Sequence[float],
    sentence_token_counts: Sequence[int],
    tau: float = DEFAULT_TAU,
) -> float:
    """Token-weighted fraction of sentences with teacher_gap >= tau.

    Token counts use the teacher's tokenization of the response, so longer
    sentences weigh proportionally more.
    """
    if not (len(teacher_spans) == len(student_spans) == len(sentence_token_counts)):
        raise SelectionError(
            f"per-sentence lists disagree in length: teacher {len(teacher_spans)}, "
            f"student {len(student_spans)}, token counts {len(sentence_token_counts)}"
        )
    if len(teacher_spans) == 0:
        raise SelectionError("cannot score a candidate with no sentences")
    total = 0
    hit = 0
    for lp_t, lp_s, n_tok in zip(teacher_spans, student_spans, sentence_token_counts):
        if n_tok <= 0:
            raise SelectionError(f"non-positive sentence token count {n_tok}")
        total += n_tok
        if teacher_gap(lp_t, lp_s) >= tau:
            hit += n_tok
    return hit / total


def select(
    candidates: Sequence[ScoredCandidate],
    budget: int,
    per_question_quota: int = 1,
) -> list[str]:
    """Pick up to ``budget`` response ids, at most ``per_question_quota`` per
    question, preferring higher scores with ties broken by ascending id.

    The result is sorted by response_id and is a pure function of its inputs.
    """
    if budget < 1:
        raise SelectionError(f"budget must be >= 1, got {budget}")
    if per_question_quota < 1:
        raise SelectionError(f"per_question_quota must be >= 1, got {per_question_quota}")
    if not candidates:
        return []

    by_question: dict[str, list[ScoredCandidate]] = {}
    for cand in candidates:
        by_question.setdefault(cand.question_id, []).append(cand)

    survivors: list[ScoredCandidate] = []
    for group in by_question.values():
        group = sorted(group, key=lambda c: (-c.das_score, c.response_id))
        survivors.extend(group[:per_question_quota])

    survivors.sort(key=lambda c: (-c.das_score, c.response_id))
    chosen = survivors[:budget]
    return sorted(c.response_id for c in chosen)
