"""Four-way sentence source-type classification and position-wise correctness
analytics.

A sentence is labeled from the per-token mean logprobs the teacher, student,
and distilled models assign to it. "Much more likely" is operationalized as a
gap of ``tau`` nats per token (default ln 2: a 2x ratio of per-token
geometric-mean probabilities). The decision rule depends only on differences
of logprobs, so it is invariant under a common additive shift.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_TAU = math.log(2.0)
DEFAULT_MAX_POSITION = 10


class DivergenceError(ValueError):
    pass


class SentenceType(str, Enum):
    TEACHER = "Teacher"
    STUDENT = "Student"
    SHARED = "Shared"
    BOOSTED = "Boosted"


SENTENCE_TYPES = tuple(SentenceType)


@dataclass(frozen=True)
class SentenceTriple:
    """Per-sentence mean logprobs (nats/token) under the three models."""

    sentence_index: int
    mean_lp_teacher: float
    mean_lp_student: float
    mean_lp_distilled: float | None = None


@dataclass
class PositionProfile:
    """Fractions of each sentence type at one 1-based sentence position,
    split by answer correctness. Fractions are None when support is zero."""

    position: int
    fraction_correct: dict[SentenceType, float] | None
    fraction_incorrect: dict[SentenceType, float] | None
    support_correct: int
    support_incorrect: int


def teacher_gap(mean_lp_teacher: float, mean_lp_student: float) -> float:
    """Teacher-minus-student mean logprob, in nats per token."""
    return mean_lp_teacher - mean_lp_student


def classify_sentence(triple: SentenceTriple, tau: float = DEFAULT_TAU) -> SentenceType:
    """Assign exactly one source type to a sentence.

    Rule order: a teacher-student gap of at least tau decides Teacher/Student;
    otherwise a distilled logprob at least tau away from both parents is
    Boosted; everything else is Shared.
    """
    if triple.mean_lp_distilled is None:
        raise DivergenceError(
            "classification requires the distilled model's logprob; "
            "score the sentence under all three models first"
        )
    if tau <= 0:
        raise DivergenceError(f"tau must be positive, got {tau}")
    lp_t = triple.mean_lp_teacher
    lp_s = triple.mean_lp_student
    lp_d = triple.mean_lp_distilled
    gap = teacher_gap(lp_t, lp_s)
    if gap >= tau:
        return SentenceType.TEACHER
    if gap <= -tau:
        return SentenceType.STUDENT
    if min(abs(lp_d - lp_t), abs(lp_d - lp_s)) >= tau:
        return SentenceType.BOOSTED
    return SentenceType.SHARED


def positionwise_profile(
    labeled_responses: Iterable[tuple[Sequence[SentenceType], bool]],
    max_position: int = DEFAULT_MAX_POSITION,
) -> list[PositionProfile]:
    """Per-position fractions of each sentence type among correct and
    incorrect responses.

    Position k counts only responses with at least k sentences; zero-support
    sides report fractions as None. Fractions are sentence-count based: every
    response contributes equally at each position it reaches (the alternative,
    weighting responses by sentence token counts, is deliberately not used so
    the profile stays comparable across tokenizers).
    """
    responses = list(labeled_responses)
    profiles = []
    for pos in range(1, max_position + 1):
        counts = {
            True: {t: 0 for t in SENTENCE_TYPES},
            False: {t: 0 for t in SENTENCE_TYPES},
        }
        support = {True: 0, False: 0}
        for labels, is_correct in responses:
            if len(labels) >= pos:
                support[is_correct] += 1
                counts[is_correct][SentenceType(labels[pos - 1])] += 1

        def fractions(side: bool) -> dict[SentenceType, float] | None:
            if support[side] == 0:
                return None
            return {t: counts[side][t] / support[side] for t in SENTENCE_TYPES}

        profiles.append(
            PositionProfile(
                position=pos,
                fraction_correct=fractions(True),
                fraction_incorrect=fractions(False),
                support_correct=support[True],
                support_incorrect=support[False],
            )
        )
    return profiles


def delta_area(
    profiles: Sequence[PositionProfile],
    sentence_type: SentenceType,
    max_position: int,
) -> float:
    """Discrete area between the correct and incorrect fraction curves of one
    sentence type over positions 1..max_position (unit spacing)."""
    by_position = {p.position: p for p in profiles}
    total = 0.0
    for pos in range(1, max_position + 1):
        prof = by_position.get(pos)
        if prof is None:
            raise DivergenceError(f"no profile for position {pos}")
        if prof.fraction_correct is None or prof.fraction_incorrect is None:
            raise DivergenceError(
                f"zero support at position {pos}; lower max_position so every "
                "counted position has both correct and incorrect responses"
            )
        total += prof.fraction_correct[sentence_type] - prof.fraction_incorrect[sentence_type]
    return total


def boxed_answer_correct(text: str, reference: str) -> bool:
    """True iff the last \\boxed{...} expression matches the reference after
    whitespace normalization. No boxed expression means incorrect."""
    content = _last_boxed(text)
    if content is None:
        return False
    return _norm_ws(content) == _norm_ws(reference)


def _norm_ws(s: str) -> str:
    return " ".join(s.split())


def _last_boxed(text: str) -> str | None:
    marker = "\\boxed{"
    start = text.rfind(marker)
    while start != -1:
        depth = 1
        i = start + len(marker)
        while i < len(text) and depth > 0:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            return text[start + len(marker) : i - 1]
        start = text.rfind(marker, 0, start)
    return None


def write_profile_csv(profiles: Sequence[PositionProfile], path: str | Path) -> None:
    """Profile export: position, type, side, fraction, support."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["position", "type", "side", "fraction", "support"])
        for prof in profiles:
            for side, fracs, support in (
                ("correct", prof.fraction_correct, prof.support_correct),
                ("incorrect", prof.fraction_incorrect, prof.support_incorrect),
            ):
                for t in SENTENCE_TYPES:
                    frac = "" if fracs is None else repr(fracs[t])
                    writer.writerow([prof.position, t.value, side, frac, support])
