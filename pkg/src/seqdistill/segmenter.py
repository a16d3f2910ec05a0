"""Sentence segmentation over response text and token-to-sentence alignment.

Boundaries are defined on characters, not tokens, so teacher and student
tokenizations of the same text can both be aligned to the same sentence
spans. A boundary occurs only after terminal punctuation followed by
whitespace (or end of text), or after a blank line; fenced code blocks are
kept opaque. Fragments shorter than ``min_chars`` are merged into the
following span (or the preceding one for the final fragment).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .records import TokenSpan

DEFAULT_PUNCTUATION = (".", "!", "?", ";", "。", "！", "？")
DEFAULT_MIN_CHARS = 12
_FENCE = "```"


class SegmentationError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class SentenceSpan:
    index: int
    char_start: int
    char_end: int

    def __post_init__(self):
        if self.char_start >= self.char_end:
            raise SegmentationError(
                f"sentence span [{self.char_start},{self.char_end}) is empty or reversed"
            )


def _fenced_regions(text: str) -> list[tuple[int, int]]:
    """Half-open [start,end) ranges of ``` fenced blocks; unclosed fences run to EOT."""
    regions = []
    pos = 0
    while True:
        start = text.find(_FENCE, pos)
        if start == -1:
            break
        close = text.find(_FENCE, start + len(_FENCE))
        if close == -1:
            regions.append((start, len(text)))
            break
        end = close + len(_FENCE)
        regions.append((start, end))
        pos = end
    return regions


def _boundary_cuts(text: str, punctuation: Sequence[str]) -> list[int]:
    """Positions where one sentence ends and the next begins.

    A cut is placed at the first non-whitespace character after terminal
    punctuation + whitespace, or after a blank line. Cuts inside fenced code
    blocks are suppressed; fence edges themselves become cuts.
    """
    punct = set(punctuation)
    fences = _fenced_regions(text)

    def in_fence(i: int) -> bool:
        return any(lo <= i < hi for lo, hi in fences)

    cuts: set[int] = set()
    n = len(text)
    i = 0
    while i < n:
        ch = text[i]
        if ch in punct and not in_fence(i):
            j = i + 1
            if j >= n:
                break
            if text[j].isspace():
                while j < n and text[j].isspace():
                    j += 1
                if j < n and not in_fence(j):
                    cuts.add(j)
                i = j
                continue
        elif ch == "\n" and not in_fence(i):
            # blank line: a newline followed by (spaces/tabs and) another newline
            j = i + 1
            while j < n and text[j] in (" ", "\t", "\r"):
                j += 1
            if j < n and text[j] == "\n":
                j += 1
                while j < n and text[j].isspace():
                    j += 1
                if j < n and not in_fence(j):
                    cuts.add(j)
                i = j
                continue
        i += 1

    for lo, hi in fences:
        if 0 < lo < n:
            cuts.add(lo)
        # first non-whitespace character after the fence starts the next span
        j = hi
        while j < n and text[j].isspace():
            j += 1
        if 0 < j < n:
            cuts.add(j)
    return sorted(c for c in cuts if 0 < c < n)


def segment(
    text: str,
    min_chars: int = DEFAULT_MIN_CHARS,
    punctuation: Sequence[str] = DEFAULT_PUNCTUATION,
) -> list[SentenceSpan]:
    """Partition ``text`` into consecutive sentence spans.

    The spans are ordered, non-overlapping, non-empty, and their union covers
    the whole text. Raises SegmentationError on empty text.
    """
    if not text:
        raise SegmentationError("cannot segment empty text")
    cuts = _boundary_cuts(text, punctuation)
    edges = [0] + cuts + [len(text)]
    raw = [(edges[k], edges[k + 1]) for k in range(len(edges) - 1)]

    merged: list[tuple[int, int]] = []
    pending_start: int | None = None
    for lo, hi in raw:
        start = pending_start if pending_start is not None else lo
        if hi - start < min_chars:
            pending_start = start
            continue
        merged.append((start, hi))
        pending_start = None
    if pending_start is not None:
        # trailing short fragment joins the preceding span, or stands alone
        if merged:
            lo, _ = merged.pop()
            merged.append((lo, len(text)))
        else:
            merged.append((pending_start, len(text)))

    return [SentenceSpan(index=k, char_start=lo, char_end=hi) for k, (lo, hi) in enumerate(merged)]


def assign_tokens(
    spans: Sequence[SentenceSpan], tokens: Sequence[TokenSpan]
) -> list[tuple[int, int]]:
    """Assign each token to the sentence containing its first character.

    Returns one half-open token-index range per sentence. Ranges are
    contiguous and concatenate to cover all tokens; a sentence that no token
    starts in gets an empty range.
    """
    if not spans:
        raise AlignmentError("no sentence spans given")
    text_len = spans[-1].char_end
    for tok in tokens:
        if tok.char_end > text_len or tok.char_start < 0:
            raise AlignmentError(
                f"token span [{tok.char_start},{tok.char_end}) exceeds text length {text_len}"
            )

    ranges: list[tuple[int, int]] = []
    t = 0
    n_tokens = len(tokens)
    for span in spans:
        start = t
        while t < n_tokens and span.char_start <= tokens[t].char_start < span.char_end:
            t += 1
        ranges.append((start, t))
    if t != n_tokens:
        raise AlignmentError(f"{n_tokens - t} tokens start outside every sentence span")
    return ranges
