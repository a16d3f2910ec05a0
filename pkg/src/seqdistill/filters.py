"""Response-quality gate: structure normalization, hard length cap, and
repetition detection, composed into a batch pipeline with a rejection report.

The structure filter runs first because it rewrites the teacher's native
channel delimiters into ``<think>...</think>`` + answer, and the later
filters must see the rewritten text. Already-normalized text passes through
unchanged, which makes the whole pipeline idempotent on its own output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .gateway import GatewayError, TokenCounter
from .records import ResponseRecord

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

REASONS = (
    "too_long",
    "function_call",
    "missing_think",
    "missing_answer",
    "repetition_ngram",
    "repetition_paragraph",
)

DEFAULT_MAX_TOKENS = 65536


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class MarkerTable:
    """Delimiters of one teacher's native output format.

    ``final_end`` may be empty, meaning the final segment runs to end of
    text. ``tool_markers`` are substrings whose presence marks a tool call.
    """

    analysis_start: str
    analysis_end: str
    final_start: str
    final_end: str
    tool_markers: tuple[str, ...]


# gpt-oss style channel delimiters; override via config for other teachers.
HARMONY_MARKERS = MarkerTable(
    analysis_start="<|channel|>analysis<|message|>",
    analysis_end="<|end|>",
    final_start="<|channel|>final<|message|>",
    final_end="<|return|>",
    tool_markers=("<|channel|>commentary to=", " to=functions.", "<|call|>"),
)


@dataclass
class FilterVerdict:
    kept: bool
    reasons: list[str] = field(default_factory=list)
    diagnostics: str | None = None

    def __post_init__(self):
        if self.kept != (not self.reasons):
            raise FilterError("verdict kept flag must match emptiness of reasons")
        for r in self.reasons:
            if r not in REASONS:
                raise FilterError(f"unknown rejection reason {r!r}")


def _kept() -> FilterVerdict:
    return FilterVerdict(kept=True)


def _rejected(reasons: Sequence[str], diagnostics: str) -> FilterVerdict:
    return FilterVerdict(kept=False, reasons=list(reasons), diagnostics=diagnostics)


@dataclass(frozen=True)
class RepetitionConfig:
    ngram_len: int = 8
    min_repeats: int = 3
    paragraph_repeats: int = 2
    min_paragraph_chars: int = 20

    def validate(self) -> None:
        for name in ("ngram_len", "min_repeats", "paragraph_repeats"):
            if getattr(self, name) < 1:
                raise FilterError(f"{name} must be >= 1")


def length_filter(
    record: ResponseRecord,
    max_tokens: int,
    counter: TokenCounter,
    prompt: str,
    force_approximate: bool = False,
) -> FilterVerdict:
    """Keep iff the rendered training sequence (prompt + response text) has at
    most ``max_tokens`` tokens under the student's tokenizer (inclusive bound).

    Approximate counters are refused unless explicitly forced, since the cap
    protects the training context length.
    """
    if not counter.exact and not force_approximate:
        raise FilterError(
            f"counter for {counter.model_id} is approximate; the length filter needs an "
            "exact tokenizer count (pass force_approximate=True to override)"
        )
    rendered = prompt + record.text
    n = counter.count(rendered)
    if n <= max_tokens:
        return _kept()
    return _rejected(
        ["too_long"], f"rendered example has {n} tokens, cap is {max_tokens}"
    )


def _find_all(text: str, marker: str) -> list[int]:
    out = []
    pos = text.find(marker)
    while pos != -1:
        out.append(pos)
        pos = text.find(marker, pos + len(marker))
    return out


def structure_filter(
    raw: str, markers: MarkerTable
) -> tuple[str | None, FilterVerdict]:
    """Rewrite a raw teacher output into ``<think>`` + analysis + ``</think>``
    + final answer, or reject it.

    Tool-call markers reject as function_call; a missing or empty analysis /
    final segment rejects as missing_think / missing_answer; out-of-order or
    repeated delimiters reject with diagnostics naming the first offending
    offset. Inner segment bytes are preserved exactly. Text already in
    ``<think>`` form passes through unchanged.
    """
    for m in markers.tool_markers:
        pos = raw.find(m)
        if pos != -1:
            return None, _rejected(
                ["function_call"], f"tool-call marker {m!r} at offset {pos}"
            )

    if raw.startswith(THINK_OPEN):
        close = raw.find(THINK_CLOSE)
        if close != -1:
            analysis = raw[len(THINK_OPEN) : close]
            final = raw[close + len(THINK_CLOSE) :]
            if not analysis:
                return None, _rejected(["missing_think"], "empty think segment")
            if not final:
                return None, _rejected(["missing_answer"], "empty answer segment")
            return raw, _kept()

    expected = [
        ("analysis_start", markers.analysis_start),
        ("analysis_end", markers.analysis_end),
        ("final_start", markers.final_start),
    ]
    if markers.final_end:
        expected.append(("final_end", markers.final_end))

    events = []
    for name, marker in expected:
        for pos in _find_all(raw, marker):
            events.append((pos, name, marker))
    events.sort()

    positions: dict[str, int] = {}
    for step, (name, marker) in enumerate(expected):
        if step >= len(events):
            if name == "analysis_start":
                return None, _rejected(["missing_think"], "no analysis segment found")
            if name == "final_start":
                return None, _rejected(["missing_answer"], "no final segment found")
            segment = "missing_think" if name == "analysis_end" else "missing_answer"
            last_pos = events[-1][0] if events else 0
            return None, _rejected(
                [segment], f"unterminated segment: expected {name} after offset {last_pos}"
            )
        pos, got, _ = events[step]
        if got != name:
            segment = "missing_think" if name in ("analysis_start", "analysis_end") else "missing_answer"
            return None, _rejected(
                [segment], f"malformed marker nesting: {got} at offset {pos}, expected {name}"
            )
        positions[name] = pos
    if len(events) > len(expected):
        pos, got, _ = events[len(expected)]
        return None, _rejected(
            ["missing_answer"], f"malformed marker nesting: extra {got} at offset {pos}"
        )

    analysis = raw[positions["analysis_start"] + len(markers.analysis_start) : positions["analysis_end"]]
    if markers.final_end:
        final = raw[positions["final_start"] + len(markers.final_start) : positions["final_end"]]
    else:
        final = raw[positions["final_start"] + len(markers.final_start) :]
    if not analysis:
        return None, _rejected(["missing_think"], "empty analysis segment")
    if not final:
        return None, _rejected(["missing_answer"], "empty final segment")
    return THINK_OPEN + analysis + THINK_CLOSE + final, _kept()


def continuation_structure_check(
    prefix: str, continuation: str, markers: MarkerTable
) -> FilterVerdict:
    """Structure gate for mixed-policy continuations: the combined text must
    contain no tool calls and a complete, non-empty final-answer segment."""
    combined = prefix + continuation
    for m in markers.tool_markers:
        pos = combined.find(m)
        if pos != -1:
            return _rejected(["function_call"], f"tool-call marker {m!r} at offset {pos}")
    starts = _find_all(combined, markers.final_start)
    if not starts:
        return _rejected(["missing_answer"], "no final segment in prefix + continuation")
    fs = starts[-1] + len(markers.final_start)
    if markers.final_end:
        fe = combined.find(markers.final_end, fs)
        if fe == -1:
            return _rejected(["missing_answer"], "final segment never closes")
        final = combined[fs:fe]
    else:
        final = combined[fs:]
    if not final:
        return _rejected(["missing_answer"], "empty final segment")
    return _kept()


def _ngram_counts(words: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(words) - n + 1):
        gram = tuple(words[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def repetition_filter(text: str, cfg: RepetitionConfig = RepetitionConfig()) -> FilterVerdict:
    """Reject text where any word n-gram repeats ``min_repeats`` times or any
    substantial paragraph repeats ``paragraph_repeats`` times.

    Occurrences are counted over the sliding window, so overlapping repeats
    count. Diagnostics name one offending n-gram or paragraph and its count.
    """
    cfg.validate()
    reasons: list[str] = []
    diagnostics: list[str] = []

    words = text.split()
    counts = _ngram_counts(words, cfg.ngram_len)
    if counts:
        worst = max(counts.values())
        if worst >= cfg.min_repeats:
            gram = next(g for g, c in counts.items() if c == worst)
            reasons.append("repetition_ngram")
            diagnostics.append(
                f"{cfg.ngram_len}-gram {' '.join(gram)!r} occurs {worst} times"
            )

    paragraphs = [p.strip() for p in _split_paragraphs(text)]
    para_counts: dict[str, int] = {}
    for p in paragraphs:
        if len(p) >= cfg.min_paragraph_chars:
            para_counts[p] = para_counts.get(p, 0) + 1
    if para_counts:
        worst = max(para_counts.values())
        if worst >= cfg.paragraph_repeats:
            para = next(p for p, c in para_counts.items() if c == worst)
            reasons.append("repetition_paragraph")
            diagnostics.append(f"paragraph {para[:60]!r} occurs {worst} times")

    if reasons:
        return _rejected(reasons, "; ".join(diagnostics))
    return _kept()


def _split_paragraphs(text: str) -> list[str]:
    """Split on blank lines (a newline, optional horizontal whitespace, newline)."""
    out = []
    current: list[str] = []
    blank = True
    for line in text.split("\n"):
        if line.strip() == "":
            if not blank:
                out.append("\n".join(current))
                current = []
            blank = True
        else:
            current.append(line)
            blank = False
    if current:
        out.append("\n".join(current))
    return out


@dataclass
class FilterConfig:
    markers: MarkerTable
    counter: TokenCounter
    prompts: Mapping[str, str]
    max_tokens: int = DEFAULT_MAX_TOKENS
    repetition: RepetitionConfig = field(default_factory=RepetitionConfig)
    force_approximate: bool = False


@dataclass
class FilterReport:
    """Rejection counts per reason; ``error`` counts records whose filtering
    itself failed. kept + sum(counts) always equals total."""

    total: int = 0
    kept: int = 0
    counts: dict[str, int] = field(default_factory=dict)
    verdicts: list[tuple[str, FilterVerdict]] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)

    def add_rejection(self, record_id: str, verdict: FilterVerdict) -> None:
        self.total += 1
        self.counts[verdict.reasons[0]] = self.counts.get(verdict.reasons[0], 0) + 1
        self.verdicts.append((record_id, verdict))

    def add_error(self, record_id: str, message: str) -> None:
        self.total += 1
        self.counts["error"] = self.counts.get("error", 0) + 1
        self.errors.append((record_id, message))

    def add_kept(self, record_id: str) -> None:
        self.total += 1
        self.kept += 1
        self.verdicts.append((record_id, _kept()))

    def rejected(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "total": self.total,
            "kept": self.kept,
            "rejected": self.rejected(),
            "counts": {k: self.counts[k] for k in sorted(self.counts)},
        }


def filter_pipeline(
    records: Iterable[ResponseRecord], cfg: FilterConfig
) -> tuple[list[ResponseRecord], FilterReport]:
    """Apply structure -> length -> repetition to every record.

    Kept records carry the normalized text (token spans are dropped when the
    text was rewritten, since their offsets index the raw text). Per-record
    failures are recorded as rejections and never abort the batch; kept plus
    rejected always sums to the input count, and kept records preserve input
    order.
    """
    kept_records: list[ResponseRecord] = []
    report = FilterReport()
    for record in records:
        try:
            normalized, verdict = structure_filter(record.text, cfg.markers)
            if not verdict.kept:
                report.add_rejection(record.id, verdict)
                continue
            assert normalized is not None
            prompt = cfg.prompts.get(record.question_id)
            if prompt is None:
                report.add_error(record.id, f"no prompt known for question {record.question_id!r}")
                continue
            candidate = record if normalized == record.text else replace(
                record, text=normalized, tokens=None
            )
            verdict = length_filter(
                candidate, cfg.max_tokens, cfg.counter, prompt, cfg.force_approximate
            )
            if not verdict.kept:
                report.add_rejection(record.id, verdict)
                continue
            verdict = repetition_filter(candidate.text, cfg.repetition)
            if not verdict.kept:
                report.add_rejection(record.id, verdict)
                continue
            kept_records.append(candidate)
            report.add_kept(record.id)
        except (FilterError, GatewayError, ValueError) as exc:
            report.add_error(record.id, str(exc))
    return kept_records, report
