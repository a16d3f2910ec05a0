"""Record schemas and line-delimited file I/O for every pipeline stage.

Every on-disk record is one JSON object per line, UTF-8, with a schema
version tag ``"v": 1`` and a fixed field order. Optional fields are omitted
entirely (never written as null) so that serialization is a pure function of
the record's values: writing the same records twice yields byte-identical
files. Character offsets count Unicode code points, not bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

SCHEMA_VERSION = 1

DOMAINS = ("math", "code", "science", "instruction_following", "other")
MODEL_ROLES = ("teacher", "student", "distilled")
FINISH_REASONS = ("stop", "length")
PROVENANCES = ("sampled", "scored", "mixed_policy")


class RecordError(ValueError):
    """A record violates its schema or invariants."""


class LineError(RecordError):
    """A line of a record file failed to parse or validate."""

    def __init__(self, path: str | Path, line_no: int, field_name: str | None, message: str):
        self.path = str(path)
        self.line_no = line_no
        self.field_name = field_name
        where = f"{path}:{line_no}"
        if field_name:
            where += f" field '{field_name}'"
        super().__init__(f"{where}: {message}")


class FieldError(RecordError):
    """A single field of a record is missing or has a bad value."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"field '{field_name}': {message}")


def _get(d: dict, key: str, convert=None):
    try:
        value = d[key]
    except KeyError:
        raise FieldError(key, "missing required field") from None
    if convert is not None:
        try:
            return convert(value)
        except (TypeError, ValueError) as exc:
            raise FieldError(key, f"bad value {value!r}: {exc}") from exc
    return value


class DuplicateIdError(RecordError):
    """Two records in one file share an id."""

    def __init__(self, path: str | Path, record_id: str, first_line: int, second_line: int):
        self.record_id = record_id
        self.first_line = first_line
        self.second_line = second_line
        super().__init__(
            f"{path}: duplicate id {record_id!r} on lines {first_line} and {second_line}"
        )


@dataclass
class TokenSpan:
    """One model token: surface text, logprob in nats, character offsets."""

    text: str
    logprob: float
    char_start: int
    char_end: int

    def validate(self) -> None:
        if not self.char_start < self.char_end:
            raise RecordError(
                f"token span [{self.char_start},{self.char_end}) is empty or reversed"
            )
        if self.logprob > 0:
            raise RecordError(f"token logprob {self.logprob} is positive")
        if len(self.text) != self.char_end - self.char_start:
            raise RecordError(
                f"token text length {len(self.text)} does not match span "
                f"[{self.char_start},{self.char_end})"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "logprob": self.logprob,
            "char_start": self.char_start,
            "char_end": self.char_end,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TokenSpan":
        return cls(
            text=_get(d, "text"),
            logprob=_get(d, "logprob", float),
            char_start=_get(d, "char_start", int),
            char_end=_get(d, "char_end", int),
        )


def validate_tiling(tokens: Sequence[TokenSpan], text: str) -> None:
    """Check that token spans are ordered, non-overlapping and cover text exactly."""
    pos = 0
    for i, tok in enumerate(tokens):
        tok.validate()
        if tok.char_start != pos:
            raise RecordError(
                f"token {i} starts at {tok.char_start}, expected {pos}: spans must tile the text"
            )
        if tok.text != text[tok.char_start : tok.char_end]:
            raise RecordError(f"token {i} text {tok.text!r} does not match the covered characters")
        pos = tok.char_end
    if pos != len(text):
        raise RecordError(f"token spans cover [0,{pos}) but text has length {len(text)}")


@dataclass
class QuestionRecord:
    id: str
    domain: str
    prompt: str
    reference_answer: str | None = None

    def validate(self) -> None:
        if not self.id:
            raise RecordError("question id is empty")
        if self.domain not in DOMAINS:
            raise RecordError(f"unknown domain {self.domain!r}, expected one of {DOMAINS}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "v": SCHEMA_VERSION,
            "id": self.id,
            "domain": self.domain,
            "prompt": self.prompt,
        }
        if self.reference_answer is not None:
            d["reference_answer"] = self.reference_answer
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "QuestionRecord":
        return cls(
            id=_get(d, "id"),
            domain=_get(d, "domain"),
            prompt=_get(d, "prompt"),
            reference_answer=d.get("reference_answer"),
        )


@dataclass
class ResponseRecord:
    """One model response to a question, optionally with per-token logprobs."""

    id: str
    question_id: str
    model_id: str
    model_role: str
    temperature: float
    text: str
    finish_reason: str
    tokens: list[TokenSpan] | None = None
    is_correct: bool | None = None
    provenance: str = "sampled"

    def validate(self) -> None:
        if not self.id:
            raise RecordError("response id is empty")
        if self.model_role not in MODEL_ROLES:
            raise RecordError(f"unknown model_role {self.model_role!r}")
        if self.finish_reason not in FINISH_REASONS:
            raise RecordError(f"unknown finish_reason {self.finish_reason!r}")
        if self.provenance not in PROVENANCES:
            raise RecordError(f"unknown provenance {self.provenance!r}")
        if self.temperature < 0:
            raise RecordError(f"temperature {self.temperature} is negative")
        if self.tokens is not None:
            validate_tiling(self.tokens, self.text)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "v": SCHEMA_VERSION,
            "id": self.id,
            "question_id": self.question_id,
            "model_id": self.model_id,
            "model_role": self.model_role,
            "temperature": self.temperature,
            "text": self.text,
            "finish_reason": self.finish_reason,
        }
        if self.tokens is not None:
            d["tokens"] = [t.to_dict() for t in self.tokens]
        if self.is_correct is not None:
            d["is_correct"] = self.is_correct
        d["provenance"] = self.provenance
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ResponseRecord":
        tokens = d.get("tokens")
        return cls(
            id=_get(d, "id"),
            question_id=_get(d, "question_id"),
            model_id=_get(d, "model_id"),
            model_role=_get(d, "model_role"),
            temperature=_get(d, "temperature", float),
            text=_get(d, "text"),
            finish_reason=_get(d, "finish_reason"),
            tokens=[TokenSpan.from_dict(t) for t in tokens] if tokens is not None else None,
            is_correct=d.get("is_correct"),
            provenance=d.get("provenance", "sampled"),
        )


@dataclass
class MixedPolicyRecord:
    """Student prefix completed by the teacher, with the loss-mask boundary."""

    question_id: str
    student_prefix: str
    teacher_continuation: str
    boundary_char: int
    cut_token_index: int
    mask_prefix: bool
    source_student_response_id: str

    def validate(self) -> None:
        if not self.student_prefix:
            raise RecordError("student_prefix is empty")
        if not self.teacher_continuation:
            raise RecordError("teacher_continuation is empty")
        if self.boundary_char != len(self.student_prefix):
            raise RecordError(
                f"boundary_char {self.boundary_char} != student_prefix length "
                f"{len(self.student_prefix)}"
            )
        if self.cut_token_index < 0:
            raise RecordError(f"cut_token_index {self.cut_token_index} is negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "v": SCHEMA_VERSION,
            "question_id": self.question_id,
            "student_prefix": self.student_prefix,
            "teacher_continuation": self.teacher_continuation,
            "boundary_char": self.boundary_char,
            "cut_token_index": self.cut_token_index,
            "mask_prefix": self.mask_prefix,
            "source_student_response_id": self.source_student_response_id,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MixedPolicyRecord":
        return cls(
            question_id=_get(d, "question_id"),
            student_prefix=_get(d, "student_prefix"),
            teacher_continuation=_get(d, "teacher_continuation"),
            boundary_char=_get(d, "boundary_char", int),
            cut_token_index=_get(d, "cut_token_index", int),
            mask_prefix=_get(d, "mask_prefix", bool),
            source_student_response_id=_get(d, "source_student_response_id"),
        )


@dataclass
class TrainingMeta:
    """Training hyperparameters carried on stage manifests as documentation."""

    learning_rate_start: float = 5e-5
    learning_rate_end: float = 1e-5
    schedule: str = "cosine"
    cutoff_tokens: int = 65536
    global_batch: int = 64
    epochs: int = 6

    def to_dict(self) -> dict[str, Any]:
        return {
            "learning_rate_start": self.learning_rate_start,
            "learning_rate_end": self.learning_rate_end,
            "schedule": self.schedule,
            "cutoff_tokens": self.cutoff_tokens,
            "global_batch": self.global_batch,
            "epochs": self.epochs,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainingMeta":
        return cls(
            learning_rate_start=_get(d, "learning_rate_start", float),
            learning_rate_end=_get(d, "learning_rate_end", float),
            schedule=_get(d, "schedule"),
            cutoff_tokens=_get(d, "cutoff_tokens", int),
            global_batch=_get(d, "global_batch", int),
            epochs=_get(d, "epochs", int),
        )


@dataclass
class StageManifest:
    """One temperature-scheduled training stage: pool, counts, hyperparameters."""

    stage_id: int
    temperature: float
    source_pool: str
    selected_count: int
    init_from: str
    training_meta: TrainingMeta = field(default_factory=TrainingMeta)

    def validate(self) -> None:
        if self.stage_id not in (1, 2):
            raise RecordError(f"stage_id must be 1 or 2, got {self.stage_id}")
        if self.init_from not in ("base_student", "previous_stage"):
            raise RecordError(f"unknown init_from {self.init_from!r}")
        if self.stage_id == 1 and self.init_from != "base_student":
            raise RecordError("stage 1 must initialize from base_student")
        if self.stage_id == 2 and self.init_from != "previous_stage":
            raise RecordError("stage 2 must initialize from previous_stage")
        if self.selected_count < 0:
            raise RecordError(f"selected_count {self.selected_count} is negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "v": SCHEMA_VERSION,
            "stage_id": self.stage_id,
            "temperature": self.temperature,
            "source_pool": self.source_pool,
            "selected_count": self.selected_count,
            "init_from": self.init_from,
            "training_meta": self.training_meta.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StageManifest":
        return cls(
            stage_id=_get(d, "stage_id", int),
            temperature=_get(d, "temperature", float),
            source_pool=_get(d, "source_pool"),
            selected_count=_get(d, "selected_count", int),
            init_from=_get(d, "init_from"),
            training_meta=TrainingMeta.from_dict(_get(d, "training_meta")),
        )


@dataclass
class TrainingExampleRecord:
    """A rendered SFT example; loss_mask lists [start,end) character ranges
    of the target that are excluded from the loss."""

    response_id: str
    question_id: str
    prompt: str
    target: str
    loss_mask: list[list[int]] | None = None

    def validate(self) -> None:
        if not self.response_id:
            raise RecordError("response_id is empty")
        if self.loss_mask is not None:
            for lo, hi in self.loss_mask:
                if not (0 <= lo < hi <= len(self.target)):
                    raise RecordError(
                        f"loss-mask range [{lo},{hi}) outside target of length {len(self.target)}"
                    )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "v": SCHEMA_VERSION,
            "response_id": self.response_id,
            "question_id": self.question_id,
            "prompt": self.prompt,
            "target": self.target,
        }
        if self.loss_mask is not None:
            d["loss_mask"] = [list(r) for r in self.loss_mask]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainingExampleRecord":
        mask = d.get("loss_mask")
        return cls(
            response_id=_get(d, "response_id"),
            question_id=_get(d, "question_id"),
            prompt=_get(d, "prompt"),
            target=_get(d, "target"),
            loss_mask=[[int(a), int(b)] for a, b in mask] if mask is not None else None,
        )


@dataclass
class SentenceStatsRecord:
    """Per-sentence mean logprobs (nats/token) and token counts under the
    scored models; distilled fields are omitted when only the pre-training
    teacher/student pair was scored or when the distilled tokenization left
    the sentence empty."""

    response_id: str
    question_id: str
    sentence_index: int
    char_start: int
    char_end: int
    mean_lp_teacher: float
    mean_lp_student: float
    token_count_teacher: int
    token_count_student: int
    mean_lp_distilled: float | None = None
    token_count_distilled: int | None = None

    def validate(self) -> None:
        if self.sentence_index < 0:
            raise RecordError(f"sentence_index {self.sentence_index} is negative")
        if not self.char_start < self.char_end:
            raise RecordError(
                f"sentence span [{self.char_start},{self.char_end}) is empty or reversed"
            )
        for name in ("mean_lp_teacher", "mean_lp_student", "mean_lp_distilled"):
            value = getattr(self, name)
            if value is not None and value > 0:
                raise RecordError(f"{name} {value} is positive")
        for name in ("token_count_teacher", "token_count_student"):
            if getattr(self, name) < 1:
                raise RecordError(f"{name} must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "v": SCHEMA_VERSION,
            "response_id": self.response_id,
            "question_id": self.question_id,
            "sentence_index": self.sentence_index,
            "char_start": self.char_start,
            "char_end": self.char_end,
            "mean_lp_teacher": self.mean_lp_teacher,
            "mean_lp_student": self.mean_lp_student,
            "token_count_teacher": self.token_count_teacher,
            "token_count_student": self.token_count_student,
        }
        if self.mean_lp_distilled is not None:
            d["mean_lp_distilled"] = self.mean_lp_distilled
        if self.token_count_distilled is not None:
            d["token_count_distilled"] = self.token_count_distilled
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SentenceStatsRecord":
        distilled = d.get("mean_lp_distilled")
        distilled_count = d.get("token_count_distilled")
        return cls(
            response_id=_get(d, "response_id"),
            question_id=_get(d, "question_id"),
            sentence_index=_get(d, "sentence_index", int),
            char_start=_get(d, "char_start", int),
            char_end=_get(d, "char_end", int),
            mean_lp_teacher=_get(d, "mean_lp_teacher", float),
            mean_lp_student=_get(d, "mean_lp_student", float),
            token_count_teacher=_get(d, "token_count_teacher", int),
            token_count_student=_get(d, "token_count_student", int),
            mean_lp_distilled=float(distilled) if distilled is not None else None,
            token_count_distilled=int(distilled_count) if distilled_count is not None else None,
        )


@dataclass
class SentenceLabelRecord:
    """Per-sentence likelihoods under the three models and the assigned type."""

    response_id: str
    question_id: str
    sentence_index: int
    char_start: int
    char_end: int
    mean_lp_teacher: float
    mean_lp_student: float
    mean_lp_distilled: float
    label: str

    def validate(self) -> None:
        if self.sentence_index < 0:
            raise RecordError(f"sentence_index {self.sentence_index} is negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "v": SCHEMA_VERSION,
            "response_id": self.response_id,
            "question_id": self.question_id,
            "sentence_index": self.sentence_index,
            "char_start": self.char_start,
            "char_end": self.char_end,
            "mean_lp_teacher": self.mean_lp_teacher,
            "mean_lp_student": self.mean_lp_student,
            "mean_lp_distilled": self.mean_lp_distilled,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SentenceLabelRecord":
        return cls(
            response_id=_get(d, "response_id"),
            question_id=_get(d, "question_id"),
            sentence_index=_get(d, "sentence_index", int),
            char_start=_get(d, "char_start", int),
            char_end=_get(d, "char_end", int),
            mean_lp_teacher=_get(d, "mean_lp_teacher", float),
            mean_lp_student=_get(d, "mean_lp_student", float),
            mean_lp_distilled=_get(d, "mean_lp_distilled", float),
            label=_get(d, "label"),
        )


@dataclass
class SelectionRecord:
    """One selected candidate with its selection score."""

    response_id: str
    question_id: str
    das_score: float

    def validate(self) -> None:
        if not self.response_id:
            raise RecordError("response_id is empty")
        if not 0.0 <= self.das_score <= 1.0:
            raise RecordError(f"das_score {self.das_score} outside [0,1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "v": SCHEMA_VERSION,
            "response_id": self.response_id,
            "question_id": self.question_id,
            "das_score": self.das_score,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SelectionRecord":
        return cls(
            response_id=_get(d, "response_id"),
            question_id=_get(d, "question_id"),
            das_score=_get(d, "das_score", float),
        )


# Record kinds whose files enforce id uniqueness, keyed by the id attribute.
_ID_FIELDS = {
    QuestionRecord: "id",
    ResponseRecord: "id",
    TrainingExampleRecord: "response_id",
    SelectionRecord: "response_id",
}

RECORD_TYPES = (
    QuestionRecord,
    ResponseRecord,
    MixedPolicyRecord,
    StageManifest,
    TrainingExampleRecord,
    SentenceStatsRecord,
    SentenceLabelRecord,
    SelectionRecord,
)


def read_records(path: str | Path, schema: type) -> list:
    """Read one record per line from ``path``, validating each against ``schema``.

    Raises LineError naming the line number (and field where known) on any
    malformed line, and DuplicateIdError naming both lines when two records
    share an id.
    """
    if schema not in RECORD_TYPES:
        raise ValueError(f"unknown record schema {schema!r}")
    path = Path(path)
    records = []
    id_field = _ID_FIELDS.get(schema)
    seen_ids: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                raise LineError(path, line_no, None, "blank line in record file")
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LineError(path, line_no, None, f"invalid JSON: {exc}") from exc
            if not isinstance(data, dict):
                raise LineError(path, line_no, None, "line is not a JSON object")
            if data.get("v") != SCHEMA_VERSION:
                raise LineError(path, line_no, "v", f"unsupported schema version {data.get('v')!r}")
            try:
                record = schema.from_dict(data)
                record.validate()
            except FieldError as exc:
                raise LineError(path, line_no, exc.field_name, str(exc)) from exc
            except (TypeError, ValueError) as exc:
                raise LineError(path, line_no, None, str(exc)) from exc
            if id_field is not None:
                rid = getattr(record, id_field)
                if rid in seen_ids:
                    raise DuplicateIdError(path, rid, seen_ids[rid], line_no)
                seen_ids[rid] = line_no
            records.append(record)
    return records


def write_records(records: Iterable, path: str | Path) -> int:
    """Write records one per line; validates everything before any byte is written.

    Returns the number of records written. Serialization uses a fixed field
    order per schema, so identical inputs produce byte-identical files.
    """
    records = list(records)
    lines = []
    seen: dict[tuple[type, str], int] = {}
    for i, record in enumerate(records, start=1):
        if type(record) not in RECORD_TYPES:
            raise RecordError(f"record {i} has unknown type {type(record).__name__}")
        record.validate()
        id_field = _ID_FIELDS.get(type(record))
        if id_field is not None:
            rid = getattr(record, id_field)
            key = (type(record), rid)
            if key in seen:
                raise DuplicateIdError(path, rid, seen[key], i)
            seen[key] = i
        lines.append(json.dumps(record.to_dict(), ensure_ascii=False))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    return len(lines)

