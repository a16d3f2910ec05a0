"""Two-stage temperature-scheduled dataset construction.

Stage 1 holds the low-temperature pool (cold start from the base student),
stage 2 the high-temperature pool (continuing from the stage-1 checkpoint).
Datasets are written sorted by response id so identical inputs produce
byte-identical files; manifests carry the pool, counts, and the training
hyperparameters for an external trainer (this toolkit never trains).
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

from .filters import THINK_CLOSE, THINK_OPEN
from .records import (
    QuestionRecord,
    ResponseRecord,
    StageManifest,
    TrainingExampleRecord,
    TrainingMeta,
    write_records,
)

DEFAULT_LOW_T = 0.6
DEFAULT_HIGH_T = 1.0


class StageError(ValueError):
    pass


def render_training_example(
    question: QuestionRecord, response_text: str, response_id: str
) -> TrainingExampleRecord:
    """Render one prompt/target pair. The target is the normalized response
    verbatim; packing and tokenization are the trainer's concern."""
    if not response_text.startswith(THINK_OPEN) or THINK_CLOSE not in response_text:
        raise StageError(
            f"response {response_id} is not normalized to {THINK_OPEN}...{THINK_CLOSE} form; "
            "run the structure filter first"
        )
    return TrainingExampleRecord(
        response_id=response_id,
        question_id=question.id,
        prompt=question.prompt,
        target=response_text,
    )


def build_stage(
    records: Sequence[ResponseRecord],
    questions: Mapping[str, QuestionRecord],
    stage_id: int,
    temperature: float,
    source_pool: str,
    dataset_path: str | Path,
    training_meta: TrainingMeta | None = None,
) -> StageManifest:
    """Render one stage dataset file and return its manifest."""
    seen: dict[tuple[str, str], str] = {}
    for record in records:
        if record.temperature != temperature:
            raise StageError(
                f"record {record.id} was sampled at temperature {record.temperature}, "
                f"but this stage expects {temperature}"
            )
        key = (record.question_id, record.text)
        if key in seen:
            raise StageError(
                f"records {seen[key]} and {record.id} duplicate the same "
                f"(question, text) pair within one stage"
            )
        seen[key] = record.id

    examples = []
    for record in sorted(records, key=lambda r: r.id):
        question = questions.get(record.question_id)
        if question is None:
            raise StageError(f"record {record.id} references unknown question {record.question_id!r}")
        examples.append(render_training_example(question, record.text, record.id))
    count = write_records(examples, dataset_path)

    manifest = StageManifest(
        stage_id=stage_id,
        temperature=temperature,
        source_pool=str(source_pool),
        selected_count=count,
        init_from="base_student" if stage_id == 1 else "previous_stage",
        training_meta=training_meta or TrainingMeta(),
    )
    manifest.validate()
    return manifest


def build_stages(
    low_pool: Sequence[ResponseRecord],
    high_pool: Sequence[ResponseRecord],
    questions: Mapping[str, QuestionRecord],
    low_dataset_path: str | Path,
    high_dataset_path: str | Path,
    low_source: str,
    high_source: str,
    low_temperature: float = DEFAULT_LOW_T,
    high_temperature: float = DEFAULT_HIGH_T,
    training_meta: TrainingMeta | None = None,
) -> tuple[StageManifest, StageManifest]:
    """Build both stage datasets and manifests."""
    if not low_temperature < high_temperature:
        raise StageError(
            f"stage 1 temperature {low_temperature} must be below stage 2 "
            f"temperature {high_temperature}"
        )
    stage1 = build_stage(
        low_pool, questions, 1, low_temperature, low_source, low_dataset_path, training_meta
    )
    stage2 = build_stage(
        high_pool, questions, 2, high_temperature, high_source, high_dataset_path, training_meta
    )
    return stage1, stage2


def build_single_stage(
    pool: Sequence[ResponseRecord],
    questions: Mapping[str, QuestionRecord],
    temperature: float,
    source: str,
    dataset_path: str | Path,
    training_meta: TrainingMeta | None = None,
) -> StageManifest:
    """Escape hatch for single-temperature baselines: one stage-1 manifest."""
    return build_stage(pool, questions, 1, temperature, source, dataset_path, training_meta)
