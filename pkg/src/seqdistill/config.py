"""Pipeline configuration: JSON file loading, defaults, validation, and the
resolved-config snapshot written beside every command's outputs.

Relative paths are resolved against the config file's directory. A resolved
snapshot is itself a valid config, so re-running a command from the snapshot
reproduces its outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .filters import HARMONY_MARKERS, MarkerTable, RepetitionConfig
from .mixed_policy import DEFAULT_BIN_EDGES
from .records import TrainingMeta
from .segmenter import DEFAULT_MIN_CHARS, DEFAULT_PUNCTUATION


class ConfigError(ValueError):
    pass


@dataclass
class GatewaySettings:
    base_url: str | None = None
    api_key: str | None = None
    max_in_flight: int = 8
    timeout_ms: int = 30000
    use_mock: bool = True


@dataclass
class ModelSettings:
    teacher: str = "mock-teacher"
    student: str = "mock-student"
    # null scores the pre-training pair only (enough for selection;
    # classification needs all three models)
    distilled: str | None = "mock-distilled"


@dataclass
class SamplingSettings:
    low_temperature: float = 0.6
    high_temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 600
    candidates_per_question: int = 4
    seed: int | None = 20240501
    # completion-style prompt rendering; scoring uses the same template so
    # sample-time and re-scored logprobs agree
    prompt_template: str = "{prompt}\n"


@dataclass
class SegmenterSettings:
    min_chars: int = DEFAULT_MIN_CHARS
    punctuation: list[str] = field(default_factory=lambda: list(DEFAULT_PUNCTUATION))


@dataclass
class FilterSettings:
    max_tokens: int = 65536
    force_approximate: bool = False
    markers: dict[str, Any] = field(
        default_factory=lambda: {
            "analysis_start": HARMONY_MARKERS.analysis_start,
            "analysis_end": HARMONY_MARKERS.analysis_end,
            "final_start": HARMONY_MARKERS.final_start,
            "final_end": HARMONY_MARKERS.final_end,
            "tool_markers": list(HARMONY_MARKERS.tool_markers),
        }
    )
    repetition: dict[str, int] = field(
        default_factory=lambda: {
            "ngram_len": 8,
            "min_repeats": 3,
            "paragraph_repeats": 2,
            "min_paragraph_chars": 20,
        }
    )

    def marker_table(self) -> MarkerTable:
        return MarkerTable(
            analysis_start=self.markers["analysis_start"],
            analysis_end=self.markers["analysis_end"],
            final_start=self.markers["final_start"],
            final_end=self.markers.get("final_end", ""),
            tool_markers=tuple(self.markers.get("tool_markers", ())),
        )

    def repetition_config(self) -> RepetitionConfig:
        return RepetitionConfig(**self.repetition)


@dataclass
class SelectionSettings:
    budget: int = 50
    per_question_quota: int = 1


@dataclass
class SchedulerSettings:
    low_T: float = 0.6
    high_T: float = 1.0
    single_stage: bool = False
    training_meta: dict[str, Any] = field(default_factory=lambda: TrainingMeta().to_dict())

    def meta(self) -> TrainingMeta:
        return TrainingMeta.from_dict(self.training_meta)


@dataclass
class MixedPolicySettings:
    source_pool: str = "low"
    cap_factor: float = 1.5
    temperature: float = 1.0
    top_p: float = 1.0
    seed: int | None = 77
    continuation_max_tokens: int = 1200
    mask: bool = False
    prompt_template: str = "{prompt}\n{prefix}"
    bin_edges: list[int] = field(default_factory=lambda: list(DEFAULT_BIN_EDGES))


@dataclass
class AnalysisSettings:
    bins: int = 50
    max_position: int = 10


@dataclass
class OracleSettings:
    seed: int = 5
    identity_pairs: int = 100
    mc_samples: int = 100000
    coverage_draws: int = 20
    coverage_trials: int = 1000
    low_temperature: float = 0.6
    high_temperature: float = 1.0


def default_mock_models() -> dict[str, dict[str, Any]]:
    """Mock trio for hermetic runs: a terse teacher that occasionally emits
    tool calls, a longer-winded student, and a distilled blend of the two."""
    return {
        "mock-teacher": {"kind": "structured", "seed": 11, "tool_rate": 0.015},
        "mock-student": {
            "kind": "structured",
            "seed": 29,
            "tool_rate": 0.004,
            "sentence_rate": 0.12,
            "close_analysis_rate": 0.015,
            "close_final_rate": 0.05,
            "close_after_sentence_rate": 0.10,
        },
        "mock-distilled": {
            "kind": "blend",
            "parents": ["mock-teacher", "mock-student"],
            "weight": 0.7,
        },
    }


@dataclass
class PipelineConfig:
    questions: str = "questions.jsonl"
    workdir: str = "out"
    tau: float = math.log(2.0)
    gateway: GatewaySettings = field(default_factory=GatewaySettings)
    models: ModelSettings = field(default_factory=ModelSettings)
    mock_models: dict[str, dict[str, Any]] = field(default_factory=default_mock_models)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    segmenter: SegmenterSettings = field(default_factory=SegmenterSettings)
    filters: FilterSettings = field(default_factory=FilterSettings)
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    scheduler: SchedulerSettings = field(default_factory=SchedulerSettings)
    mixed_policy: MixedPolicySettings = field(default_factory=MixedPolicySettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    oracle: OracleSettings = field(default_factory=OracleSettings)

    def validate(self, command: str) -> None:
        needs_questions = command in {
            "sample", "score", "classify", "select", "filter", "build-stages", "mixed-policy",
        }
        if needs_questions and not Path(self.questions).is_file():
            raise ConfigError(f"questions file not found: {self.questions}")
        if command == "sample" and self.sampling.seed is None:
            raise ConfigError("sampling.seed must be set for the sample command")
        if command == "mixed-policy" and self.mixed_policy.seed is None:
            raise ConfigError("mixed_policy.seed must be set for the mixed-policy command")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not self.gateway.use_mock and not self.gateway.base_url:
            raise ConfigError("gateway.base_url is required when the mock backend is disabled")
        if self.mixed_policy.source_pool not in ("low", "high"):
            raise ConfigError(
                f"mixed_policy.source_pool must be 'low' or 'high', "
                f"got {self.mixed_policy.source_pool!r}"
            )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def workdir_path(self) -> Path:
        return Path(self.workdir)


_SECTIONS = {
    "gateway": GatewaySettings,
    "models": ModelSettings,
    "sampling": SamplingSettings,
    "segmenter": SegmenterSettings,
    "filters": FilterSettings,
    "selection": SelectionSettings,
    "scheduler": SchedulerSettings,
    "mixed_policy": MixedPolicySettings,
    "analysis": AnalysisSettings,
    "oracle": OracleSettings,
}


def config_from_dict(data: dict[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    data = dict(data)
    kwargs: dict[str, Any] = {}
    for key in ("questions", "workdir", "tau", "mock_models"):
        if key in data:
            kwargs[key] = data.pop(key)
    for name, cls in _SECTIONS.items():
        if name in data:
            section = data.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
            unknown = set(section) - known
            if unknown:
                raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
            kwargs[name] = cls(**section)
    data.pop("v", None)
    if data:
        raise ConfigError(f"unknown top-level config keys: {sorted(data)}")
    cfg = PipelineConfig(**kwargs)
    if base_dir is not None:
        if not Path(cfg.questions).is_absolute():
            cfg.questions = str(base_dir / cfg.questions)
        if not Path(cfg.workdir).is_absolute():
            cfg.workdir = str(base_dir / cfg.workdir)
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(data, base_dir=path.parent.resolve())


def write_snapshot(cfg: PipelineConfig, command: str) -> Path:
    """Write the resolved config beside the command's outputs; the snapshot is
    itself a loadable config that reproduces the run."""
    workdir = cfg.workdir_path()
    workdir.mkdir(parents=True, exist_ok=True)
    snapshot = workdir / f"config.{command}.json"
    payload = json.dumps(cfg.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)
    snapshot.write_text(payload + "\n", encoding="utf-8")
    return snapshot


def build_mock_models(cfg: PipelineConfig):
    """Instantiate the configured mock models (blends resolved after parents)."""
    from .mockmodel import MockModel, blend_model, structured_model

    models: dict[str, MockModel] = {}
    pending = dict(cfg.mock_models)
    progress = True
    while pending and progress:
        progress = False
        for name, spec in list(pending.items()):
            kind = spec.get("kind", "structured")
            if kind == "structured":
                params = {k: v for k, v in spec.items() if k != "kind"}
                models[name] = structured_model(name, **params)
            elif kind == "blend":
                parents = spec.get("parents", [])
                if len(parents) != 2:
                    raise ConfigError(f"mock model {name!r}: blend needs exactly 2 parents")
                if not all(p in models for p in parents):
                    continue
                models[name] = blend_model(
                    name, models[parents[0]], models[parents[1]], float(spec.get("weight", 0.5))
                )
            else:
                raise ConfigError(f"mock model {name!r}: unknown kind {kind!r}")
            del pending[name]
            progress = True
    if pending:
        raise ConfigError(f"unresolvable mock model definitions: {sorted(pending)}")
    return models
