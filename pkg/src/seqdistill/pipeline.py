"""End-to-end pipeline stages behind the CLI commands.

Commands communicate only through record files under the configured working
directory; every stage writes sorted, schema-versioned outputs so identical
configs and seeds reproduce byte-identical files with the mock backend.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import divergence, likelihood, plots, selection, stages, toylm
from .config import PipelineConfig, build_mock_models
from .divergence import SENTENCE_TYPES, SentenceTriple, boxed_answer_correct
from .filters import FilterConfig, filter_pipeline
from .gateway import GenerationRequest, HttpGateway, ScoringRequest, request_digest
from .mixed_policy import (
    ContinuationConfig,
    CutoffBin,
    CutoffTable,
    cutoff_rate,
    emit_training_examples,
    regenerate,
    truncate_and_continue,
    write_cutoff_csv,
)
from .mockmodel import MockGateway
from .records import (
    QuestionRecord,
    ResponseRecord,
    SelectionRecord,
    SentenceLabelRecord,
    SentenceStatsRecord,
    write_records,
    read_records,
)
from .segmenter import assign_tokens, segment

POOLS = ("low", "high")
ROLES = ("teacher", "student", "distilled")


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class WorkdirLayout:
    """Conventional file layout under the working directory."""

    root: Path

    def candidates(self, pool: str) -> Path:
        return self.root / f"candidates.{pool}.jsonl"

    def scored(self, pool: str, role: str) -> Path:
        return self.root / f"scored.{pool}.{role}.jsonl"

    def sentences(self, pool: str) -> Path:
        return self.root / f"sentences.{pool}.jsonl"

    def labels(self, pool: str) -> Path:
        return self.root / f"labels.{pool}.jsonl"

    def selection(self, pool: str) -> Path:
        return self.root / f"selection.{pool}.jsonl"

    def kept(self, pool: str) -> Path:
        return self.root / f"kept.{pool}.jsonl"

    def report(self, pool: str) -> Path:
        return self.root / f"report.{pool}.json"

    def verdicts(self, pool: str) -> Path:
        return self.root / f"verdicts.{pool}.jsonl"

    def stage_dataset(self, stage_id: int) -> Path:
        return self.root / f"stage{stage_id}.dataset.jsonl"

    def stage_manifest(self, stage_id: int) -> Path:
        return self.root / f"stage{stage_id}.manifest.jsonl"

    @property
    def regenerations(self) -> Path:
        return self.root / "regenerations.jsonl"

    @property
    def cutoff_csv(self) -> Path:
        return self.root / "cutoff_table.csv"

    @property
    def mixed_records(self) -> Path:
        return self.root / "mixed.records.jsonl"

    @property
    def mixed_dataset(self) -> Path:
        return self.root / "mixed.dataset.jsonl"

    @property
    def mixed_report(self) -> Path:
        return self.root / "mixed.report.json"

    @property
    def analysis_dir(self) -> Path:
        return self.root / "analysis"

    @property
    def figures_dir(self) -> Path:
        return self.root / "analysis" / "figures"

    @property
    def oracle_dir(self) -> Path:
        return self.root / "oracle"


def layout(cfg: PipelineConfig) -> WorkdirLayout:
    return WorkdirLayout(root=cfg.workdir_path())


def build_gateway(cfg: PipelineConfig, force_mock: bool = False):
    if force_mock or cfg.gateway.use_mock:
        return MockGateway(build_mock_models(cfg))
    return HttpGateway(
        base_url=cfg.gateway.base_url,
        api_key=cfg.gateway.api_key,
        max_in_flight=cfg.gateway.max_in_flight,
        timeout_ms=cfg.gateway.timeout_ms,
    )


def load_questions(cfg: PipelineConfig) -> list[QuestionRecord]:
    return read_records(cfg.questions, QuestionRecord)


def pool_temperature(cfg: PipelineConfig, pool: str) -> float:
    return cfg.sampling.low_temperature if pool == "low" else cfg.sampling.high_temperature


def render_prompt(cfg: PipelineConfig, question_prompt: str) -> str:
    return cfg.sampling.prompt_template.format(prompt=question_prompt)


def _filter_config(cfg: PipelineConfig, gateway, questions: Sequence[QuestionRecord]) -> FilterConfig:
    return FilterConfig(
        markers=cfg.filters.marker_table(),
        counter=gateway.counter(cfg.models.student),
        prompts={q.id: render_prompt(cfg, q.prompt) for q in questions},
        max_tokens=cfg.filters.max_tokens,
        repetition=cfg.filters.repetition_config(),
        force_approximate=cfg.filters.force_approximate,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def cmd_sample(cfg: PipelineConfig, gateway) -> dict:
    questions = load_questions(cfg)
    paths = layout(cfg)
    counts = {}
    for pool in POOLS:
        temperature = pool_temperature(cfg, pool)
        records: list[ResponseRecord] = []
        for question in questions:
            req = GenerationRequest(
                model_id=cfg.models.teacher,
                prompt=render_prompt(cfg, question.prompt),
                temperature=temperature,
                top_p=cfg.sampling.top_p,
                max_tokens=cfg.sampling.max_tokens,
                n=cfg.sampling.candidates_per_question,
                seed=request_digest(cfg.sampling.seed, pool, question.id) % (2**31),
            )
            for i, record in enumerate(gateway.sample(req)):
                record.id = f"{question.id}-{pool}-c{i:02d}"
                record.question_id = question.id
                if question.reference_answer is not None:
                    record.is_correct = boxed_answer_correct(
                        record.text, question.reference_answer
                    )
                records.append(record)
        records.sort(key=lambda r: r.id)
        counts[pool] = write_records(records, paths.candidates(pool))
    return {"sampled": counts}


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def cmd_score(cfg: PipelineConfig, gateway) -> dict:
    """Teacher-forced scoring of every candidate under the named models, plus
    the per-sentence mean-logprob statistics derived from the token spans.

    A null distilled model id scores the pre-training teacher/student pair
    only, which is all divergence-aware selection needs.
    """
    questions = {q.id: q for q in load_questions(cfg)}
    paths = layout(cfg)
    counts: dict[str, dict[str, int]] = {}
    roles = [r for r in ROLES if getattr(cfg.models, r) is not None]
    for pool in POOLS:
        candidates = read_records(paths.candidates(pool), ResponseRecord)
        counts[pool] = {}
        tokens_by_record: dict[str, dict[str, list]] = {}
        for role in roles:
            model_id = getattr(cfg.models, role)
            scored = []
            for record in candidates:
                if not record.text:
                    continue
                question = questions.get(record.question_id)
                if question is None:
                    raise PipelineError(
                        f"candidate {record.id} references unknown question "
                        f"{record.question_id!r}"
                    )
                spans = gateway.score(
                    ScoringRequest(
                        model_id=model_id,
                        prompt=render_prompt(cfg, question.prompt),
                        completion=record.text,
                    )
                )
                tokens_by_record.setdefault(record.id, {})[role] = spans
                scored.append(
                    replace(
                        record,
                        model_id=model_id,
                        model_role=role,
                        tokens=spans,
                        provenance="scored",
                    )
                )
            counts[pool][role] = write_records(scored, paths.scored(pool, role))

        stats: list[SentenceStatsRecord] = []
        for record in candidates:
            per_role = tokens_by_record.get(record.id, {})
            if "teacher" not in per_role or "student" not in per_role:
                continue
            stats.extend(_sentence_stats(cfg, record, per_role))
        counts[pool]["sentences"] = write_records(stats, paths.sentences(pool))
    return {"scored": counts}


# ---------------------------------------------------------------------------
# sentence statistics shared by classify and select
# ---------------------------------------------------------------------------


def _sentence_stats(
    cfg: PipelineConfig,
    record: ResponseRecord,
    tokens_by_role: Mapping[str, Sequence],
) -> list[SentenceStatsRecord]:
    """Segment a response and compute per-sentence mean logprobs and token
    counts. Sentences where the teacher or student tokenization is empty are
    dropped; an empty distilled tokenization only omits the distilled fields
    (selection works from two models, classification needs all three)."""
    spans = segment(
        record.text, min_chars=cfg.segmenter.min_chars,
        punctuation=tuple(cfg.segmenter.punctuation),
    )
    ranges = {role: assign_tokens(spans, toks) for role, toks in tokens_by_role.items()}

    def span_mean(role: str, i: int) -> tuple[float, int] | None:
        lo, hi = ranges[role][i]
        if hi <= lo:
            return None
        toks = tokens_by_role[role]
        return likelihood.mean_logprob([t.logprob for t in toks[lo:hi]]), hi - lo

    stats = []
    for i, span in enumerate(spans):
        teacher = span_mean("teacher", i)
        student = span_mean("student", i)
        if teacher is None or student is None:
            continue
        distilled = span_mean("distilled", i) if "distilled" in ranges else None
        stats.append(
            SentenceStatsRecord(
                response_id=record.id,
                question_id=record.question_id,
                sentence_index=span.index,
                char_start=span.char_start,
                char_end=span.char_end,
                mean_lp_teacher=teacher[0],
                mean_lp_student=student[0],
                token_count_teacher=teacher[1],
                token_count_student=student[1],
                mean_lp_distilled=distilled[0] if distilled else None,
                token_count_distilled=distilled[1] if distilled else None,
            )
        )
    return stats


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


def cmd_classify(cfg: PipelineConfig) -> dict:
    """Turn the scored sentence statistics into source-type labels. Requires
    the distilled model's logprobs: three-model analysis only."""
    paths = layout(cfg)
    counts = {}
    for pool in POOLS:
        stats = read_records(paths.sentences(pool), SentenceStatsRecord)
        if stats and all(s.mean_lp_distilled is None for s in stats):
            raise PipelineError(
                "sentence statistics carry no distilled-model logprobs; set "
                "models.distilled and re-run score before classifying"
            )
        labels: list[SentenceLabelRecord] = []
        for row in stats:
            if row.mean_lp_distilled is None:
                continue
            triple = SentenceTriple(
                sentence_index=row.sentence_index,
                mean_lp_teacher=row.mean_lp_teacher,
                mean_lp_student=row.mean_lp_student,
                mean_lp_distilled=row.mean_lp_distilled,
            )
            label = divergence.classify_sentence(triple, tau=cfg.tau)
            labels.append(
                SentenceLabelRecord(
                    response_id=row.response_id,
                    question_id=row.question_id,
                    sentence_index=row.sentence_index,
                    char_start=row.char_start,
                    char_end=row.char_end,
                    mean_lp_teacher=row.mean_lp_teacher,
                    mean_lp_student=row.mean_lp_student,
                    mean_lp_distilled=row.mean_lp_distilled,
                    label=label.value,
                )
            )
        counts[pool] = write_records(labels, paths.labels(pool))
    return {"labeled_sentences": counts}


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------


def cmd_select(cfg: PipelineConfig, gateway) -> dict:
    questions = load_questions(cfg)
    paths = layout(cfg)
    filter_cfg = _filter_config(cfg, gateway, questions)
    counts = {}
    for pool in POOLS:
        candidates = read_records(paths.candidates(pool), ResponseRecord)
        kept, _ = filter_pipeline(candidates, filter_cfg)
        eligible = {r.id for r in kept}
        by_response: dict[str, list] = {}
        for row in read_records(paths.sentences(pool), SentenceStatsRecord):
            by_response.setdefault(row.response_id, []).append(row)

        scored_candidates = []
        score_by_id = {}
        for record in candidates:
            if record.id not in eligible:
                continue
            rows = sorted(by_response.get(record.id, []), key=lambda r: r.sentence_index)
            if not rows:
                continue
            score = selection.das_score(
                [r.mean_lp_teacher for r in rows],
                [r.mean_lp_student for r in rows],
                [r.token_count_teacher for r in rows],
                tau=cfg.tau,
            )
            scored_candidates.append(
                selection.ScoredCandidate(
                    response_id=record.id,
                    question_id=record.question_id,
                    das_score=score,
                    sentence_count=len(rows),
                    token_count=sum(r.token_count_teacher for r in rows),
                )
            )
            score_by_id[record.id] = (record.question_id, score)

        chosen = selection.select(
            scored_candidates,
            budget=cfg.selection.budget,
            per_question_quota=cfg.selection.per_question_quota,
        )
        records = [
            SelectionRecord(response_id=rid, question_id=score_by_id[rid][0], das_score=score_by_id[rid][1])
            for rid in chosen
        ]
        counts[pool] = write_records(records, paths.selection(pool))
    return {"selected": counts}


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------


def cmd_filter(cfg: PipelineConfig, gateway, verbose: bool = False) -> dict:
    questions = load_questions(cfg)
    paths = layout(cfg)
    filter_cfg = _filter_config(cfg, gateway, questions)
    summary = {}
    for pool in POOLS:
        candidates = read_records(paths.candidates(pool), ResponseRecord)
        kept, report = filter_pipeline(candidates, filter_cfg)
        write_records(kept, paths.kept(pool))
        _write_json(paths.report(pool), report.to_dict())
        if verbose:
            lines = []
            for record_id, verdict in report.verdicts:
                lines.append(
                    json.dumps(
                        {
                            "v": 1,
                            "response_id": record_id,
                            "kept": verdict.kept,
                            "reasons": verdict.reasons,
                            "diagnostics": verdict.diagnostics,
                        },
                        ensure_ascii=False,
                    )
                )
            for record_id, message in report.errors:
                lines.append(
                    json.dumps(
                        {"v": 1, "response_id": record_id, "kept": False,
                         "reasons": ["error"], "diagnostics": message},
                        ensure_ascii=False,
                    )
                )
            paths.verdicts(pool).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        summary[pool] = report.to_dict()
    return {"filter": summary}


# ---------------------------------------------------------------------------
# build-stages
# ---------------------------------------------------------------------------


def _selected_kept(paths: WorkdirLayout, pool: str) -> list[ResponseRecord]:
    kept = read_records(paths.kept(pool), ResponseRecord)
    chosen_ids = {r.response_id for r in read_records(paths.selection(pool), SelectionRecord)}
    return [r for r in kept if r.id in chosen_ids]


def cmd_build_stages(cfg: PipelineConfig) -> dict:
    questions = {q.id: q for q in load_questions(cfg)}
    paths = layout(cfg)
    meta = cfg.scheduler.meta()
    low_pool = _selected_kept(paths, "low")
    if cfg.scheduler.single_stage:
        manifest = stages.build_single_stage(
            low_pool,
            questions,
            temperature=cfg.scheduler.low_T,
            source=str(paths.kept("low")),
            dataset_path=paths.stage_dataset(1),
            training_meta=meta,
        )
        write_records([manifest], paths.stage_manifest(1))
        return {"stages": {"stage1": manifest.selected_count}}
    high_pool = _selected_kept(paths, "high")
    stage1, stage2 = stages.build_stages(
        low_pool,
        high_pool,
        questions,
        low_dataset_path=paths.stage_dataset(1),
        high_dataset_path=paths.stage_dataset(2),
        low_source=str(paths.kept("low")),
        high_source=str(paths.kept("high")),
        low_temperature=cfg.scheduler.low_T,
        high_temperature=cfg.scheduler.high_T,
        training_meta=meta,
    )
    write_records([stage1], paths.stage_manifest(1))
    write_records([stage2], paths.stage_manifest(2))
    return {"stages": {"stage1": stage1.selected_count, "stage2": stage2.selected_count}}


# ---------------------------------------------------------------------------
# mixed-policy
# ---------------------------------------------------------------------------


def cmd_mixed_policy(cfg: PipelineConfig, gateway) -> dict:
    questions = {q.id: q for q in load_questions(cfg)}
    paths = layout(cfg)
    pool = cfg.mixed_policy.source_pool
    counter = gateway.counter(cfg.models.student)

    references: dict[str, int] = {}
    for record in _selected_kept(paths, pool):
        if record.question_id not in references:
            references[record.question_id] = counter.count(record.text)

    regen_questions = [questions[qid] for qid in sorted(references) if qid in questions]
    regenerations, regen_errors = regenerate(
        regen_questions,
        references,
        gateway,
        student_model_id=cfg.models.student,
        cap_factor=cfg.mixed_policy.cap_factor,
        temperature=cfg.mixed_policy.temperature,
        top_p=cfg.mixed_policy.top_p,
        seed=cfg.mixed_policy.seed,
        prompt_template=cfg.sampling.prompt_template,
    )
    regenerations.sort(key=lambda r: r.id)
    write_records(regenerations, paths.regenerations)

    table = cutoff_rate(regenerations, references, tuple(cfg.mixed_policy.bin_edges))
    write_cutoff_csv(table, paths.cutoff_csv)

    continuation_cfg = ContinuationConfig(
        teacher_model_id=cfg.models.teacher,
        markers=cfg.filters.marker_table(),
        counter=counter,
        max_tokens=cfg.filters.max_tokens,
        continuation_max_tokens=cfg.mixed_policy.continuation_max_tokens,
        temperature=cfg.mixed_policy.temperature,
        top_p=cfg.mixed_policy.top_p,
        prompt_template=cfg.mixed_policy.prompt_template,
        repetition=cfg.filters.repetition_config(),
    )
    cut_records = [r for r in regenerations if r.finish_reason == "length"]
    mixed = []
    rejections: dict[str, int] = {}
    for record in cut_records:
        question = questions.get(record.question_id)
        if question is None:
            rejections["error"] = rejections.get("error", 0) + 1
            continue
        mixed_record, reason = truncate_and_continue(
            record,
            question,
            gateway,
            continuation_cfg,
            seed=cfg.mixed_policy.seed,
            mask_prefix=cfg.mixed_policy.mask,
        )
        if mixed_record is None:
            rejections[reason] = rejections.get(reason, 0) + 1
        else:
            mixed.append(mixed_record)

    mixed.sort(key=lambda r: r.source_student_response_id)
    write_records(mixed, paths.mixed_records)
    examples = emit_training_examples(mixed, cfg.mixed_policy.mask, questions)
    write_records(examples, paths.mixed_dataset)

    retained = len(mixed)
    if not retained <= len(cut_records) <= len(regenerations):
        raise PipelineError("mixed-policy bookkeeping violated retained <= truncated <= regenerated")
    report = {
        "v": 1,
        "regenerated": len(regenerations),
        "gateway_errors": len(regen_errors),
        "cut_off": len(cut_records),
        "retained": retained,
        "rejections": {k: rejections[k] for k in sorted(rejections)},
        "mask": cfg.mixed_policy.mask,
    }
    _write_json(paths.mixed_report, report)
    return {"mixed_policy": report}


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _response_correctness(
    record: ResponseRecord, question: QuestionRecord | None
) -> bool | None:
    if record.is_correct is not None:
        return record.is_correct
    if question is not None and question.reference_answer is not None:
        return boxed_answer_correct(record.text, question.reference_answer)
    return None


def cmd_analyze(cfg: PipelineConfig) -> dict:
    paths = layout(cfg)
    analysis = paths.analysis_dir
    figures = paths.figures_dir
    analysis.mkdir(parents=True, exist_ok=True)
    summary: dict = {}

    questions = (
        {q.id: q for q in load_questions(cfg)} if Path(cfg.questions).is_file() else {}
    )

    hists = {}
    for pool in POOLS:
        if not paths.candidates(pool).is_file():
            continue
        records = read_records(paths.candidates(pool), ResponseRecord)
        geomeans = [likelihood.response_geomean(r) for r in records if r.tokens]
        if not geomeans:
            continue
        hist = likelihood.density(geomeans, bins=cfg.analysis.bins)
        likelihood.write_histogram_csv(hist, analysis / f"histogram.{pool}.csv")
        hists[f"T={pool_temperature(cfg, pool)}"] = hist
    if hists:
        plots.plot_density_histograms(hists, figures / "likelihood_density.png")
        summary["histograms"] = sorted(hists)

    for pool in POOLS:
        if not paths.labels(pool).is_file():
            continue
        labels = read_records(paths.labels(pool), SentenceLabelRecord)
        by_response: dict[str, list[SentenceLabelRecord]] = {}
        for row in labels:
            by_response.setdefault(row.response_id, []).append(row)
        correctness: dict[str, bool] = {}
        if paths.candidates(pool).is_file():
            for record in read_records(paths.candidates(pool), ResponseRecord):
                verdict = _response_correctness(record, questions.get(record.question_id))
                if verdict is not None:
                    correctness[record.id] = verdict
        pairs = []
        for response_id, rows in sorted(by_response.items()):
            if response_id not in correctness:
                continue
            rows.sort(key=lambda r: r.sentence_index)
            types = [divergence.SentenceType(r.label) for r in rows]
            pairs.append((types, correctness[response_id]))
        if not pairs:
            continue
        profiles = divergence.positionwise_profile(pairs, max_position=cfg.analysis.max_position)
        divergence.write_profile_csv(profiles, analysis / f"profile.{pool}.csv")
        deltas = {}
        supported = [
            p.position
            for p in profiles
            if p.fraction_correct is not None and p.fraction_incorrect is not None
        ]
        max_supported = 0
        for pos in range(1, cfg.analysis.max_position + 1):
            if pos in supported:
                max_supported = pos
            else:
                break
        if max_supported > 0:
            for t in SENTENCE_TYPES:
                deltas[t.value] = divergence.delta_area(profiles, t, max_supported)
        with open(analysis / f"delta.{pool}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["type", "delta", "max_position"])
            for t in SENTENCE_TYPES:
                if t.value in deltas:
                    writer.writerow([t.value, repr(deltas[t.value]), max_supported])
        plots.plot_position_profiles(profiles, deltas, figures / f"profile.{pool}.png")
        summary.setdefault("profiles", []).append(pool)

    if paths.cutoff_csv.is_file():
        bins = []
        with open(paths.cutoff_csv, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                bins.append(
                    CutoffBin(
                        length_lo=int(row["length_lo"]),
                        length_hi=int(row["length_hi"]),
                        total=int(row["total"]),
                        cut_off=int(row["cut_off"]),
                    )
                )
        table = CutoffTable(bins=bins)
        write_cutoff_csv(table, analysis / "cutoff.csv")
        plots.plot_cutoff_table(table, figures / "cutoff.png")
        summary["cutoff"] = True
    return {"analyze": summary}


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def cmd_oracle(cfg: PipelineConfig) -> dict:
    paths = layout(cfg)
    out = paths.oracle_dir
    figures = out / "figures"
    out.mkdir(parents=True, exist_ok=True)
    o = cfg.oracle

    teacher, student = toylm.two_sequence_models()
    p_t = toylm.enumerate_distribution(teacher)
    p_s = toylm.enumerate_distribution(student)
    rows = [
        ("two_sequence_kl", toylm.seq_kl(p_t, p_s)),
        ("two_sequence_ce", toylm.seq_ce(p_t, p_s)),
        ("two_sequence_entropy", toylm.entropy(p_t)),
        ("mc_sft_estimate", toylm.mc_sft_loss(teacher, student, o.mc_samples, o.seed)),
        ("mc_sft_self_estimate", toylm.mc_sft_loss(teacher, teacher, o.mc_samples, o.seed + 1)),
    ]

    max_identity_dev = 0.0
    min_kl = math.inf
    max_point_mass_dev = 0.0
    for i in range(o.identity_pairs):
        lm_a = toylm.random_toylm(3, 4, seed=o.seed * 1000 + i)
        lm_b = toylm.random_toylm(3, 4, seed=o.seed * 2000 + i)
        d_a = toylm.enumerate_distribution(lm_a)
        d_b = toylm.enumerate_distribution(lm_b)
        kl = toylm.seq_kl(d_a, d_b)
        ce = toylm.seq_ce(d_a, d_b)
        ent = toylm.entropy(d_a)
        max_identity_dev = max(max_identity_dev, abs(kl - (ce - ent)))
        min_kl = min(min_kl, kl)
    probe = toylm.enumerate_distribution(toylm.random_toylm(3, 4, seed=o.seed))
    for seq, prob in probe.probs.items():
        dev = abs(toylm.seq_ce(toylm.point_mass(seq, probe.eot), probe) - (-math.log(prob)))
        max_point_mass_dev = max(max_point_mass_dev, dev)
    rows += [
        ("identity_max_abs_dev", max_identity_dev),
        ("gibbs_min_kl", min_kl),
        ("point_mass_max_abs_dev", max_point_mass_dev),
    ]
    with open(out / "identities.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "value"])
        for name, value in rows:
            writer.writerow([name, repr(value)])

    base = toylm.toylm_from_sequences({"a": 0.8, "b": 0.2})
    with open(out / "temperature.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["temperature", "p_a", "p_b", "entropy"])
        for t in (0.25, 0.5, 1.0, 2.0, 4.0):
            reshaped = toylm.apply_temperature(base, t)
            vec = reshaped.conditionals[()]
            writer.writerow([repr(t), repr(vec[0]), repr(vec[1]),
                             repr(toylm.conditional_entropy(vec))])

    toy = toylm.coverage_toy()
    coverages = {}
    for t in (o.low_temperature, o.high_temperature):
        coverages[t] = toylm.support_coverage(
            toy, t, n=o.coverage_draws, trials=o.coverage_trials, seed=o.seed
        )
    with open(out / "coverage.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["temperature", "mean_coverage", "draws", "trials"])
        for t in sorted(coverages):
            writer.writerow([repr(t), repr(coverages[t]), o.coverage_draws, o.coverage_trials])
    plots.plot_coverage(coverages, figures / "coverage.png")

    return {
        "oracle": {
            "two_sequence_kl": rows[0][1],
            "coverage_gap": coverages[o.high_temperature] - coverages[o.low_temperature],
        }
    }
