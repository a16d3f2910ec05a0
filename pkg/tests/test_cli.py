import csv
import json

import pytest

from seqdistill.cli import main
from seqdistill.records import (
    QuestionRecord,
    ResponseRecord,
    SelectionRecord,
    TrainingExampleRecord,
    read_records,
    write_records,
)


@pytest.fixture()
def workspace(tmp_path):
    questions = [
        QuestionRecord(id=f"q{i:03d}", domain="math", prompt=f"Question {i}, please solve.")
        for i in range(6)
    ]
    write_records(questions, tmp_path / "questions.jsonl")
    cfg = {
        "questions": "questions.jsonl",
        "workdir": "out",
        "sampling": {"max_tokens": 400, "candidates_per_question": 2, "seed": 99},
        "filters": {
            "markers": {
                "analysis_start": "[", "analysis_end": "]",
                "final_start": "{", "final_end": "}", "tool_markers": ["!"],
            }
        },
        "selection": {"budget": 6, "per_question_quota": 1},
        "mixed_policy": {"seed": 7, "continuation_max_tokens": 500},
        "oracle": {"seed": 5, "identity_pairs": 10, "mc_samples": 20000,
                   "coverage_trials": 100, "coverage_draws": 20},
    }
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    return tmp_path


def run(workspace, command, *extra):
    return main([command, "--config", str(workspace / "config.json"), *extra])


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, workspace):
        assert main(["frobnicate", "--config", str(workspace / "config.json")]) == 1

    def test_no_command_is_usage_error(self):
        assert main([]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0

    def test_missing_config_file(self, tmp_path):
        assert main(["sample", "--config", str(tmp_path / "nope.json")]) == 1

    def test_missing_questions_file(self, tmp_path):
        (tmp_path / "config.json").write_text(json.dumps({"questions": "absent.jsonl"}))
        assert main(["sample", "--config", str(tmp_path / "config.json")]) == 1

    def test_unknown_config_key_rejected(self, tmp_path):
        (tmp_path / "config.json").write_text(json.dumps({"nonsense": 1}))
        assert main(["oracle", "--config", str(tmp_path / "config.json")]) == 1

    def test_held_lock_is_runtime_error(self, workspace):
        out = workspace / "out"
        out.mkdir()
        (out / ".lock").write_text("12345")
        assert run(workspace, "oracle") == 2
        (out / ".lock").unlink()
        assert run(workspace, "oracle") == 0

    def test_lock_released_after_run(self, workspace):
        assert run(workspace, "oracle") == 0
        assert not (workspace / "out" / ".lock").exists()

    def test_runtime_error_exit_two(self, workspace):
        # score before sample: candidates file missing
        assert run(workspace, "score") == 2


class TestOracleCommand:
    def test_identities_csv_has_frozen_kl(self, workspace):
        assert run(workspace, "oracle") == 0
        with open(workspace / "out" / "oracle" / "identities.csv", newline="") as fh:
            rows = {r["name"]: float(r["value"]) for r in csv.DictReader(fh)}
        assert rows["two_sequence_kl"] == pytest.approx(0.130812, abs=1e-6)
        assert rows["two_sequence_ce"] == pytest.approx(0.6931471805599453, abs=1e-12)
        assert rows["identity_max_abs_dev"] < 1e-12
        assert rows["gibbs_min_kl"] >= 0.0
        assert rows["point_mass_max_abs_dev"] == 0.0

    def test_temperature_and_coverage_exports(self, workspace):
        assert run(workspace, "oracle") == 0
        out = workspace / "out" / "oracle"
        with open(out / "temperature.csv", newline="") as fh:
            temp_rows = {float(r["temperature"]): r for r in csv.DictReader(fh)}
        assert float(temp_rows[0.5]["p_a"]) == pytest.approx(0.64 / 0.68, abs=1e-12)
        assert float(temp_rows[1.0]["p_a"]) == pytest.approx(0.8, abs=1e-12)
        with open(out / "coverage.csv", newline="") as fh:
            cov = {float(r["temperature"]): float(r["mean_coverage"]) for r in csv.DictReader(fh)}
        assert cov[1.0] > cov[0.6]
        assert (out / "figures" / "coverage.png").is_file()


class TestPipelineCommands:
    def test_full_chain_and_artifacts(self, workspace):
        for command in ("sample", "score", "classify", "select", "filter",
                        "build-stages", "mixed-policy", "analyze"):
            assert run(workspace, command) == 0, command
        out = workspace / "out"
        candidates = read_records(out / "candidates.low.jsonl", ResponseRecord)
        assert len(candidates) == 12
        report = json.loads((out / "report.low.json").read_text())
        kept = sum(1 for _ in open(out / "kept.low.jsonl"))
        assert report["kept"] == kept
        assert report["kept"] + report["rejected"] == report["total"] == 12
        stage1 = read_records(out / "stage1.dataset.jsonl", TrainingExampleRecord)
        manifest = json.loads((out / "stage1.manifest.jsonl").read_text())
        assert manifest["selected_count"] == len(stage1)
        assert (out / "analysis" / "figures" / "likelihood_density.png").is_file()
        assert (out / "analysis" / "histogram.low.csv").is_file()
        assert (out / "analysis" / "cutoff.csv").is_file()
        assert (out / "analysis" / "figures" / "cutoff.png").is_file()
        # selected ids are a subset of kept ids
        kept_ids = {r.id for r in read_records(out / "kept.low.jsonl", ResponseRecord)}
        for row in read_records(out / "selection.low.jsonl", SelectionRecord):
            assert row.response_id in kept_ids

    def test_verbose_emits_verdicts(self, workspace):
        assert run(workspace, "sample") == 0
        assert run(workspace, "filter", "--verbose") == 0
        verdicts = [json.loads(line) for line in open(workspace / "out" / "verdicts.low.jsonl")]
        assert len(verdicts) == 12
        assert all(v["v"] == 1 for v in verdicts)

    def test_snapshot_reproduces_run(self, workspace):
        assert run(workspace, "sample") == 0
        first = (workspace / "out" / "candidates.low.jsonl").read_bytes()
        snapshot = workspace / "out" / "config.sample.json"
        assert snapshot.is_file()
        assert main(["sample", "--config", str(snapshot)]) == 0
        assert (workspace / "out" / "candidates.low.jsonl").read_bytes() == first

    def test_seed_override_changes_samples(self, workspace):
        assert run(workspace, "sample") == 0
        first = (workspace / "out" / "candidates.low.jsonl").read_bytes()
        assert run(workspace, "sample", "--seed", "12345") == 0
        assert (workspace / "out" / "candidates.low.jsonl").read_bytes() != first

    def test_classify_then_analyze_profiles_with_correctness(self, workspace):
        for command in ("sample", "score", "classify"):
            assert run(workspace, command) == 0
        # upstream verification: mark half the candidates correct
        out = workspace / "out"
        for pool in ("low", "high"):
            records = read_records(out / f"candidates.{pool}.jsonl", ResponseRecord)
            for i, record in enumerate(records):
                record.is_correct = i % 2 == 0
            write_records(records, out / f"candidates.{pool}.jsonl")
        assert run(workspace, "analyze") == 0
        profile = out / "analysis" / "profile.low.csv"
        assert profile.is_file()
        with open(profile, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["side"] for r in rows} == {"correct", "incorrect"}
        assert (out / "analysis" / "figures" / "profile.low.png").is_file()
        delta = out / "analysis" / "delta.low.csv"
        assert delta.is_file()


class TestFilterFixtureViaCli:
    def test_planted_defect_report(self, tmp_path):
        from tests.test_acceptance import _planted_fixture

        write_records(
            [QuestionRecord(id="q1", domain="math", prompt="prompt")],
            tmp_path / "questions.jsonl",
        )
        out = tmp_path / "out"
        out.mkdir()
        for pool, temp in (("low", 0.6), ("high", 1.0)):
            records = _planted_fixture()
            for record in records:
                record.temperature = temp
            write_records(records, out / f"candidates.{pool}.jsonl")
        cfg = {
            "questions": "questions.jsonl",
            "workdir": "out",
            # the mock student counts characters: 800 passes every record
            # except the 300-word planted one
            "filters": {
                "max_tokens": 800,
                "markers": {"analysis_start": "<A>", "analysis_end": "</A>",
                             "final_start": "<F>", "final_end": "</F>",
                             "tool_markers": ["<CALL>"]},
            },
        }
        (tmp_path / "config.json").write_text(json.dumps(cfg))
        assert main(["filter", "--config", str(tmp_path / "config.json")]) == 0
        for pool in ("low", "high"):
            report = json.loads((out / f"report.{pool}.json").read_text())
            assert report["counts"] == {"function_call": 1, "too_long": 1,
                                        "repetition_ngram": 1}
            assert report["kept"] == 17
            assert report["total"] == 20


class TestAnalyticsDeterminism:
    def test_oracle_and_analyze_outputs_byte_identical(self, workspace):
        import hashlib

        for command in ("sample", "score", "classify", "mixed-policy" , "analyze", "oracle"):
            if command == "mixed-policy":
                # needs kept + selection inputs
                assert run(workspace, "select") == 0
                assert run(workspace, "filter") == 0
                assert run(workspace, "build-stages") == 0
            assert run(workspace, command) == 0
        out = workspace / "out"
        targets = [
            out / "oracle" / "identities.csv",
            out / "oracle" / "coverage.csv",
            out / "oracle" / "figures" / "coverage.png",
            out / "analysis" / "histogram.low.csv",
            out / "analysis" / "figures" / "likelihood_density.png",
            out / "analysis" / "cutoff.csv",
        ]
        first = {p: hashlib.sha256(p.read_bytes()).hexdigest() for p in targets}
        assert run(workspace, "analyze") == 0
        assert run(workspace, "oracle") == 0
        for p, digest in first.items():
            assert hashlib.sha256(p.read_bytes()).hexdigest() == digest, p


class TestSentenceStats:
    def test_stats_match_independent_recomputation(self, workspace):
        import math

        from seqdistill.records import SentenceStatsRecord
        from seqdistill.segmenter import assign_tokens, segment

        assert run(workspace, "sample") == 0
        assert run(workspace, "score") == 0
        out = workspace / "out"
        stats = read_records(out / "sentences.low.jsonl", SentenceStatsRecord)
        assert stats
        candidates = {r.id: r for r in read_records(out / "candidates.low.jsonl", ResponseRecord)}
        scored = {r.id: r for r in read_records(out / "scored.low.teacher.jsonl", ResponseRecord)}
        for row in stats[:40]:
            text = candidates[row.response_id].text
            assert 0 <= row.char_start < row.char_end <= len(text)
            spans = segment(text)
            ranges = assign_tokens(spans, scored[row.response_id].tokens)
            lo, hi = ranges[row.sentence_index]
            tokens = scored[row.response_id].tokens[lo:hi]
            oracle = math.fsum(t.logprob for t in tokens) / len(tokens)
            assert row.mean_lp_teacher == pytest.approx(oracle, abs=1e-12)
            assert row.token_count_teacher == len(tokens)
            assert row.mean_lp_distilled is not None

    def test_two_model_flow_without_distilled(self, workspace):
        cfg = json.loads((workspace / "config.json").read_text())
        cfg["models"] = {"teacher": "mock-teacher", "student": "mock-student",
                         "distilled": None}
        (workspace / "config.json").write_text(json.dumps(cfg))
        assert run(workspace, "sample") == 0
        assert run(workspace, "score") == 0
        out = workspace / "out"
        assert not (out / "scored.low.distilled.jsonl").exists()
        from seqdistill.records import SentenceStatsRecord

        stats = read_records(out / "sentences.low.jsonl", SentenceStatsRecord)
        assert stats and all(s.mean_lp_distilled is None for s in stats)
        # selection works from two models; classification refuses clearly
        assert run(workspace, "select") == 0
        assert run(workspace, "classify") == 2


class TestSingleStage:
    def test_single_stage_builds_only_stage_one(self, workspace):
        for command in ("sample", "score", "select", "filter"):
            assert run(workspace, command) == 0
        cfg = json.loads((workspace / "config.json").read_text())
        cfg["scheduler"] = {"single_stage": True}
        (workspace / "config.json").write_text(json.dumps(cfg))
        assert run(workspace, "build-stages") == 0
        out = workspace / "out"
        assert (out / "stage1.dataset.jsonl").is_file()
        assert not (out / "stage2.dataset.jsonl").exists()
        manifest = json.loads((out / "stage1.manifest.jsonl").read_text())
        assert manifest["stage_id"] == 1
        assert manifest["init_from"] == "base_student"
