import math

import numpy as np
import pytest

from seqdistill.toylm import (
    DEFAULT_EOT,
    SupportError,
    ToyLM,
    ToyLMError,
    apply_temperature,
    conditional_entropy,
    coverage_toy,
    draw_sequence,
    enumerate_distribution,
    entropy,
    load_toylm,
    mc_sft_loss,
    point_mass,
    random_toylm,
    save_toylm,
    seq_ce,
    seq_kl,
    sequence_logprob,
    support_coverage,
    toylm_from_sequences,
    two_sequence_models,
)

LN2 = math.log(2)


class TestEnumerate:
    def test_two_sequence_example(self):
        lm = toylm_from_sequences({"": 0.7, "a": 0.3})
        dist = enumerate_distribution(lm)
        assert dist.probs == {
            (DEFAULT_EOT,): pytest.approx(0.7),
            ("a", DEFAULT_EOT): pytest.approx(0.3),
        }

    def test_deterministic_model_single_sequence(self):
        lm = toylm_from_sequences({"abc": 1.0})
        dist = enumerate_distribution(lm)
        assert dist.probs == {("a", "b", "c", DEFAULT_EOT): pytest.approx(1.0)}

    def test_random_model_mass_sums_to_one(self):
        for seed in range(20):
            lm = random_toylm(3, 4, seed=seed)
            dist = enumerate_distribution(lm)
            assert abs(math.fsum(dist.probs.values()) - 1.0) < 1e-12

    def test_enumeration_guard(self):
        lm = random_toylm(3, 4, seed=0)
        too_big = ToyLM(vocab=lm.vocab, eot=lm.eot, max_len=100, conditionals=lm.conditionals)
        with pytest.raises(ToyLMError, match="guard"):
            enumerate_distribution(too_big)

    def test_incomplete_model_is_error(self):
        lm = toylm_from_sequences({"ab": 1.0})
        broken = dict(lm.conditionals)
        del broken[("a",)]
        with pytest.raises(ToyLMError, match="terminate"):
            enumerate_distribution(
                ToyLM(vocab=lm.vocab, eot=lm.eot, max_len=lm.max_len, conditionals=broken)
            )

    def test_conditionals_must_sum_to_one(self):
        with pytest.raises(ToyLMError, match="sums"):
            ToyLM(
                vocab=("a", DEFAULT_EOT), eot=DEFAULT_EOT, max_len=2,
                conditionals={(): (0.5, 0.4), ("a",): (0.0, 1.0)},
            ).validate()


class TestDivergences:
    def test_identical_distributions_zero_kl(self):
        lm = random_toylm(2, 3, seed=5)
        dist = enumerate_distribution(lm)
        assert seq_kl(dist, dist) == pytest.approx(0.0, abs=1e-15)

    def test_frozen_kl_example(self):
        teacher, student = two_sequence_models()
        kl = seq_kl(enumerate_distribution(teacher), enumerate_distribution(student))
        assert kl == pytest.approx(0.130812, abs=1e-6)

    def test_frozen_ce_example(self):
        teacher, student = two_sequence_models()
        ce = seq_ce(enumerate_distribution(teacher), enumerate_distribution(student))
        assert ce == pytest.approx(LN2, abs=1e-12)

    def test_certain_event_zero_ce(self):
        lm = toylm_from_sequences({"a": 1.0})
        dist = enumerate_distribution(lm)
        assert seq_ce(dist, dist) == pytest.approx(0.0)

    def test_kl_equals_ce_minus_entropy_on_random_pairs(self):
        for i in range(100):
            p = enumerate_distribution(random_toylm(3, 4, seed=3000 + i))
            q = enumerate_distribution(random_toylm(3, 4, seed=4000 + i))
            kl = seq_kl(p, q)
            assert kl >= 0.0
            assert abs(kl - (seq_ce(p, q) - entropy(p))) < 1e-12

    def test_support_error(self):
        p = enumerate_distribution(toylm_from_sequences({"a": 0.4, "b": 0.6}))
        q = enumerate_distribution(toylm_from_sequences({"a": 1.0}))
        with pytest.raises(SupportError):
            seq_kl(p, q)

    def test_point_mass_recovers_negative_log_likelihood(self):
        lm = random_toylm(3, 4, seed=123)
        dist = enumerate_distribution(lm)
        for seq, prob in dist.probs.items():
            ce = seq_ce(point_mass(seq, lm.eot), dist)
            assert ce == -math.log(prob)


class TestMonteCarloSftLoss:
    def test_single_draw_equals_one_nll(self):
        teacher, student = two_sequence_models()
        est = mc_sft_loss(teacher, student, n=1, seed=11)
        rng = np.random.Generator(np.random.Philox(key=_mc_key(11)))
        seq = draw_sequence(teacher, rng)
        assert est == pytest.approx(-sequence_logprob(student, seq), abs=1e-15)

    def test_converges_to_cross_entropy(self):
        teacher, student = two_sequence_models()
        est = mc_sft_loss(teacher, student, n=100_000, seed=42)
        assert est == pytest.approx(LN2, abs=1e-2)

    def test_self_distillation_converges_to_entropy(self):
        teacher, _ = two_sequence_models()
        est = mc_sft_loss(teacher, teacher, n=100_000, seed=43)
        assert est == pytest.approx(entropy(enumerate_distribution(teacher)), abs=1e-2)

    def test_zero_support_student_raises(self):
        teacher = toylm_from_sequences({"a": 0.5, "b": 0.5})
        student = toylm_from_sequences({"a": 1.0})
        with pytest.raises(SupportError):
            mc_sft_loss(teacher, student, n=1000, seed=0)


def _mc_key(seed):
    from seqdistill.mockmodel import philox_key

    return philox_key("mc_sft", seed)


class TestTemperature:
    def test_t1_is_identity(self):
        lm = random_toylm(2, 3, seed=9)
        assert apply_temperature(lm, 1.0).conditionals == lm.conditionals

    def test_uniform_conditional_unchanged(self):
        lm = toylm_from_sequences({"a": 0.5, "b": 0.5})
        for t in (0.3, 0.7, 2.0, 5.0):
            row = apply_temperature(lm, t).conditionals[()]
            assert row[0] == pytest.approx(0.5, abs=1e-15)
            assert row[1] == pytest.approx(0.5, abs=1e-15)

    def test_frozen_half_temperature_example(self):
        lm = toylm_from_sequences({"a": 0.8, "b": 0.2})
        row = apply_temperature(lm, 0.5).conditionals[()]
        assert row[0] == pytest.approx(0.9412, abs=1e-4)
        assert row[1] == pytest.approx(0.0588, abs=1e-4)
        assert row[0] == pytest.approx(0.64 / 0.68, abs=1e-15)

    def test_low_temperature_approaches_argmax(self):
        lm = toylm_from_sequences({"a": 0.8, "b": 0.2})
        row = apply_temperature(lm, 0.01).conditionals[()]
        assert row[0] > 0.999999

    def test_flattening_raises_entropy(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            probs = rng.dirichlet([0.7] * 4)
            lm = toylm_from_sequences(
                {"a": probs[0], "b": probs[1], "c": probs[2], "d": probs[3]}
            )
            t1, t2 = sorted(rng.uniform(1.0, 6.0, size=2))
            h1 = conditional_entropy(apply_temperature(lm, t1).conditionals[()])
            h2 = conditional_entropy(apply_temperature(lm, t2).conditionals[()])
            assert h2 >= h1 - 1e-12

    def test_nonpositive_temperature_rejected(self):
        lm = toylm_from_sequences({"a": 1.0})
        with pytest.raises(ToyLMError):
            apply_temperature(lm, 0.0)


class TestSupportCoverage:
    def test_deterministic_model_full_coverage_at_one_draw(self):
        lm = toylm_from_sequences({"abc": 1.0})
        assert support_coverage(lm, 1.0, n=1, trials=10, seed=0) == pytest.approx(1.0)

    def test_exhaustive_draws_cover_everything(self):
        lm = toylm_from_sequences({"a": 0.5, "b": 0.5})
        assert support_coverage(lm, 1.0, n=500, trials=5, seed=0) == pytest.approx(1.0)

    def test_designed_toy_orders_temperatures(self):
        toy = coverage_toy()
        hot = support_coverage(toy, 1.0, n=20, trials=1000, seed=7)
        cold = support_coverage(toy, 0.6, n=20, trials=1000, seed=7)
        assert hot - cold >= 0.05

    def test_coverage_toy_shape(self):
        dist = enumerate_distribution(coverage_toy())
        masses = sorted(dist.probs.values(), reverse=True)
        assert masses[0] == pytest.approx(0.6)
        assert len(masses) == 11
        for rare in masses[1:]:
            assert rare == pytest.approx(0.04)


class TestDefinitionFile:
    def test_round_trip(self, tmp_path):
        lm = random_toylm(3, 3, seed=21)
        path = tmp_path / "model.jsonl"
        save_toylm(lm, path)
        back = load_toylm(path)
        assert back.vocab == lm.vocab
        assert back.max_len == lm.max_len
        assert back.conditionals == dict(lm.conditionals)

    def test_header_required(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text('{"record": "conditional", "context": [], "probs": [1.0]}\n')
        with pytest.raises(ToyLMError, match="header"):
            load_toylm(path)
