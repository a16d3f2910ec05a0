"""Fully enumerable toy autoregressive models and exact sequence-level
divergence math.

A ToyLM is a finite conditional table over a tiny vocabulary with an explicit
end-of-text symbol; every sequence terminates within ``max_len`` symbols, so
the complete sequence distribution can be enumerated exactly (guarded at 10^6
sequences). This backs exact checks of the chain: sequence KL -> sequence
cross-entropy (the dropped-entropy identity) -> point-mass approximation ->
average negative log-likelihood of sampled sequences, plus temperature
reshaping and mode-coverage measurements.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .mockmodel import philox_key

DEFAULT_EOT = "<eot>"
ENUMERATION_GUARD = 10**6

Sequence_ = tuple[str, ...]


class ToyLMError(ValueError):
    pass


class SupportError(ToyLMError):
    """The reference distribution assigns zero probability where needed."""


@dataclass(frozen=True)
class ToyLM:
    """Explicit conditional table: context (tuple of non-terminal symbols,
    shorter than max_len) -> probability vector aligned with ``vocab``."""

    vocab: tuple[str, ...]
    eot: str
    max_len: int
    conditionals: Mapping[Sequence_, tuple[float, ...]]

    def validate(self) -> None:
        if self.eot not in self.vocab:
            raise ToyLMError(f"end-of-text symbol {self.eot!r} missing from vocabulary")
        if self.max_len < 1:
            raise ToyLMError(f"max_len must be >= 1, got {self.max_len}")
        eot_idx = self.vocab.index(self.eot)
        for ctx, probs in self.conditionals.items():
            if len(ctx) >= self.max_len:
                raise ToyLMError(f"context {ctx!r} is not shorter than max_len {self.max_len}")
            if self.eot in ctx:
                raise ToyLMError(f"context {ctx!r} contains the end-of-text symbol")
            if len(probs) != len(self.vocab):
                raise ToyLMError(f"conditional for {ctx!r} has {len(probs)} entries")
            total = math.fsum(probs)
            if abs(total - 1.0) > 1e-12:
                raise ToyLMError(f"conditional for {ctx!r} sums to {total!r}")
            if any(p < 0 for p in probs):
                raise ToyLMError(f"negative probability in conditional for {ctx!r}")
            if len(ctx) == self.max_len - 1 and abs(probs[eot_idx] - 1.0) > 1e-12:
                raise ToyLMError(
                    f"context {ctx!r} at maximum depth must put probability 1 on end-of-text"
                )

    def conditional(self, ctx: Sequence_) -> tuple[float, ...]:
        try:
            return self.conditionals[ctx]
        except KeyError:
            raise ToyLMError(
                f"model has no conditional for reachable context {ctx!r}: "
                "the model does not terminate every sequence"
            ) from None


@dataclass
class SeqDistribution:
    """Probabilities of complete sequences (each ends with the eot symbol)."""

    probs: dict[Sequence_, float]
    eot: str

    def validate(self) -> None:
        total = math.fsum(self.probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ToyLMError(f"sequence probabilities sum to {total!r}")
        for seq in self.probs:
            if not seq or seq[-1] != self.eot:
                raise ToyLMError(f"sequence {seq!r} does not end with {self.eot!r}")


def _check_guard(lm: ToyLM) -> None:
    if len(lm.vocab) ** lm.max_len > ENUMERATION_GUARD:
        raise ToyLMError(
            f"enumeration of {len(lm.vocab)}^{lm.max_len} sequences exceeds the "
            f"{ENUMERATION_GUARD} guard"
        )


def enumerate_distribution(lm: ToyLM) -> SeqDistribution:
    """Exact probability of every complete sequence, by multiplying conditionals."""
    lm.validate()
    _check_guard(lm)
    eot_idx = lm.vocab.index(lm.eot)
    dist: dict[Sequence_, float] = {}
    stack: list[tuple[Sequence_, float]] = [((), 1.0)]
    while stack:
        ctx, mass = stack.pop()
        probs = lm.conditional(ctx)
        for idx, p in enumerate(probs):
            if p <= 0.0:
                continue
            if idx == eot_idx:
                dist[ctx + (lm.eot,)] = mass * p
            else:
                child = ctx + (lm.vocab[idx],)
                if len(child) >= lm.max_len:
                    raise ToyLMError(
                        f"sequence prefix {child!r} reaches max_len without end-of-text"
                    )
                stack.append((child, mass * p))
    result = SeqDistribution(probs=dist, eot=lm.eot)
    result.validate()
    return result


def seq_kl(p: SeqDistribution, q: SeqDistribution) -> float:
    """KL divergence between sequence distributions, in nats. Requires
    support(p) subset of support(q)."""
    total = 0.0
    for seq, pp in p.probs.items():
        if pp <= 0.0:
            continue
        qq = q.probs.get(seq, 0.0)
        if qq <= 0.0:
            raise SupportError(f"reference assigns zero probability to sequence {seq!r}")
        total += pp * (math.log(pp) - math.log(qq))
    return total


def seq_ce(p: SeqDistribution, q: SeqDistribution) -> float:
    """Cross-entropy -sum p(y) log q(y), in nats."""
    total = 0.0
    for seq, pp in p.probs.items():
        if pp <= 0.0:
            continue
        qq = q.probs.get(seq, 0.0)
        if qq <= 0.0:
            raise SupportError(f"reference assigns zero probability to sequence {seq!r}")
        total -= pp * math.log(qq)
    return total


def entropy(p: SeqDistribution) -> float:
    return -math.fsum(pp * math.log(pp) for pp in p.probs.values() if pp > 0.0)


def point_mass(seq: Sequence_, eot: str) -> SeqDistribution:
    """Distribution concentrated on one sampled sequence."""
    return SeqDistribution(probs={tuple(seq): 1.0}, eot=eot)


def sequence_logprob(lm: ToyLM, seq: Sequence_) -> float:
    """Log-probability of one complete sequence under the model."""
    if not seq or seq[-1] != lm.eot:
        raise ToyLMError(f"sequence {seq!r} does not end with {lm.eot!r}")
    total = 0.0
    for i, sym in enumerate(seq):
        ctx = tuple(seq[:i])
        try:
            idx = lm.vocab.index(sym)
        except ValueError:
            raise SupportError(f"symbol {sym!r} is not in the model vocabulary") from None
        p = lm.conditional(ctx)[idx]
        if p <= 0.0:
            raise SupportError(f"model assigns zero probability to {sym!r} after {ctx!r}")
        total += math.log(p)
    return total


def draw_sequence(lm: ToyLM, rng: np.random.Generator) -> Sequence_:
    """Sample one complete sequence autoregressively."""
    ctx: Sequence_ = ()
    while True:
        probs = lm.conditional(ctx)
        u = rng.random()
        cum = 0.0
        pick = None
        for idx, p in enumerate(probs):
            if p <= 0.0:
                continue
            cum += p
            pick = idx
            if u < cum:
                break
        assert pick is not None
        sym = lm.vocab[pick]
        if sym == lm.eot:
            return ctx + (lm.eot,)
        ctx = ctx + (sym,)


def mc_sft_loss(lm_t: ToyLM, lm_s: ToyLM, n: int, seed: int) -> float:
    """Average -log p_S(y) over n sequences sampled from lm_t.

    This is the sampled estimate of seq_ce(lm_t, lm_s): replacing the sampling
    distribution with a point mass at each draw turns the sequence objective
    into a plain negative log-likelihood.
    """
    if n < 1:
        raise ToyLMError(f"sample count must be >= 1, got {n}")
    rng = np.random.Generator(np.random.Philox(key=philox_key("mc_sft", seed)))
    total = 0.0
    for _ in range(n):
        seq = draw_sequence(lm_t, rng)
        total -= sequence_logprob(lm_s, seq)
    return total / n


def apply_temperature(lm: ToyLM, temperature: float) -> ToyLM:
    """Power-scale every conditional by 1/T and renormalize (logits / T).

    T=1 returns the model unchanged; T<1 sharpens toward the argmax; T>1
    flattens toward uniform over each conditional's support.
    """
    if temperature <= 0:
        raise ToyLMError(f"temperature must be positive, got {temperature}")
    if temperature == 1.0:
        return lm
    inv_t = 1.0 / temperature
    new_conditionals = {}
    for ctx, probs in lm.conditionals.items():
        powered = [p**inv_t for p in probs]
        z = math.fsum(powered)
        new_conditionals[ctx] = tuple(p / z for p in powered)
    return ToyLM(vocab=lm.vocab, eot=lm.eot, max_len=lm.max_len, conditionals=new_conditionals)


def support_coverage(lm: ToyLM, temperature: float, n: int, trials: int, seed: int) -> float:
    """Mean (over trials) base-model probability mass of the distinct
    sequences found in n draws from the temperature-reshaped model."""
    base = enumerate_distribution(lm)
    reshaped = apply_temperature(lm, temperature)
    coverages = []
    for trial in range(trials):
        rng = np.random.Generator(np.random.Philox(key=philox_key("coverage", seed, trial)))
        drawn = {draw_sequence(reshaped, rng) for _ in range(n)}
        coverages.append(math.fsum(base.probs[seq] for seq in drawn))
    return math.fsum(coverages) / len(coverages)


def conditional_entropy(probs: Sequence[float]) -> float:
    """Entropy of one conditional vector, in nats."""
    return -math.fsum(p * math.log(p) for p in probs if p > 0.0)


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def toylm_from_sequences(
    seq_probs: Mapping[Sequence[str] | str, float], eot: str = DEFAULT_EOT
) -> ToyLM:
    """Build the autoregressive model whose sequence distribution equals
    ``seq_probs`` exactly (sequences given without the terminator)."""
    probs: dict[Sequence_, float] = {}
    for seq, p in seq_probs.items():
        key = tuple(seq)
        if eot in key:
            raise ToyLMError(f"sequence {seq!r} mentions the end-of-text symbol")
        if p < 0:
            raise ToyLMError(f"negative probability for sequence {seq!r}")
        probs[key] = probs.get(key, 0.0) + p
    total = math.fsum(probs.values())
    if abs(total - 1.0) > 1e-9:
        raise ToyLMError(f"sequence probabilities sum to {total!r}")

    mass: dict[Sequence_, float] = {}
    for seq, p in probs.items():
        for k in range(len(seq) + 1):
            prefix = seq[:k]
            mass[prefix] = mass.get(prefix, 0.0) + p

    symbols = sorted({sym for seq in probs for sym in seq})
    vocab = tuple(symbols) + (eot,)
    max_len = max(len(seq) for seq in probs) + 1

    conditionals: dict[Sequence_, tuple[float, ...]] = {}
    for prefix, m in mass.items():
        if m <= 0.0:
            continue
        row = []
        for sym in symbols:
            row.append(mass.get(prefix + (sym,), 0.0) / m)
        row.append(probs.get(prefix, 0.0) / m)
        z = math.fsum(row)
        conditionals[prefix] = tuple(r / z for r in row)
    lm = ToyLM(vocab=vocab, eot=eot, max_len=max_len, conditionals=conditionals)
    lm.validate()
    return lm


def random_toylm(
    symbols: Sequence[str] | int,
    max_len: int,
    seed: int,
    eot: str = DEFAULT_EOT,
    concentration: float = 1.0,
) -> ToyLM:
    """Random model with strictly positive conditionals over all contexts (so
    any two models with the same shape have full mutual support)."""
    if isinstance(symbols, int):
        symbols = tuple("abcdefghijklmnop"[:symbols])
    symbols = tuple(symbols)
    vocab = symbols + (eot,)
    if len(vocab) ** max_len > ENUMERATION_GUARD:
        raise ToyLMError("requested random model exceeds the enumeration guard")
    rng = np.random.Generator(np.random.Philox(key=philox_key("random_toylm", seed)))
    conditionals: dict[Sequence_, tuple[float, ...]] = {}

    def fill(ctx: Sequence_) -> None:
        if len(ctx) == max_len - 1:
            row = [0.0] * len(symbols) + [1.0]
        else:
            weights = rng.dirichlet([concentration] * len(vocab))
            floor = 1e-3
            weights = (weights + floor) / (1.0 + floor * len(vocab))
            row = [float(w) for w in weights]
        conditionals[ctx] = tuple(row)
        if len(ctx) < max_len - 1:
            for sym in symbols:
                fill(ctx + (sym,))

    fill(())
    lm = ToyLM(vocab=vocab, eot=eot, max_len=max_len, conditionals=conditionals)
    lm.validate()
    return lm


def two_sequence_models() -> tuple[ToyLM, ToyLM]:
    """The canonical two-sequence teacher/student pair: teacher puts 0.75/0.25
    on the two sequences, the student is uniform."""
    teacher = toylm_from_sequences({"a": 0.75, "b": 0.25})
    student = toylm_from_sequences({"a": 0.5, "b": 0.5})
    return teacher, student


def coverage_toy() -> ToyLM:
    """One dominant mode plus ten rare modes, designed so low-temperature
    sampling concentrates on the mode: mode mass 0.6, each rare mode 0.04."""
    seqs: dict[str | Sequence[str], float] = {("mode",): 0.6}
    for i in range(10):
        seqs[(f"rare{i}",)] = 0.04
    return toylm_from_sequences(seqs)


# ---------------------------------------------------------------------------
# Definition-file I/O (one JSON record per line)
# ---------------------------------------------------------------------------


def save_toylm(lm: ToyLM, path: str | Path) -> None:
    lm.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = {
            "v": 1,
            "record": "header",
            "vocab": list(lm.vocab),
            "eot": lm.eot,
            "max_len": lm.max_len,
        }
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for ctx in sorted(lm.conditionals, key=lambda c: (len(c), c)):
            row = {
                "v": 1,
                "record": "conditional",
                "context": list(ctx),
                "probs": list(lm.conditionals[ctx]),
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_toylm(path: str | Path) -> ToyLM:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("record") != "header":
        raise ToyLMError(f"{path}: first line must be the model header")
    header = lines[0]
    conditionals = {
        tuple(row["context"]): tuple(float(p) for p in row["probs"])
        for row in lines[1:]
        if row.get("record") == "conditional"
    }
    lm = ToyLM(
        vocab=tuple(header["vocab"]),
        eot=header["eot"],
        max_len=int(header["max_len"]),
        conditionals=conditionals,
    )
    lm.validate()
    return lm
