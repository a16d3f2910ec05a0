"""Geometric-mean likelihood statistics and probability-density histograms.

All likelihood math stays in log space (nats per token); probabilities are
materialized only at the API edge, since products over tens of thousands of
token probabilities underflow float64.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .records import ResponseRecord

DEFAULT_BINS = 50


class LikelihoodError(ValueError):
    pass


@dataclass
class DensityHistogram:
    """Normalized density over uniform probability bins on [0,1]."""

    bin_edges: list[float]
    densities: list[float]
    counts: list[int]
    sample_count: int

    def validate(self) -> None:
        total = sum(
            d * (hi - lo)
            for d, lo, hi in zip(self.densities, self.bin_edges[:-1], self.bin_edges[1:])
        )
        if abs(total - 1.0) > 1e-9:
            raise LikelihoodError(f"histogram mass {total} != 1")


def mean_logprob(token_logprobs: Sequence[float]) -> float:
    """Arithmetic mean of per-token logprobs; exp of it is the geometric-mean
    probability of the span."""
    if len(token_logprobs) == 0:
        raise LikelihoodError("mean_logprob of an empty span")
    bad = [lp for lp in token_logprobs if lp > 0]
    if bad:
        raise LikelihoodError(f"positive logprob {bad[0]} in span")
    return math.fsum(token_logprobs) / len(token_logprobs)


def response_geomean(record: ResponseRecord) -> float:
    """Geometric-mean token probability of a whole response."""
    if not record.tokens:
        raise LikelihoodError(
            f"record {record.id} has no token logprobs; score it before computing likelihoods"
        )
    return math.exp(mean_logprob([t.logprob for t in record.tokens]))


def density(values: Sequence[float], bins: int = DEFAULT_BINS) -> DensityHistogram:
    """Histogram of probabilities over uniform bins on [0,1], normalized so the
    densities integrate to 1. The value 1.0 lands in the last bin."""
    if len(values) == 0:
        raise LikelihoodError("cannot build a density from no values")
    if bins < 1:
        raise LikelihoodError(f"bins must be >= 1, got {bins}")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise LikelihoodError(f"probability {v} outside [0,1]")
    width = 1.0 / bins
    counts = [0] * bins
    for v in values:
        idx = min(int(v * bins), bins - 1)
        counts[idx] += 1
    n = len(values)
    densities = [c / (n * width) for c in counts]
    edges = [i / bins for i in range(bins + 1)]
    hist = DensityHistogram(bin_edges=edges, densities=densities, counts=counts, sample_count=n)
    hist.validate()
    return hist


def write_histogram_csv(hist: DensityHistogram, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "density", "count"])
        for lo, hi, d, c in zip(
            hist.bin_edges[:-1], hist.bin_edges[1:], hist.densities, hist.counts
        ):
            writer.writerow([repr(lo), repr(hi), repr(d), c])


def interquartile_range(values: Sequence[float]) -> float:
    """IQR via linear-interpolated quartiles, for spread comparisons across
    sampling temperatures."""
    if len(values) == 0:
        raise LikelihoodError("IQR of no values")
    xs = sorted(values)

    def quantile(q: float) -> float:
        pos = q * (len(xs) - 1)
        lo = int(math.floor(pos))
        hi = int(math.ceil(pos))
        if lo == hi:
            return xs[lo]
        frac = pos - lo
        return xs[lo] * (1 - frac) + xs[hi] * frac

    return quantile(0.75) - quantile(0.25)
