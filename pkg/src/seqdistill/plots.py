"""Matplotlib renderings of the pipeline analytics, written as PNG files
alongside the CSV exports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .divergence import SENTENCE_TYPES, PositionProfile
from .likelihood import DensityHistogram
from .mixed_policy import CutoffTable

_TYPE_COLORS = {
    "Teacher": "#4daf4a",
    "Student": "#377eb8",
    "Shared": "#999999",
    "Boosted": "#e41a1c",
}


def _save(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_density_histograms(hists: Mapping[str, DensityHistogram], path: str | Path) -> None:
    """Overlayed response-likelihood densities, one step curve per label."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, hist in hists.items():
        ax.stairs(hist.densities, hist.bin_edges, label=f"{label} (n={hist.sample_count})")
    ax.set_xlabel("geometric-mean token probability")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_position_profiles(
    profiles: Sequence[PositionProfile],
    deltas: Mapping[str, float],
    path: str | Path,
) -> None:
    """Per-type fractions by sentence position: solid lines for correct
    responses, dashed for incorrect."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    positions = [p.position for p in profiles]
    for t in SENTENCE_TYPES:
        color = _TYPE_COLORS[t.value]
        correct = [
            p.fraction_correct[t] if p.fraction_correct is not None else float("nan")
            for p in profiles
        ]
        incorrect = [
            p.fraction_incorrect[t] if p.fraction_incorrect is not None else float("nan")
            for p in profiles
        ]
        delta = deltas.get(t.value)
        label = t.value if delta is None else f"{t.value} (Δ={delta:+.3f})"
        ax.plot(positions, correct, "-", color=color, label=label)
        ax.plot(positions, incorrect, "--", color=color)
    ax.set_xlabel("sentence position")
    ax.set_ylabel("fraction of responses")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_cutoff_table(table: CutoffTable, path: str | Path) -> None:
    """Cut-off ratio per reference-length bin (bins with no data skipped)."""
    rows = [b for b in table.bins if b.total > 0]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    labels = [f"{b.length_lo}-{b.length_hi}" for b in rows]
    ax.bar(range(len(rows)), [b.ratio for b in rows], color="#377eb8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_xlabel("reference response length (tokens)")
    ax.set_ylabel("cut-off ratio")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    _save(fig, path)


def plot_coverage(coverages: Mapping[float, float], path: str | Path) -> None:
    """Mean covered teacher mass per sampling temperature."""
    temps = sorted(coverages)
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.bar([str(t) for t in temps], [coverages[t] for t in temps], color="#4daf4a")
    ax.set_xlabel("sampling temperature")
    ax.set_ylabel("mean covered base-model mass")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    _save(fig, path)
