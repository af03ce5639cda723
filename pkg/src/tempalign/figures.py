"""Matplotlib renderings of report artifacts.

The scoring/statistics layer emits CSV and JSON only; these helpers turn
those artifacts into PNG files next to them. Everything renders through the
Agg backend so the CLI works headless.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evalkit import Histogram, ShiftHistograms


def _bar_from_histogram(ax, hist: Histogram, label: str, color: str, alpha: float = 0.6):
    edges = np.asarray(hist.edges)
    widths = np.diff(edges)
    ax.bar(edges[:-1], hist.counts, width=widths, align="edge",
           label=label, color=color, alpha=alpha)


def score_figure(f1_values: Sequence[float], em_rate: float, out_path) -> None:
    """Distribution of per-example F1 with the EM rate in the title."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(f1_values, bins=20, range=(0.0, 1.0), color="#4878d0", edgecolor="white")
    ax.set_xlabel("per-example F1")
    ax.set_ylabel("count")
    ax.set_title(f"F1 distribution (n={len(f1_values)}, EM={em_rate:.3f})")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def shift_figure(shift: ShiftHistograms, out_path) -> None:
    """2x2 panel: positive and antagonist pairs, before vs after training."""
    fig, axes = plt.subplots(2, 2, figsize=(9, 7), sharex=True)
    panels = [
        ("positive before", shift.positive_before, axes[0][0], "#937860"),
        ("positive after", shift.positive_after, axes[0][1], "#4878d0"),
        ("antagonist before", shift.antagonist_before, axes[1][0], "#937860"),
        ("antagonist after", shift.antagonist_after, axes[1][1], "#d65f5f"),
    ]
    for title, hist, ax, color in panels:
        _bar_from_histogram(ax, hist, title, color, alpha=0.9)
        ax.axvline(hist.mean(), color="black", linestyle="--", linewidth=1)
        ax.set_title(f"{title} (mean {hist.mean():.3f})")
        ax.set_xlim(-1.0, 1.0)
    for ax in axes[1]:
        ax.set_xlabel("predicted similarity")
    for row in axes:
        row[0].set_ylabel("pairs")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def hw_grid_figure(
    rows: Sequence[Mapping], h_values: Sequence[int], w_values: Sequence[int], out_path
) -> None:
    """Heatmaps of KL divergence, prioritization factor, and sample size."""
    fields = [
        ("kl_divergence", "KL divergence", "{:.3f}"),
        ("prioritization_factor", "prioritization factor", "{:.2f}"),
        ("sample_size", "sample size", "{:d}"),
    ]
    lookup = {(row["h"], row["w"]): row for row in rows}
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for (field, title, fmt), ax in zip(fields, axes):
        grid = np.array(
            [[lookup[(h, w)][field] for w in w_values] for h in h_values], dtype=float
        )
        im = ax.imshow(grid, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(w_values)), [str(w) for w in w_values])
        ax.set_yticks(range(len(h_values)), [str(h) for h in h_values])
        ax.set_xlabel("w")
        ax.set_ylabel("h")
        ax.set_title(title)
        for i in range(len(h_values)):
            for j in range(len(w_values)):
                value = grid[i, j]
                ax.text(j, i, fmt.format(int(value) if fmt == "{:d}" else value),
                        ha="center", va="center", color="white", fontsize=8)
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def kshot_figure(per_k: Mapping[int, Mapping[str, float]], out_path) -> None:
    """Mean F1 and EM as a function of the number of in-context examples."""
    ks = sorted(per_k)
    f1 = [per_k[k]["mean_f1"] for k in ks]
    em = [per_k[k]["mean_em"] for k in ks]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, f1, marker="o", label="mean F1")
    ax.plot(ks, em, marker="s", label="mean EM")
    ax.set_xticks(ks)
    ax.set_xlabel("shots (K)")
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
