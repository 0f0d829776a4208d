"""Tradeoff figures rendered from report rows."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.linewidth": 0.6,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "legend.frameon": False,
    "svg.hashsalt": "rcprune",
}
# no timestamps or version strings in the files
PNG_META = {"Software": None}


def _ok(rows):
    return [r for r in rows if r.get("perf") is not None]


def plot_perf_vs_rate(rows, path):
    """One panel per bit-width: performance against pruning rate, one line per pruner."""
    rows = _ok(rows)
    qs = sorted({r["q"] for r in rows})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(len(qs), 1), sharey=True, squeeze=False,
                                 figsize=(3.0 * max(len(qs), 1), 3.0))
        for ax, q in zip(axes[0], qs):
            sub = [r for r in rows if r["q"] == q]
            for pruner in sorted({r["pruner"] for r in sub}):
                pts = sorted((r["p"], r["perf"]) for r in sub if r["pruner"] == pruner)
                ax.plot([p for p, _ in pts], [v for _, v in pts], marker="o", label=pruner)
            ax.set_title(f"q = {q}")
            ax.set_xlabel("pruning rate (%)")
        if rows:
            axes[0][0].set_ylabel(rows[0]["metric"])
            axes[0][-1].legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, metadata=PNG_META)
        plt.close(fig)
    return Path(path)


def plot_perf_vs_cost(rows, path):
    """Performance against estimated LUTs for every costed configuration."""
    rows = [r for r in _ok(rows) if r.get("est_luts") is not None]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for q in sorted({r["q"] for r in rows}):
            sub = sorted((r["est_luts"], r["perf"], r["p"]) for r in rows if r["q"] == q)
            ax.plot([c for c, _, _ in sub], [v for _, v, _ in sub], marker="o", linestyle="", label=f"q = {q}")
            for c, v, p in sub:
                ax.annotate(f"{p:g}", (c, v), fontsize=6, xytext=(2, 2), textcoords="offset points")
        ax.set_xlabel("estimated LUTs")
        if rows:
            ax.set_ylabel(rows[0]["metric"])
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, metadata=PNG_META)
        plt.close(fig)
    return Path(path)
