"""Matplotlib figures written next to the CLI's machine-readable reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "spikeaccel",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamps in metadata, so reruns produce identical files
    meta = {"Software": None} if path.suffix == ".png" else {"Date": None}
    fig.savefig(path, dpi=150, bbox_inches="tight", metadata=meta)
    plt.close(fig)
    return path


def plot_workload(profile, path, title: str | None = None) -> Path:
    """Bar chart of each compute layer's share of the total workload."""
    names = [l.name for l in profile.layers]
    total = sum(profile.workloads) or 1
    shares = [100.0 * w / total for w in profile.workloads]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.4))
        bars = ax.bar(names, shares, color="#4c72b0", width=0.6)
        for bar, s in zip(bars, shares):
            ax.annotate(f"{s:.1f}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", fontsize=7)
        ax.set_ylabel("workload share [%]")
        ax.set_ylim(0, max(shares + [1.0]) * 1.15)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_cycles(cycle_report, path, title: str | None = None) -> Path:
    """Stacked per-layer latency: overlapped PENC/accumulation, activation, fill."""
    rows = [l for l in cycle_report.layers if l.kind != "pool"]
    names = [l.name for l in rows]
    main = [max(l.penc_cycles, l.accum_cycles) for l in rows]
    activ = [l.activ_cycles for l in rows]
    fill = [l.pipeline_overhead_cycles for l in rows]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.4))
        ax.bar(names, main, width=0.6, label="accum / PENC", color="#4c72b0")
        ax.bar(names, activ, width=0.6, bottom=main, label="activation", color="#dd8452")
        bottom = [a + b for a, b in zip(main, activ)]
        ax.bar(names, fill, width=0.6, bottom=bottom, label="pipeline fill", color="#55a868")
        ax.set_ylabel("cycles")
        ax.legend(frameon=False)
        ax.set_title(title or f"total {cycle_report.network_total} cycles")
        return _save(fig, path)
