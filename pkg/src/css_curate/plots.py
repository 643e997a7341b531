"""Figures for the report subcommand."""

import matplotlib

matplotlib.use("Agg")
from matplotlib import pyplot as plt  # noqa: E402

from .semisup import format_threshold  # noqa: E402

STYLE = {
    "font.family": "sans-serif",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "pdf.fonttype": 42,
    "svg.hashsalt": "css-curate",  # stable ids in svg output
}


def plot_cumulative(rows, path, title=None):
    """Bar chart of hours above each WMER threshold, labelled with the share of the corpus."""
    labels = [">" + format_threshold(r.threshold) for r in rows]
    hours = [r.hours for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        bars = ax.bar(range(len(rows)), hours, color="#4c72b0", width=0.6)
        for bar, r in zip(bars, rows):
            ax.annotate(f"{r.percent_text}%", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", fontsize=7, xytext=(0, 2),
                        textcoords="offset points")
        ax.set_xticks(range(len(rows)), labels)
        ax.set_xlabel("WMER threshold (%)")
        ax.set_ylabel("duration (hrs)")
        if title:
            ax.set_title(title)
        ax.margins(y=0.12)
        fig.tight_layout()
        # no timestamp so repeated runs write identical files
        fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
        plt.close(fig)
