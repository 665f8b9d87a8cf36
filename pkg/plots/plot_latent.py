"""Scatter the per-modality latent posteriors, colored by label.

usage: python plot_latent.py <latent.csv> <out.png>

One panel per modality column value; well-aligned marginal posteriors show
the same class structure in both panels.
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from schema_check import main_guard, read_rows

LABEL_COLORS = {0: "#c8b400", 1: "#3a9e3a"}


def plot_latent(latent_csv, out_image):
    rows = read_rows(latent_csv, "latent")
    modalities = sorted({r["modality"] for r in rows})
    fig, axes = plt.subplots(1, max(len(modalities), 1),
                             figsize=(5 * max(len(modalities), 1), 4.5),
                             dpi=120, squeeze=False)
    for ax, mod in zip(axes[0], modalities):
        for lab, color in LABEL_COLORS.items():
            pts = [(r["g_a"], r["g_b"]) for r in rows
                   if r["modality"] == mod and r["label"] == lab]
            if pts:
                xs, ys = zip(*pts)
                ax.scatter(xs, ys, s=6, c=color, alpha=0.4, label=f"label {lab}")
        ax.set_title(f"posterior over latent given {mod}")
        ax.set_xlabel("g_a")
        ax.set_ylabel("g_b")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_image)
    plt.close(fig)


if __name__ == "__main__":
    sys.exit(main_guard(plot_latent, sys.argv[1:],
                        "plot_latent.py <latent.csv> <out.png>"))
