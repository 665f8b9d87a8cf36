"""Scatter generated samples over the faded data cloud.

usage: python plot_samples.py <data.csv> <samples.csv> <out.png>

Reproduces the generated-vs-data comparison: when label-conditional samples
collapse, they form a tight blob at the class mean instead of covering the
class spread. An empty samples file yields a data-only plot.
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from schema_check import main_guard, read_rows

DATA_COLORS = {"0": "#c8b400", "1": "#3a9e3a"}   # yellow / green classes
SOURCE_COLORS = {"prior": "#444444", "label:0": "#8a6d00", "label:1": "#1c5e1c"}


def plot_samples(data_csv, samples_csv, out_image):
    data = read_rows(data_csv, "dataset")
    samples = read_rows(samples_csv, "samples")

    fig, ax = plt.subplots(figsize=(6, 5), dpi=120)
    for lab, color in DATA_COLORS.items():
        xs = [r["x1_a"] for r in data if r["x2"] == lab]
        ys = [r["x1_b"] for r in data if r["x2"] == lab]
        ax.scatter(xs, ys, s=8, c=color, alpha=0.15, label=f"data class {lab}")
    by_source = {}
    for r in samples:
        by_source.setdefault(r["source"], []).append((r["x1_a"], r["x1_b"]))
    for source, pts in sorted(by_source.items()):
        xs, ys = zip(*pts)
        ax.scatter(xs, ys, s=10, c=SOURCE_COLORS.get(source, "#cc2222"),
                   alpha=0.6, label=f"generated ({source})")
    ax.set_xlabel("x1_a")
    ax.set_ylabel("x1_b")
    ax.set_title("generated samples vs data")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_image)
    plt.close(fig)


if __name__ == "__main__":
    sys.exit(main_guard(plot_samples, sys.argv[1:],
                        "plot_samples.py <data.csv> <samples.csv> <out.png>"))
