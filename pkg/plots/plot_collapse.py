"""Bar chart of the final collapse metrics from a training run record.

usage: python plot_collapse.py <runrecord.csv> <out.png>

Bars show the last eval point's per-class variance ratios (generated over
data variance, per dimension) and mean errors; ratios far below 1 on the
long axis are the collapse signature.
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from schema_check import main_guard, read_rows


def plot_collapse(runrecord_csv, out_image):
    rows = read_rows(runrecord_csv, "runrecord")
    last = rows[-1]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4), dpi=120)

    names = ["var_ratio_a_c0", "var_ratio_b_c0", "var_ratio_a_c1",
             "var_ratio_b_c1"]
    ax1.bar(range(4), [last[n] for n in names], color="#5577aa")
    ax1.axhline(1.0, color="k", lw=0.8, ls="--")
    ax1.set_xticks(range(4), ["a, c0", "b, c0", "a, c1", "b, c1"])
    ax1.set_ylabel("generated / data variance")
    ax1.set_title(f"variance ratios at epoch {last['epoch']}")

    ax2.bar([0, 1], [last["mean_err_c0"], last["mean_err_c1"]],
            color="#aa7755")
    ax2.set_xticks([0, 1], ["class 0", "class 1"])
    ax2.set_ylabel("|generated mean - data mean|")
    ax2.set_title("conditional mean error")
    fig.tight_layout()
    fig.savefig(out_image)
    plt.close(fig)


if __name__ == "__main__":
    sys.exit(main_guard(plot_collapse, sys.argv[1:],
                        "plot_collapse.py <runrecord.csv> <out.png>"))
