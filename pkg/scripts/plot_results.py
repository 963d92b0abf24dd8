"""Quick-look plots of experiment outputs (needs matplotlib).

    python scripts/plot_results.py results/hist_nf
    python scripts/plot_results.py results/fig_music

Histogram CSVs become bar charts per quantity and noise level; image slice
CSVs become pcolormesh panels.
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_histograms(path, plt):
    groups = defaultdict(list)
    for r in read_rows(path):
        groups[(r["quantity"], r["fraction"])].append(r)
    for (q, p), rows in groups.items():
        left = np.array([float(r["left"]) for r in rows])
        right = np.array([float(r["right"]) for r in rows])
        count = np.array([int(r["count"]) for r in rows])
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.bar(left, count, width=right - left, align="edge")
        ax.set_title(f"{q} at {float(p):.0%} noise")
        fig.tight_layout()
        fig.savefig(path.with_name(f"{path.stem}_{q}_{p}.png"), dpi=120)
        plt.close(fig)


def plot_slice(path, plt):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    header = Path(path).read_text().splitlines()[0].split(",")
    u, v = np.unique(data[:, 0]), np.unique(data[:, 1])
    img = data[:, 2].reshape(len(v), len(u)) if len(u) * len(v) == len(data) else None
    if img is None:
        return
    fig, ax = plt.subplots(figsize=(4, 3.5))
    mesh = ax.pcolormesh(u, v, img, shading="nearest")
    ax.set_xlabel(header[0])
    ax.set_ylabel(header[1])
    fig.colorbar(mesh, ax=ax)
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)


def main(dirs):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for d in map(Path, dirs):
        for path in sorted(d.glob("*_histograms.csv")):
            plot_histograms(path, plt)
        for path in sorted(d.glob("*slice*.csv")):
            plot_slice(path, plt)


if __name__ == "__main__":
    main(sys.argv[1:] or ["results"])
