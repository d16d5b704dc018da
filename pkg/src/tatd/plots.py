"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

LABELS = {
    "tatd": "TATD",
    "tatd_no_penalty": "TATD w/o sparsity penalty",
    "cp_als": "CP-ALS",
    "als_adam": "ALS + Adam",
    "als_sgd": "ALS + SGD",
    "alt_adam": "Alternating Adam",
    "adam": "Adam",
    "sgd": "SGD",
}


def new_figure(width=4.5, height=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height or width * GOLDEN))
    return fig, ax


def save(fig, path):
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return str(path)


def density_histogram(counts, path):
    """Histogram of per-slice nonzero counts: how many time indices hold a
    given number of observed entries."""
    counts = np.asarray(counts)
    fig, ax = new_figure()
    bins = min(50, max(1, len(np.unique(counts))))
    ax.hist(counts, bins=bins, color="0.35", edgecolor="white", linewidth=0.4)
    ax.set_xlabel("nonzeros per time slice")
    ax.set_ylabel("number of time indices")
    return save(fig, path)


def _lines(ax, rows, x, group):
    for key in dict.fromkeys(r[group] for r in rows):
        pts = sorted((r[x], r["rmse"]) for r in rows if r[group] == key)
        ax.plot(*zip(*pts), marker="o", ms=3, label=LABELS.get(key, key))
    ax.legend(frameon=False)


def sparsity_curve(rows, path):
    fig, ax = new_figure()
    _lines(ax, rows, "rate", "method")
    ax.set_xlabel("sampling ratio")
    ax.set_ylabel("test RMSE")
    return save(fig, path)


def penalty_curve(rows, path):
    fig, ax = new_figure()
    pts = sorted((r["lambda_t"], r["rmse"]) for r in rows)
    ax.plot(*zip(*pts), marker="o", ms=3, color="C0")
    ax.set_xscale("log")
    ax.set_xlabel(r"smoothing penalty $\lambda_t$")
    ax.set_ylabel("test RMSE")
    return save(fig, path)


def rank_curve(rows, path):
    fig, ax = new_figure()
    _lines(ax, rows, "rank", "method")
    ax.set_xlabel("rank")
    ax.set_ylabel("test RMSE")
    return save(fig, path)


def optimizer_tradeoff(rows, path):
    fig, ax = new_figure()
    for i, r in enumerate(rows):
        ax.scatter(r["seconds"], r["rmse"], color=f"C{i}", s=18,
                   label=LABELS.get(r["strategy"], r["strategy"]))
    ax.set_xlabel("running time (s)")
    ax.set_ylabel("test RMSE")
    ax.legend(frameon=False)
    return save(fig, path)


def training_curve(report, path):
    fig, ax = new_figure()
    it = [r.iteration for r in report.records]
    ax.plot(it, [r.train_rmse for r in report.records], label="train")
    ax.plot(it, [r.val_rmse for r in report.records], label="validation")
    if report.best_iteration is not None:
        ax.axvline(report.best_iteration, color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("RMSE")
    ax.legend(frameon=False)
    return save(fig, path)
