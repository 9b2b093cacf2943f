"""Figures written next to the tab-delimited reports."""

import math
from contextlib import contextmanager

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def figsize(scale=1.0, ratio=None):
    width = 6.0 * scale
    ratio = ratio or (math.sqrt(5.0) - 1.0) / 2.0
    return width, width * ratio


@contextmanager
def style():
    with plt.rc_context(RC):
        yield


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_traces(traces, path, labels=None):
    """Objective and gradient max-norm per epoch, one line per run."""
    labels = labels or [f"run {i}" for i in range(len(traces))]
    with style():
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=figsize(1.4, 0.4))
        for trace, label in zip(traces, labels):
            epochs = [r.epoch for r in trace.rows]
            ax1.plot(epochs, [r.objective for r in trace.rows], label=label)
            ax2.semilogy(epochs, [max(r.grad_norm, 1e-12) for r in trace.rows], label=label)
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("objective")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("gradient max-norm")
        ax1.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_pmi_histogram(values, path, bins=50):
    with style():
        fig, ax = plt.subplots(figsize=figsize(0.8))
        ax.hist(values, bins=bins, color="0.35")
        ax.set_xlabel("PMI")
        ax.set_ylabel("entity pairs")
        return _save(fig, path)


def plot_dimension_coherence(per_dim, path, baseline=None, k=5):
    """Histogram of per-dimension Coherence@k, optionally against a baseline."""
    with style():
        fig, ax = plt.subplots(figsize=figsize(0.8))
        series = [("proposed" if baseline is not None else "model", per_dim)]
        if baseline is not None:
            series.insert(0, ("baseline", baseline))
        lo = min(float(np.min(s)) for _, s in series)
        hi = max(float(np.max(s)) for _, s in series)
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, 30)
        for label, s in series:
            ax.hist(s, bins=edges, alpha=0.6, label=label)
        ax.set_xlabel(f"Coherence@{k} per dimension")
        ax.set_ylabel("dimensions")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_metric_comparison(aggregates, path):
    """Grouped bars with std error bars; ``aggregates`` maps label -> {metric: (mean, std)}."""
    labels = list(aggregates)
    metrics = [m for m in aggregates[labels[0]] if all(m in aggregates[l] for l in labels)]
    with style():
        ncols = min(4, len(metrics))
        nrows = math.ceil(len(metrics) / ncols)
        fig, axes = plt.subplots(nrows, ncols, figsize=figsize(1.4, 0.3 * nrows), squeeze=False)
        for ax, metric in zip(axes.flat, metrics):
            means = [aggregates[l][metric][0] for l in labels]
            stds = [aggregates[l][metric][1] for l in labels]
            ax.bar(range(len(labels)), means, yerr=stds, color=["0.6", "0.25"][:len(labels)] * 4,
                   capsize=3)
            ax.set_xticks(range(len(labels)))
            ax.set_xticklabels(labels)
            ax.set_title(metric)
        for ax in list(axes.flat)[len(metrics):]:
            ax.set_visible(False)
        fig.tight_layout()
        return _save(fig, path)
