"""Figures written next to the CSV outputs of the command line."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["figure_path", "plot_training", "plot_report"]


def figure_path(csv_path) -> Path:
    """``runs/metrics.csv`` -> ``runs/metrics.png``."""
    return Path(csv_path).with_suffix(".png")


def plot_training(metrics, out) -> Path:
    """Train and held-out sum-rate against iteration."""
    it = np.asarray(metrics.iteration)
    train = np.asarray(metrics.train_sum_rate, dtype=float)
    test = np.asarray(metrics.test_sum_rate, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(it, train, lw=1, label="train")
    held = np.isfinite(test)
    if held.any():
        ax.plot(it[held], test[held], "o-", ms=4, label="held-out")
    ax.set_xlabel("iteration")
    ax.set_ylabel("sum-rate (bit/s/Hz)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return Path(out)


def plot_report(report, out) -> Path:
    """Empirical CDF of the per-sample sum-rates of one evaluation."""
    rates = np.sort(np.asarray(report.rates, dtype=float))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(rates, np.arange(1, rates.size + 1) / rates.size, where="post",
            label=f"{report.source} (mean {report.mean:.3f})")
    ax.set_xlabel("sum-rate (bit/s/Hz)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return Path(out)
