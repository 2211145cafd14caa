"""Static figures written next to the CSV outputs."""

from __future__ import annotations

import functools
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.stats import norm  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "svg.hashsalt": "qlspatial",
}


def _styled(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        with plt.rc_context(STYLE):
            return func(*args, **kwargs)

    return wrapper


def _figure(width=4.5, height=3.2):
    return plt.subplots(figsize=(width, height))


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # drop the timestamp so reruns produce identical files
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


@_styled
def plot_semivariogram(sv, fit=None, path="variogram.svg") -> Path:
    """Empirical semivariogram points with the fitted exponential curve."""
    fig, ax = _figure()
    ax.scatter(sv.lags, sv.gamma, s=14 + 30 * sv.counts / sv.counts.max(), color="k", label="empirical")
    if fit is not None:
        h = np.linspace(0, sv.lags.max() * 1.05, 200)
        ax.plot(h, fit(h), color="C0", label="exponential fit")
        ax.text(
            0.97, 0.05, f"sill {fit.sill:.3f}\nrange {fit.range:.3f}",
            transform=ax.transAxes, ha="right", va="bottom",
        )
    ax.set_xlabel("distance h")
    ax.set_ylabel("semivariance")
    ax.set_xlim(left=0)
    ax.set_ylim(bottom=0)
    ax.legend(loc="upper left")
    return _save(fig, path)


@_styled
def plot_standardized_sums(z, path="normality.svg") -> Path:
    """Histogram of standardized sums against the standard normal density."""
    fig, ax = _figure()
    ax.hist(z, bins=40, density=True, color="0.75", edgecolor="0.4", linewidth=0.4)
    grid = np.linspace(-4, 4, 300)
    ax.plot(grid, norm.pdf(grid), color="C3")
    ax.set_xlabel("standardized sum")
    ax.set_ylabel("density")
    return _save(fig, path)


@_styled
def plot_coverage(records, beta0, path="coverage.svg") -> Path:
    """Estimates per replicate for each coefficient with the true value marked."""
    beta0 = np.asarray(beta0)
    fig, axes = plt.subplots(1, len(beta0), figsize=(3.2 * len(beta0), 3.0), squeeze=False)
    for j, ax in enumerate(axes[0]):
        est = [r[f"beta{j}_hat"] for r in records if r.get("converged")]
        ax.hist(est, bins=30, color="0.75", edgecolor="0.4", linewidth=0.4)
        ax.axvline(beta0[j], color="C3")
        ax.set_xlabel(f"beta{j} estimate")
    return _save(fig, path)
