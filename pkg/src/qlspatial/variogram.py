"""Empirical semivariograms of lattice fields and exponential model fitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correlation import CorrelationModel
from .lattice import Lattice

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
CONVENTIONS = ("literal", "thirds")


class DegenerateVariogramError(ValueError):
    """The semivariogram carries no spatial variation to fit."""


@dataclass(frozen=True)
class Semivariogram:
    """Binned Matheron semivariogram.

    ``lags`` holds the mean pair distance within each bin, ``gamma`` the
    estimate and ``counts`` the number of pairs.
    """

    lags: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    bin_width: float
    max_lag: float
    constant_field: bool = False

    def __len__(self):
        return len(self.lags)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["h", "gamma_hat", "count"])
            for h, g, c in zip(self.lags, self.gamma, self.counts):
                writer.writerow([f"{h:.10g}", f"{g:.10g}", int(c)])
        return path


@dataclass(frozen=True)
class ExponentialVariogramFit:
    sill: float
    range: float
    at_boundary: bool = False
    weighted_sse: float = 0.0

    def __call__(self, h):
        return self.sill * (1.0 - np.exp(-np.asarray(h, dtype=float) / self.range))


def empirical_semivariogram(
    field,
    lattice: Lattice,
    bin_width: float = 0.5,
    max_lag: float | None = None,
) -> Semivariogram:
    """Matheron estimator ``sum (y_i - y_j)^2 / (2 |N(h)|)`` over L2 distance bins.

    Bin ``k`` collects pairs with ``round(d / bin_width) == k``, so bin
    centers sit at multiples of ``bin_width``. Pairs farther apart than
    ``max_lag`` (default ``min(m, n) / 2`` lattice steps) are ignored.
    """
    y = np.asarray(field, dtype=float).ravel()
    if y.size != lattice.size:
        raise ValueError(f"field has {y.size} values, lattice has {lattice.size} sites")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    if max_lag is None:
        max_lag = min(lattice.m, lattice.n) / 2 * lattice.spacing
    half_diag = 0.5 * lattice.spacing * math.hypot(lattice.m - 1, lattice.n - 1)
    if max_lag > half_diag + 1e-12:
        raise ValueError(f"max_lag {max_lag} exceeds half the lattice diagonal ({half_diag:.4g})")

    iu, ju = np.triu_indices(lattice.size, k=1)
    d = lattice.distance_matrix(2)[iu, ju]
    keep = d <= max_lag + 1e-12
    d, sq = d[keep], (y[iu[keep]] - y[ju[keep]]) ** 2
    idx = np.rint(d / bin_width).astype(int)
    nbins = int(np.rint(max_lag / bin_width)) + 1
    counts = np.bincount(idx, minlength=nbins)
    sums = np.bincount(idx, weights=sq, minlength=nbins)
    dsum = np.bincount(idx, weights=d, minlength=nbins)

    empty = np.flatnonzero(counts[1:] == 0) + 1
    if empty.size:
        centers = ", ".join(f"{k * bin_width:g}" for k in empty)
        log.info("dropping empty semivariogram bins at lags %s", centers)
    ok = counts > 0
    ok[0] = False
    constant = bool(np.all(y == y[0]))
    if constant:
        log.warning("field is constant; semivariogram is identically zero")
    return Semivariogram(
        lags=dsum[ok] / counts[ok],
        gamma=sums[ok] / (2.0 * counts[ok]),
        counts=counts[ok],
        bin_width=float(bin_width),
        max_lag=float(max_lag),
        constant_field=constant,
    )


def _profile(r, h, g, w):
    """Optimal sill for fixed range and the resulting weighted SSE."""
    f = 1.0 - np.exp(-h / r)
    c = max(0.0, float(np.sum(w * g * f) / np.sum(w * f * f)))
    return c, float(np.sum(w * (g - c * f) ** 2))


def golden_section(func, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 500) -> float:
    """Minimize a unimodal ``func`` on ``[lo, hi]``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            return 0.5 * (a + b)
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = func(d)
    raise RuntimeError("golden-section search did not converge")


def fit_exponential(sv: Semivariogram, grid_points: int = 400) -> ExponentialVariogramFit:
    """Weighted least-squares fit of ``c (1 - exp(-h / r))`` with pair-count weights.

    The sill has a closed form for each range, so only the range is searched:
    a log-spaced scan over ``[bin_width / 10, 10 max_lag]`` brackets the
    minimum and golden-section search refines it. A range on the search
    boundary is flagged through ``at_boundary``; for a flat semivariogram
    that signals no usable spatial correlation.
    """
    h = np.asarray(sv.lags, dtype=float)
    g = np.asarray(sv.gamma, dtype=float)
    w = np.asarray(sv.counts, dtype=float)
    if h.size < 3:
        raise ValueError(f"need at least 3 nonempty bins, got {h.size}")
    if np.all(g == 0):
        raise DegenerateVariogramError("no spatial variation: semivariogram is identically zero")
    w = w / w.sum()

    lo, hi = sv.bin_width / 10.0, 10.0 * sv.max_lag
    grid = np.geomspace(lo, hi, grid_points)
    sse = np.array([_profile(r, h, g, w)[1] for r in grid])
    k = int(np.argmin(sse))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    objective = lambda log_r: _profile(math.exp(log_r), h, g, w)[1]
    r = math.exp(golden_section(objective, math.log(a), math.log(b)))
    c, err = _profile(r, h, g, w)
    at_boundary = bool(r <= lo * (1 + 1e-3) or r >= hi * (1 - 1e-3))
    if at_boundary:
        log.warning("fitted range %.4g sits on the search boundary; little spatial correlation", r)
    return ExponentialVariogramFit(sill=c, range=r, at_boundary=at_boundary, weighted_sse=err)


def correlation_from_fit(fit: ExponentialVariogramFit, convention: str = "literal") -> CorrelationModel:
    """Correlation model ``exp(-d / scale)`` implied by a fitted exponential variogram.

    ``literal`` uses the fitted range as the scale; ``thirds`` treats it as
    an effective range and uses ``range / 3``. The result has ``a = 1``,
    the L2 metric and ``rho = exp(-1 / scale)``.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    if not fit.range > 0:
        raise ValueError("range must be positive")
    scale = fit.range if convention == "literal" else fit.range / 3.0
    return CorrelationModel(a=1.0, rho=math.exp(-1.0 / scale), metric=2)
