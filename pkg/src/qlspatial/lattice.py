"""Rectangular site grids with columnwise labeling and L_p distances."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Lattice:
    """An ``m x n`` grid of sites.

    Sites are labeled columnwise starting at 1: sites ``1..m`` make up the
    first column, ``m+1..2m`` the second, and so on. ``spacing`` is the
    physical distance between adjacent sites.
    """

    m: int
    n: int
    spacing: float = 1.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"row count must be a positive integer, got {self.m!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"column count must be a positive integer, got {self.n!r}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing!r}")

    @property
    def size(self) -> int:
        return self.m * self.n

    @cached_property
    def coords(self) -> np.ndarray:
        """(N, 2) array of 1-based (row, col) pairs in site order."""
        k = np.arange(self.size)
        coords = np.column_stack([k % self.m + 1, k // self.m + 1])
        coords.setflags(write=False)
        return coords

    def _check(self, k: int) -> None:
        if not 1 <= k <= self.size:
            raise IndexError(f"site index {k} outside 1..{self.size}")

    def site_coords(self, k: int) -> tuple[int, int]:
        self._check(k)
        return (k - 1) % self.m + 1, (k - 1) // self.m + 1

    def site_index(self, row: int, col: int) -> int:
        if not (1 <= row <= self.m and 1 <= col <= self.n):
            raise IndexError(f"site ({row}, {col}) outside {self.m}x{self.n} lattice")
        return (col - 1) * self.m + row

    def distance(self, i: int, j: int, p: float = 2) -> float:
        """L_p distance between sites ``i`` and ``j`` (1-based)."""
        self._check(i)
        self._check(j)
        diff = np.abs(self.coords[i - 1] - self.coords[j - 1]).astype(float)
        return self.spacing * _lp_norm(diff, p)

    def distance_matrix(self, p: float = 2) -> np.ndarray:
        diff = np.abs(self.coords[:, None, :] - self.coords[None, :, :]).astype(float)
        return self.spacing * _lp_norm(diff, p)


def site_coords(lattice: Lattice, k: int) -> tuple[int, int]:
    return lattice.site_coords(k)


def distance(lattice: Lattice, i: int, j: int, p: float = 2) -> float:
    return lattice.distance(i, j, p)


def _lp_norm(diff: np.ndarray, p: float) -> np.ndarray:
    if p < 1:
        raise ValueError(f"L_p distance needs p >= 1, got {p}")
    if p == 1:
        return diff.sum(axis=-1)
    if p == 2:
        return np.hypot(diff[..., 0], diff[..., 1])
    if np.isinf(p):
        return diff.max(axis=-1)
    return (diff**p).sum(axis=-1) ** (1.0 / p)
