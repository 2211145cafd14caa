"""CSV grid files: header ``row,col,y`` followed by optional binary covariate columns."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Lattice


class GridFileError(ValueError):
    """The grid file is malformed, incomplete, or holds non-binary values."""


@dataclass
class GridData:
    lattice: Lattice
    y: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)


def _binary(value: str, name: str, lineno: int) -> int:
    try:
        v = float(value)
    except ValueError:
        raise GridFileError(f"line {lineno}: column {name!r} has non-numeric value {value!r}") from None
    if v not in (0.0, 1.0):
        raise GridFileError(f"line {lineno}: column {name!r} must be 0 or 1, got {value}")
    return int(v)


def read_grid(path: str | Path, spacing: float = 1.0) -> GridData:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise GridFileError(f"{path}: empty file") from None
        if header[:3] != ["row", "col", "y"]:
            raise GridFileError(f"{path}: header must start with row,col,y; got {','.join(header)}")
        cov_names = header[3:]
        cells: dict[tuple[int, int], list[int]] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise GridFileError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                r, c = int(rec[0]), int(rec[1])
            except ValueError:
                raise GridFileError(f"line {lineno}: row/col must be integers") from None
            if r < 1 or c < 1:
                raise GridFileError(f"line {lineno}: row/col are 1-based, got ({r}, {c})")
            if (r, c) in cells:
                raise GridFileError(f"line {lineno}: duplicate cell ({r}, {c})")
            cells[(r, c)] = [_binary(v, name, lineno) for v, name in zip(rec[2:], header[2:])]
    if not cells:
        raise GridFileError(f"{path}: no data rows")
    m = max(r for r, _ in cells)
    n = max(c for _, c in cells)
    missing = [(r, c) for c in range(1, n + 1) for r in range(1, m + 1) if (r, c) not in cells]
    if missing:
        shown = ", ".join(f"({r},{c})" for r, c in missing[:5])
        more = f" and {len(missing) - 5} more" if len(missing) > 5 else ""
        raise GridFileError(f"{path}: grid is incomplete; missing cell {shown}{more}")
    lattice = Lattice(m, n, spacing)
    values = np.array([cells[lattice.site_coords(k)] for k in range(1, lattice.size + 1)])
    covs = {name: values[:, 1 + i].astype(float) for i, name in enumerate(cov_names)}
    return GridData(lattice, values[:, 0].astype(float), covs)


def write_grid(path: str | Path, lattice: Lattice, y, covariates: dict | None = None) -> Path:
    path = Path(path)
    covariates = covariates or {}
    y = np.asarray(y)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "y", *covariates])
        for k in range(1, lattice.size + 1):
            r, c = lattice.site_coords(k)
            extra = [int(v[k - 1]) for v in covariates.values()]
            writer.writerow([r, c, int(y[k - 1]), *extra])
    return path
