"""Plain-text field export: row-major grid CSV and legacy VTK structured points.

Grid CSV layout: a header row ``nx,ny``, one row with the two sizes, then
``ny`` rows of ``nx`` values (row ``j`` holds cells ``j*nx .. j*nx+nx-1``).
Values are written with ``repr`` so a read-back is bit-exact.
"""
from __future__ import annotations

import csv

import numpy as np


def write_grid_csv(path, values, nx: int, ny: int) -> None:
    values = np.asarray(values, dtype=float)
    if values.size != nx * ny:
        raise ValueError(f"expected {nx * ny} values for a {nx}x{ny} grid, got {values.size}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nx", "ny"])
        w.writerow([nx, ny])
        for row in values.reshape(ny, nx):
            w.writerow([repr(float(v)) for v in row])


def read_grid_csv(path):
    """Return ((nx, ny), values) from a file written by :func:`write_grid_csv`."""
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0] != ["nx", "ny"]:
        raise ValueError(f"{path}: missing 'nx,ny' header")
    nx, ny = int(rows[1][0]), int(rows[1][1])
    values = np.array([[float(v) for v in r] for r in rows[2:]])
    if values.shape != (ny, nx):
        raise ValueError(f"{path}: expected {ny} rows of {nx} values")
    return (nx, ny), values.ravel()


def write_vtk(path, grid, scalars=None, vectors=None, title="hdmrflow field") -> None:
    """Legacy-format VTK structured points with cell data.

    Parameters
    ----------
    grid : StructuredGrid
    scalars : dict of name -> (n_cells,) arrays
    vectors : dict of name -> (n_cells, 2) arrays; written with a zero z part
    """
    n = grid.n_cells
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1", "ORIGIN 0 0 0",
             f"SPACING {grid.hx!r} {grid.hy!r} 1", f"CELL_DATA {n}"]
    for name, vals in (scalars or {}).items():
        vals = np.asarray(vals, dtype=float).ravel()
        if vals.size != n:
            raise ValueError(f"scalar {name!r} has {vals.size} values, expected {n}")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in vals]
    for name, vals in (vectors or {}).items():
        vals = np.asarray(vals, dtype=float).reshape(-1, 2)
        if len(vals) != n:
            raise ValueError(f"vector {name!r} has {len(vals)} rows, expected {n}")
        lines.append(f"VECTORS {name} double")
        lines += [f"{vx!r} {vy!r} 0.0" for vx, vy in vals.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
