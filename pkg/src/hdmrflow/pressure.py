"""Locally conservative mixed solvers for the pressure/velocity system.

Fine scale: lowest-order mixed method on rectangles with one flux per
edge and one pressure per cell. With the trapezoidal (lumped) velocity
mass matrix this is the two-point flux scheme with harmonic averaging,
and the discrete velocity energy of a flux field F is sum_f F_f^2 / T_f.

Coarse scale: mixed multiscale method whose velocity basis functions are
fine flux fields attached to coarse interior edges.

Fluxes are stored as integrated rates through each fine edge, positive
in the +x / +y direction. x-edges come first, numbered ``j*(nx+1)+i``,
then y-edges numbered ``n_xfaces + j*nx + i``.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .export import write_grid_csv, write_vtk
from .field import StructuredGrid
from .sparsegrid import cc_rule, lagrange_basis

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    pass


class NormalizationError(SolverError):
    """Basis boundary data has (numerically) zero net flux."""


@dataclass(frozen=True)
class _Faces:
    interior: np.ndarray
    left: np.ndarray
    right: np.ndarray
    geom: np.ndarray  # edge length / centre distance
    div: sp.csr_matrix  # cells x faces, +1 on the upstream side of a positive flux


@lru_cache(maxsize=16)
def _faces(grid: StructuredGrid) -> _Faces:
    nx, ny = grid.nx, grid.ny
    jj, ii = np.meshgrid(np.arange(ny), np.arange(1, nx), indexing="ij")
    fx = (jj * (nx + 1) + ii).ravel()
    lx = (jj * nx + ii - 1).ravel()
    rx = (jj * nx + ii).ravel()
    jj, ii = np.meshgrid(np.arange(1, ny), np.arange(nx), indexing="ij")
    fy = (grid.n_xfaces + jj * nx + ii).ravel()
    ly = ((jj - 1) * nx + ii).ravel()
    ry = (jj * nx + ii).ravel()
    interior = np.concatenate([fx, fy])
    left = np.concatenate([lx, ly])
    right = np.concatenate([rx, ry])
    geom = np.concatenate([np.full(fx.size, grid.hy / grid.hx), np.full(fy.size, grid.hx / grid.hy)])
    rows = np.concatenate([left, right])
    cols = np.concatenate([interior, interior])
    vals = np.concatenate([np.ones(interior.size), -np.ones(interior.size)])
    div = sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_cells, grid.n_faces))
    for arr in (interior, left, right, geom):
        arr.flags.writeable = False
    return _Faces(interior, left, right, geom, div)


def transmissibility(grid: StructuredGrid, coefficient) -> np.ndarray:
    """Harmonic-average transmissibility per fine edge (0 on the boundary)."""
    kappa = np.asarray(coefficient, dtype=float)
    fc = _faces(grid)
    kl, kr = kappa[fc.left], kappa[fc.right]
    t = np.zeros(grid.n_faces)
    t[fc.interior] = fc.geom * 2.0 * kl * kr / (kl + kr)
    return t


def divergence(grid: StructuredGrid, flux) -> np.ndarray:
    """Net outflow rate of each cell."""
    return _faces(grid).div @ np.asarray(flux)


@dataclass
class MixedSolution:
    grid: StructuredGrid
    pressure: np.ndarray
    flux: np.ndarray

    def divergence(self) -> np.ndarray:
        return divergence(self.grid, self.flux)

    def ux(self) -> np.ndarray:
        g = self.grid
        return self.flux[: g.n_xfaces].reshape(g.ny, g.nx + 1)

    def uy(self) -> np.ndarray:
        g = self.grid
        return self.flux[g.n_xfaces:].reshape(g.ny + 1, g.nx)

    def cell_velocity(self) -> np.ndarray:
        """Cell-centred Darcy velocity (ny, nx, 2) from averaged edge fluxes."""
        g = self.grid
        vx = 0.5 * (self.ux()[:, :-1] + self.ux()[:, 1:]) / g.hy
        vy = 0.5 * (self.uy()[:-1, :] + self.uy()[1:, :]) / g.hx
        return np.stack([vx, vy], axis=-1)

    def to_csv(self, directory) -> None:
        """Write pressure.csv, flux_x.csv and flux_y.csv as row-major grids.

        flux_x has (nx + 1) columns and ny rows; flux_y has nx columns and
        (ny + 1) rows.
        """
        g = self.grid
        os.makedirs(directory, exist_ok=True)
        write_grid_csv(os.path.join(directory, "pressure.csv"), self.pressure, g.nx, g.ny)
        write_grid_csv(os.path.join(directory, "flux_x.csv"), self.ux(), g.nx + 1, g.ny)
        write_grid_csv(os.path.join(directory, "flux_y.csv"), self.uy(), g.nx, g.ny + 1)

    def to_vtk(self, path) -> None:
        """Pressure and cell-centred velocity as VTK structured points."""
        write_vtk(path, self.grid, scalars={"pressure": self.pressure},
                  vectors={"velocity": self.cell_velocity().reshape(-1, 2)})


def _neumann_solve(grid, trans, rhs, groups, n_groups):
    """Solve div(T grad p) = rhs on each decoupled group of cells.

    ``rhs`` holds integrated cell rates, shape (n_cells,) or (n_cells, r).
    Each group gets an area-weighted mean-zero pressure constraint.
    Returns pressures and interior fluxes ``T (p_L - p_R)``.
    """
    fc = _faces(grid)
    t = trans[fc.interior]
    n = grid.n_cells
    lap = sp.coo_matrix(
        (np.concatenate([t, t, -t, -t]),
         (np.concatenate([fc.left, fc.right, fc.left, fc.right]),
          np.concatenate([fc.left, fc.right, fc.right, fc.left]))),
        shape=(n, n))
    border = sp.csr_matrix((np.full(n, grid.cell_area), (np.arange(n), groups)), shape=(n, n_groups))
    system = sp.bmat([[lap, border], [border.T, None]], format="csc")
    rhs = np.asarray(rhs, dtype=float)
    full = np.zeros((n + n_groups,) + rhs.shape[1:])
    full[:n] = rhs
    try:
        lu = spla.splu(system)
        sol = lu.solve(full)
    except RuntimeError as exc:
        raise SolverError(f"singular pressure system: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SolverError("pressure solve produced non-finite values")
    p = sol[:n]
    flux = np.zeros((grid.n_faces,) + rhs.shape[1:])
    dp = p[fc.left] - p[fc.right]
    flux[fc.interior] = (t * dp.T).T
    return p, flux


def solve_fine_mixed(grid: StructuredGrid, coefficient, source) -> MixedSolution:
    """Fine-scale mixed solve with no-flow boundaries.

    ``coefficient`` is lambda(S) k per cell and ``source`` a rate density
    q per cell whose integral must vanish.
    """
    kappa = np.asarray(coefficient, dtype=float)
    if kappa.shape != (grid.n_cells,) or np.any(kappa <= 0) or not np.all(np.isfinite(kappa)):
        raise ValueError("coefficient must be positive and finite on every cell")
    q = np.asarray(source, dtype=float) * grid.cell_area
    scale = max(np.abs(q).sum(), 1.0)
    if abs(q.sum()) > 1e-12 * scale:
        raise ValueError(f"incompatible source: net rate {q.sum():.3e}")
    trans = transmissibility(grid, kappa)
    p, flux = _neumann_solve(grid, trans, q, np.zeros(grid.n_cells, dtype=np.intp), 1)
    res = np.abs(divergence(grid, flux) - q).max()
    if res > RESIDUAL_TOL * scale:
        raise SolverError(f"divergence residual {res:.3e} exceeds tolerance "
                          f"(ill-conditioned system, coefficient ratio {kappa.max() / kappa.min():.2e})")
    return MixedSolution(grid, p, flux)


def solve_singlephase_global(grid: StructuredGrid, perm, source) -> MixedSolution:
    """Unit-mobility velocity used as global boundary information."""
    return solve_fine_mixed(grid, perm, source)


def quarter_five_spot(grid: StructuredGrid, rate: float = 1.0) -> np.ndarray:
    """Source density: injector in the top-left cell, producer bottom-right."""
    q = np.zeros(grid.n_cells)
    q[grid.cell_index(0, grid.ny - 1)] = rate / grid.cell_area
    q[grid.cell_index(grid.nx - 1, 0)] = -rate / grid.cell_area
    return q


# --------------------------------------------------------------------------
# coarse partition and multiscale basis


@dataclass(frozen=True)
class CoarseEdge:
    index: int
    k1: int  # block on the left / below; positive flux goes k1 -> k2
    k2: int
    faces: np.ndarray
    lengths: np.ndarray


@dataclass
class CoarsePartition:
    grid: StructuredGrid
    coarse: StructuredGrid
    block_of_cell: np.ndarray
    edges: list
    block_area: np.ndarray
    cut_faces: np.ndarray = field(repr=False)

    @property
    def n_blocks(self) -> int:
        return self.coarse.n_cells

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def block_cells(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.block_of_cell == k)

    def block_sums(self, cell_values) -> np.ndarray:
        return np.bincount(self.block_of_cell, weights=cell_values, minlength=self.n_blocks)


def build_partition(grid: StructuredGrid, ncx: int, ncy: int) -> CoarsePartition:
    coarse = grid.coarsen(ncx, ncy)
    bx, by = grid.nx // ncx, grid.ny // ncy
    jj, ii = np.divmod(np.arange(grid.n_cells), grid.nx)
    block = (jj // by) * ncx + ii // bx
    edges = []
    cut = []
    for J in range(ncy):
        for I in range(ncx - 1):
            i = (I + 1) * bx
            faces = np.array([j * (grid.nx + 1) + i for j in range(J * by, (J + 1) * by)])
            edges.append(CoarseEdge(len(edges), J * ncx + I, J * ncx + I + 1, faces,
                                    np.full(by, grid.hy)))
            cut.append(faces)
    for J in range(ncy - 1):
        for I in range(ncx):
            j = (J + 1) * by
            faces = np.array([grid.n_xfaces + j * grid.nx + i for i in range(I * bx, (I + 1) * bx)])
            edges.append(CoarseEdge(len(edges), J * ncx + I, (J + 1) * ncx + I, faces,
                                    np.full(bx, grid.hx)))
            cut.append(faces)
    cut_faces = np.concatenate(cut) if cut else np.zeros(0, dtype=int)
    area = np.bincount(block, minlength=coarse.n_cells) * grid.cell_area
    return CoarsePartition(grid, coarse, block, edges, area, cut_faces)


@dataclass
class MsBasis:
    """Velocity basis function of one coarse edge as a fine flux field."""

    edge: CoarseEdge
    flux: np.ndarray
    profile: np.ndarray  # normalised edge flux per fine sub-edge, sums to 1
    flavor: str


@dataclass
class MsBasisSet:
    partition: CoarsePartition
    psi: np.ndarray  # (n_faces, n_edges)
    profiles: list
    flavor: str
    fallback_edges: list = field(default_factory=list)

    def basis(self, e: int) -> MsBasis:
        return MsBasis(self.partition.edges[e], self.psi[:, e], self.profiles[e], self.flavor)

    @property
    def block_divergence(self) -> np.ndarray:
        """(n_blocks, n_edges): +1 on the k1 block, -1 on the k2 block."""
        p = self.partition
        b = np.zeros((p.n_blocks, p.n_edges))
        for e in p.edges:
            b[e.k1, e.index] = 1.0
            b[e.k2, e.index] = -1.0
        return b


def _source_weights(partition: CoarsePartition, source) -> np.ndarray:
    """Per-cell share of a block's basis divergence; sums to 1 per block.

    Blocks carrying a net source distribute it like the source itself,
    all other blocks uniformly.
    """
    grid = partition.grid
    w = np.full(grid.n_cells, grid.cell_area) / partition.block_area[partition.block_of_cell]
    if source is None:
        return w
    q = np.asarray(source, dtype=float) * grid.cell_area
    net = partition.block_sums(q)
    for k in np.flatnonzero(np.abs(net) > 1e-12 * max(np.abs(q).max(), 1e-300)):
        cells = partition.block_cells(k)
        w[cells] = q[cells] / net[k]
    return w


def _normalise(values, lengths, edge_index) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    total = values.sum()
    if abs(total) <= 1e-12 * max(np.abs(values).sum(), 1.0) or abs(total) < 1e-300:
        raise NormalizationError(f"zero net boundary flux on coarse edge {edge_index}")
    return values / total


def _local_solves(partition: CoarsePartition, perm, profiles: dict, source) -> np.ndarray:
    grid = partition.grid
    trans = transmissibility(grid, perm)
    trans[partition.cut_faces] = 0.0
    weights = _source_weights(partition, source)
    order = sorted(profiles)
    rhs = np.zeros((grid.n_cells, len(order)))
    fc = _faces(grid)
    face_to_pos = np.full(grid.n_faces, -1)
    face_to_pos[fc.interior] = np.arange(fc.interior.size)
    for col, e in enumerate(order):
        edge = partition.edges[e]
        g = profiles[e]
        c1 = partition.block_cells(edge.k1)
        c2 = partition.block_cells(edge.k2)
        rhs[c1, col] += weights[c1]
        rhs[c2, col] -= weights[c2]
        pos = face_to_pos[edge.faces]
        rhs[fc.left[pos], col] -= g
        rhs[fc.right[pos], col] += g
    _, flux = _neumann_solve(grid, trans, rhs, partition.block_of_cell, partition.n_blocks)
    psi = np.zeros((grid.n_faces, len(order)))
    psi[:] = flux
    for col, e in enumerate(order):
        psi[partition.edges[e].faces, col] = profiles[e]
    return psi


def build_ms_basis(partition: CoarsePartition, edge, perm, boundary_data, source=None,
                   flavor: str = "global") -> MsBasis:
    """Velocity basis for one coarse edge.

    ``boundary_data`` gives b.n integrated over each fine sub-edge of the
    coarse edge; it is normalised to unit total flux.
    """
    if not isinstance(edge, CoarseEdge):
        edge = partition.edges[edge]
    profile = _normalise(boundary_data, edge.lengths, edge.index)
    psi = _local_solves(partition, perm, {edge.index: profile}, source)
    return MsBasis(edge, psi[:, 0], profile, flavor)


def assemble_ms_basis_set(partition: CoarsePartition, perm_hat, flavor: str = "local",
                          boundary_flux=None, source=None) -> MsBasisSet:
    """Basis functions for every coarse interior edge.

    ``flavor="local"`` uses b = n. ``flavor="global"`` takes the edge
    profiles from ``boundary_flux``, a fine flux field (for example the
    single-phase velocity approximated from a ``GlobalVelocityLibrary``).
    Edges where that field has no net flux fall back to b = n.
    """
    if flavor not in ("local", "global"):
        raise ValueError(f"unknown basis flavor {flavor!r}")
    if flavor == "global" and boundary_flux is None:
        raise ValueError("global flavor needs boundary_flux")
    profiles = {}
    fallback = []
    for edge in partition.edges:
        local = edge.lengths / edge.lengths.sum()
        if flavor == "local":
            profiles[edge.index] = local
            continue
        try:
            profiles[edge.index] = _normalise(np.asarray(boundary_flux)[edge.faces], edge.lengths, edge.index)
        except NormalizationError:
            log.warning("coarse edge %d: zero net global flux, using b = n", edge.index)
            profiles[edge.index] = local
            fallback.append(edge.index)
    psi = _local_solves(partition, perm_hat, profiles, source)
    return MsBasisSet(partition, psi, [profiles[e] for e in range(partition.n_edges)], flavor, fallback)


def solve_coarse(basis: MsBasisSet, coefficient, source):
    """Coarse mixed solve on span{psi_e} with blockwise constant pressure.

    Returns ``(coarse MixedSolution, fine MixedSolution)``; the fine one
    carries the reconstructed flux sum_e c_e psi_e and the coarse pressure
    prolonged to fine cells.
    """
    part = basis.partition
    grid = part.grid
    kappa = np.asarray(coefficient, dtype=float)
    if np.any(kappa <= 0):
        raise ValueError("coefficient must be positive")
    q = np.asarray(source, dtype=float) * grid.cell_area
    if abs(q.sum()) > 1e-12 * max(np.abs(q).sum(), 1.0):
        raise ValueError("incompatible source")
    trans = transmissibility(grid, kappa)
    inv_t = np.zeros_like(trans)
    nz = trans > 0
    inv_t[nz] = 1.0 / trans[nz]
    psi = basis.psi
    mass = psi.T @ (psi * inv_t[:, None])
    bdiv = basis.block_divergence
    nb, ne = bdiv.shape
    rhs_q = part.block_sums(q)
    system = np.zeros((ne + nb + 1, ne + nb + 1))
    system[:ne, :ne] = mass
    system[:ne, ne:ne + nb] = bdiv.T
    system[ne:ne + nb, :ne] = bdiv
    system[ne:ne + nb, -1] = part.block_area
    system[-1, ne:ne + nb] = part.block_area
    rhs = np.zeros(ne + nb + 1)
    rhs[ne:ne + nb] = rhs_q
    try:
        sol = scipy.linalg.solve(system, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SolverError(f"singular coarse system: {exc}") from exc
    coeff = sol[:ne]
    pressure = -sol[ne:ne + nb]
    fine_flux = psi @ coeff
    res = np.abs(part.block_sums(divergence(grid, fine_flux)) - rhs_q).max()
    if res > RESIDUAL_TOL * max(np.abs(q).sum(), 1.0):
        raise SolverError(f"coarse conservation residual {res:.3e}")
    coarse_flux = np.zeros(part.coarse.n_faces)
    coarse_flux[_coarse_face_ids(part)] = coeff
    coarse = MixedSolution(part.coarse, pressure, coarse_flux)
    fine = MixedSolution(grid, pressure[part.block_of_cell], fine_flux)
    return coarse, fine


def _coarse_face_ids(part: CoarsePartition) -> np.ndarray:
    c = part.coarse
    ids = []
    for e in part.edges:
        I1, J1 = e.k1 % c.nx, e.k1 // c.nx
        if e.k2 == e.k1 + 1:
            ids.append(J1 * (c.nx + 1) + I1 + 1)
        else:
            ids.append(c.n_xfaces + (J1 + 1) * c.nx + I1)
    return np.array(ids, dtype=int)


# --------------------------------------------------------------------------
# single-phase global velocity library


class MissingLibraryEntry(KeyError):
    pass


class GlobalVelocityLibrary:
    """Single-phase velocities on 1-D collocation lines through the anchor.

    ``entries[(dim, node)]`` is the fine flux of u_sg at theta = node e_dim.
    ``boundary_flux`` evaluates the first-order cut expansion
    u0 + sum_d (A[u_sg](theta_d) - u0) over the coordinates of theta that
    leave the anchor, which is the boundary data of both the active block
    and the one-dimensional terms.
    """

    def __init__(self, anchor_flux, entries=None, level: int = 2):
        self.anchor_flux = np.asarray(anchor_flux, dtype=float)
        self.entries = dict(entries or {})
        self.level = level

    def __len__(self):
        return len(self.entries) + 1

    def line(self, dim: int, level: int) -> np.ndarray:
        """Nodal fluxes (m, n_faces) along dimension ``dim`` at ``level``."""
        nodes = cc_rule(level).nodes
        out = np.empty((len(nodes), self.anchor_flux.size))
        for k, x in enumerate(nodes):
            if x == 0.0:
                out[k] = self.anchor_flux
                continue
            try:
                out[k] = self.entries[(dim, float(x))]
            except KeyError:
                raise MissingLibraryEntry(f"no single-phase solve for dimension {dim}, node {x!r}") from None
        return out

    def along(self, dim: int, x: float, level: int) -> np.ndarray:
        if x == 0.0:
            return self.anchor_flux
        hit = self.entries.get((dim, float(x)))
        if hit is not None:
            return hit
        nodes = cc_rule(level).nodes
        basis = lagrange_basis(nodes, np.array([x]))[0]
        return basis @ self.line(dim, level)

    def boundary_flux(self, theta, active=None, level: int | None = None,
                      level_inactive: int | None = None) -> np.ndarray:
        level = self.level if level is None else level
        level_inactive = level if level_inactive is None else level_inactive
        active = set(range(len(theta))) if active is None else set(active)
        u = self.anchor_flux.copy()
        for d, x in enumerate(np.asarray(theta, dtype=float)):
            if x != 0.0:
                lev = level if d in active else level_inactive
                u += self.along(d, x, lev) - self.anchor_flux
        return u
