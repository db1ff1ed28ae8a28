"""Two-phase saturation transport: fractional flow, implicit upwind
finite volumes with Newton, and the sequential pressure/saturation loop.

Porosity is one and the unit square has unit pore volume, so with a unit
injection rate the elapsed time equals pore volumes injected (PVI).
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .export import write_grid_csv
from .field import StructuredGrid
from .pressure import _faces

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAXIT = 25
MAX_HALVINGS = 10
BOUND_SLACK = 1e-12


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class FracFlowModel:
    """Relative-permeability model.

    ``linear``: f_w = S, lambda = 1. ``quadratic``: lambda_w = S^2/mu_w and
    lambda_o = (1-S)^2/mu_o with mu_o = 1 and mu_w = viscosity_ratio.
    """

    kind: str = "linear"
    viscosity_ratio: float = 0.1

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic"):
            raise ValueError(f"unknown flow model {self.kind!r}")
        if self.viscosity_ratio <= 0:
            raise ValueError("viscosity ratio must be positive")

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"


def _check_sat(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < -BOUND_SLACK) or np.any(s > 1 + BOUND_SLACK):
        raise ValueError("saturation outside [0, 1]")
    return s


def _fw(s, model):
    if model.is_linear:
        return s.copy(), np.ones_like(s)
    r = model.viscosity_ratio
    a = s * s
    b = r * (1 - s) ** 2
    den = a + b
    f = a / den
    df = 2 * r * s * (1 - s) / (den * den)
    return f, df


def fractional_flow(s, model: FracFlowModel):
    """Water fractional flow and its derivative."""
    s = _check_sat(s)
    return _fw(s, model)


def total_mobility(s, model: FracFlowModel):
    s = _check_sat(s)
    if model.is_linear:
        return np.ones_like(s)
    return s * s / model.viscosity_ratio + (1 - s) ** 2


@dataclass(frozen=True)
class Wells:
    injector: int
    producer: int
    rate: float = 1.0

    @classmethod
    def quarter_five_spot(cls, grid: StructuredGrid, rate: float = 1.0) -> "Wells":
        return cls(grid.cell_index(0, grid.ny - 1), grid.cell_index(grid.nx - 1, 0), rate)

    def source(self, grid: StructuredGrid) -> np.ndarray:
        """Rate density q per cell for the pressure equation."""
        q = np.zeros(grid.n_cells)
        q[self.injector] += self.rate / grid.cell_area
        q[self.producer] -= self.rate / grid.cell_area
        return q


class UpwindTransport:
    """Implicit-Euler upwind operator for a fixed fine flux field."""

    def __init__(self, grid: StructuredGrid, flux, model: FracFlowModel, wells: Wells,
                 porosity: float = 1.0):
        self.grid = grid
        self.model = model
        self.wells = wells
        self.pore = porosity * grid.cell_area
        fc = _faces(grid)
        F = np.asarray(flux, dtype=float)[fc.interior]
        up = np.where(F >= 0, fc.left, fc.right)
        n = grid.n_cells
        m = F.size
        self._up = sp.csr_matrix((np.ones(m), (np.arange(m), up)), shape=(m, n))
        div = sp.csr_matrix((np.concatenate([np.ones(m), -np.ones(m)]),
                             (np.concatenate([fc.left, fc.right]), np.tile(np.arange(m), 2))),
                            shape=(n, m))
        # cell outflow of water = A @ f_w(S)
        self._adv = (div @ sp.diags(F) @ self._up).tocsr()
        self._inj = np.zeros(n)
        self._inj[wells.injector] = wells.rate
        self._prod = np.zeros(n)
        self._prod[wells.producer] = wells.rate
        self._lu_cache: dict = {}
        self.net_inflow = 0.0  # water injected minus produced by accepted steps

    def residual(self, s, s_old, dt):
        f, df = _fw(s, self.model)
        r = self.pore * (s - s_old) / dt + self._adv @ f + self._prod * f - self._inj
        return r, f, df

    def jacobian(self, df, dt):
        n = self.grid.n_cells
        return (sp.identity(n, format="csr") * (self.pore / dt)
                + self._adv @ sp.diags(df) + sp.diags(self._prod * df)).tocsc()

    def _solve(self, s, df, dt, rhs):
        if self.model.is_linear:
            lu = self._lu_cache.get(dt)
            if lu is None:
                lu = spla.splu(self.jacobian(df, dt))
                self._lu_cache[dt] = lu
            return lu.solve(rhs)
        return spla.splu(self.jacobian(df, dt)).solve(rhs)

    def step(self, s_old, dt):
        """One implicit step; raises TransportError if Newton fails."""
        s = s_old.copy()
        for _ in range(NEWTON_MAXIT):
            r, f, df = self.residual(s, s_old, dt)
            delta = self._solve(s, df, dt, -r)
            s_new = s + delta
            if not np.all(np.isfinite(s_new)):
                raise TransportError("non-finite Newton iterate")
            if np.max(np.abs(delta)) <= NEWTON_TOL:
                r_new = self.residual(s_new, s_old, dt)[0]
                if np.max(np.abs(r_new)) * dt / self.pore <= 1e3 * NEWTON_TOL:
                    if s_new.min() < -BOUND_SLACK or s_new.max() > 1 + BOUND_SLACK:
                        raise TransportError(f"bounds violated: [{s_new.min():.3e}, {s_new.max():.3e}]")
                    s_new = np.clip(s_new, 0.0, 1.0)
                    f_prod = _fw(s_new[[self.wells.producer]], self.model)[0][0]
                    self.net_inflow += dt * self.wells.rate * (1.0 - f_prod)
                    return s_new
            s = np.clip(s_new, 0.0, 1.0)
        raise TransportError(f"Newton did not converge in {NEWTON_MAXIT} iterations")

    def advance(self, s, dt, depth: int = 0):
        """Advance by dt, halving the step on Newton failure."""
        try:
            return self.step(s, dt)
        except TransportError:
            if depth >= MAX_HALVINGS:
                raise
            log.debug("halving time step %.3e (depth %d)", dt, depth + 1)
            half = self.advance(s, dt / 2, depth + 1)
            return self.advance(half, dt / 2, depth + 1)

    def water_balance(self, s_new, s_old, net_inflow) -> float:
        """Storage change minus net well inflow."""
        return self.pore * (s_new.sum() - s_old.sum()) - net_inflow


def advance_saturation(grid, s, flux, dt, model, wells, porosity: float = 1.0):
    if dt <= 0:
        raise ValueError("dt must be positive")
    return UpwindTransport(grid, flux, model, wells, porosity).advance(_check_sat(s).copy(), dt)


def water_cut(s, model: FracFlowModel, producer: int) -> float:
    f, _ = fractional_flow(np.asarray(s)[[producer]], model)
    return float(f[0])


def pvi_clock(rate: float, pore_volume: float, t: float) -> float:
    if pore_volume <= 0:
        raise ValueError("pore volume must be positive")
    return rate * t / pore_volume


@dataclass
class WaterCutSeries:
    pvi: np.ndarray
    values: np.ndarray
    producer: int
    pore_volume: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pvi", "value"])
            for t, v in zip(self.pvi, self.values):
                w.writerow([repr(float(t)), repr(float(v))])


@dataclass
class ImpesResult:
    snapshots: dict  # pvi -> saturation
    watercut: WaterCutSeries
    velocity_solves: int
    max_balance_error: float = 0.0
    fluxes: list = field(default_factory=list, repr=False)

    def snapshots_to_csv(self, directory, nx: int, ny: int) -> list:
        """Write each snapshot as ``saturation_<pvi>.csv``; returns the paths."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        for t in sorted(self.snapshots):
            path = os.path.join(directory, f"saturation_{t:g}.csv")
            write_grid_csv(path, self.snapshots[t], nx, ny)
            paths.append(path)
        return paths


def _step_index(t, dt):
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"time {t} is not a multiple of dt={dt}")
    return k


def impes_run(grid: StructuredGrid, pressure_solver, model: FracFlowModel, t_end_pvi: float,
              dt_pvi: float, wells: Wells | None = None, snapshot_pvi=(), porosity: float = 1.0,
              keep_fluxes: bool = False) -> ImpesResult:
    """Sequential pressure / implicit saturation loop from S = 0.

    ``pressure_solver(mobility)`` returns the fine edge flux for a total
    mobility field; for the linear model it is called once.
    """
    if dt_pvi <= 0 or t_end_pvi < 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    wells = wells or Wells.quarter_five_spot(grid)
    pore_volume = porosity * grid.area
    dt = dt_pvi * pore_volume / wells.rate
    n_steps = _step_index(t_end_pvi, dt_pvi)
    snap_steps = {_step_index(t, dt_pvi): float(t) for t in snapshot_pvi}
    if any(k > n_steps for k in snap_steps):
        raise ValueError("snapshot beyond t_end")

    s = np.zeros(grid.n_cells)
    pvi = [0.0]
    wc = [water_cut(s, model, wells.producer)]
    snaps = {}
    if 0 in snap_steps:
        snaps[snap_steps[0]] = s.copy()
    solves = 0
    transport = None
    worst = 0.0
    fluxes = []
    for k in range(1, n_steps + 1):
        if transport is None or not model.is_linear:
            flux = pressure_solver(total_mobility(s, model))
            solves += 1
            if keep_fluxes:
                fluxes.append(flux)
            transport = UpwindTransport(grid, flux, model, wells, porosity)
        transport.net_inflow = 0.0
        s_new = transport.advance(s, dt)
        worst = max(worst, abs(transport.water_balance(s_new, s, transport.net_inflow)) / (wells.rate * dt))
        s = s_new
        pvi.append(pvi_clock(wells.rate, pore_volume, k * dt))
        wc.append(water_cut(s, model, wells.producer))
        if k in snap_steps:
            snaps[snap_steps[k]] = s.copy()
    series = WaterCutSeries(np.array(pvi), np.array(wc), wells.producer, pore_volume)
    return ImpesResult(snaps, series, solves, worst, fluxes)
