"""Structured grids, Gaussian-type covariance, truncated KLE and
log-normal permeability realizations."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class KLEError(RuntimeError):
    """Eigen-solve failed or the covariance is not positive semidefinite."""


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform rectangular grid; cells are numbered row-major (x fastest)."""

    nx: int
    ny: int
    lx_dom: float = 1.0
    ly_dom: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be >= 1")
        if self.lx_dom <= 0 or self.ly_dom <= 0:
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx_dom / self.nx

    @property
    def hy(self) -> float:
        return self.ly_dom / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.lx_dom * self.ly_dom

    @property
    def n_xfaces(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def n_yfaces(self) -> int:
        return self.nx * (self.ny + 1)

    @property
    def n_faces(self) -> int:
        return self.n_xfaces + self.n_yfaces

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) array of centre coordinates, row-major order."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def cell_index(self, i: int, j: int) -> int:
        return j * self.nx + i

    def coarsen(self, ncx: int, ncy: int) -> "StructuredGrid":
        if self.nx % ncx or self.ny % ncy:
            raise ValueError(f"coarse grid {ncx}x{ncy} does not partition {self.nx}x{self.ny}")
        return StructuredGrid(ncx, ncy, self.lx_dom, self.ly_dom)


@dataclass(frozen=True)
class CovarianceSpec:
    sigma2: float = 1.0
    corr_x: float = 0.1
    corr_y: float = 0.1

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.corr_x <= 0 or self.corr_y <= 0:
            raise ValueError("correlation lengths must be positive")


def build_covariance(grid: StructuredGrid, spec: CovarianceSpec) -> np.ndarray:
    """Two-point covariance sigma^2 exp(-dx^2/(2 lx^2) - dy^2/(2 ly^2))."""
    c = grid.cell_centers()
    dx = c[:, None, 0] - c[None, :, 0]
    dy = c[:, None, 1] - c[None, :, 1]
    arg = dx * dx / (2 * spec.corr_x**2) + dy * dy / (2 * spec.corr_y**2)
    cov = spec.sigma2 * np.exp(-arg)
    np.fill_diagonal(cov, spec.sigma2)
    return cov


@dataclass
class KLBasis:
    """Truncated KLE: log-permeability a = mean + sum sqrt(lam_i) b_i theta_i.

    ``eigenfunctions`` has shape (n_terms, n_cells); rows are orthonormal
    under the cell-area weighted inner product.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    mean_field: np.ndarray
    total_trace: float
    cell_area: float

    @property
    def n_terms(self) -> int:
        return len(self.eigenvalues)

    @property
    def n_cells(self) -> int:
        return self.eigenfunctions.shape[1]

    def truncated(self, n_terms: int) -> "KLBasis":
        if n_terms > self.n_terms:
            raise ValueError("cannot extend a truncated basis")
        return KLBasis(self.eigenvalues[:n_terms].copy(), self.eigenfunctions[:n_terms].copy(),
                       self.mean_field, self.total_trace, self.cell_area)

    def with_mean(self, mean_field) -> "KLBasis":
        mean_field = np.broadcast_to(np.asarray(mean_field, dtype=float), (self.n_cells,)).copy()
        return KLBasis(self.eigenvalues, self.eigenfunctions, mean_field, self.total_trace, self.cell_area)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.eigenvalues, self.eigenfunctions, self.mean_field):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()[:16]

    def save(self, path) -> None:
        """Binary container: eigenvalues, row-major eigenfunctions, mean field."""
        np.savez(path, eigenvalues=self.eigenvalues, eigenfunctions=self.eigenfunctions,
                 mean_field=self.mean_field, total_trace=self.total_trace,
                 cell_area=self.cell_area)

    @classmethod
    def load(cls, path) -> "KLBasis":
        with np.load(path) as z:
            return cls(z["eigenvalues"], z["eigenfunctions"], z["mean_field"],
                       float(z["total_trace"]), float(z["cell_area"]))


def compute_kle(cov: np.ndarray, grid: StructuredGrid, n_terms: int, mean_field=0.0) -> KLBasis:
    """Nystrom KLE of a covariance matrix sampled at cell centres.

    The weighted operator W^1/2 C W^1/2 (W = cell areas) is diagonalised;
    eigenfunctions are rescaled to unit discrete L2(D) norm and their
    sign fixed so the largest-magnitude entry is positive.
    """
    n = grid.n_cells
    if cov.shape != (n, n):
        raise ValueError("covariance does not match grid")
    if not 0 <= n_terms <= n:
        raise ValueError(f"n_terms must be in [0, {n}]")
    area = grid.cell_area
    op = cov * area
    total_trace = float(np.trace(op))
    if n_terms == 0:
        return KLBasis(np.zeros(0), np.zeros((0, n)), np.broadcast_to(mean_field, (n,)).astype(float),
                       total_trace, area)
    try:
        lam, vec = scipy.linalg.eigh(op, subset_by_index=[n - n_terms, n - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise KLEError(f"eigen-solve failed: {exc}") from exc
    lam = lam[::-1].copy()
    vec = vec[:, ::-1].T.copy()
    tol = 1e-10 * np.max(np.diag(cov)) * grid.area
    if np.any(lam < -tol):
        raise KLEError(f"covariance not PSD: eigenvalue {lam.min():.3e}")
    lam[lam < 0] = 0.0
    funcs = vec / np.sqrt(area)
    idx = np.argmax(np.abs(funcs), axis=1)
    signs = np.sign(funcs[np.arange(len(lam)), idx])
    funcs *= signs[:, None]
    mean = np.broadcast_to(np.asarray(mean_field, dtype=float), (n,)).copy()
    return KLBasis(lam, funcs, mean, total_trace, area)


def energy_fraction(klb: KLBasis, m: int) -> float:
    if not 0 <= m <= klb.n_terms:
        raise ValueError("m out of range")
    if klb.total_trace == 0:
        return 1.0
    return float(np.sum(klb.eigenvalues[:m]) / klb.total_trace)


def log_field(klb: KLBasis, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (klb.n_terms,):
        raise ValueError(f"theta must have length {klb.n_terms}")
    if np.any(np.abs(theta) > 1.0):
        raise ValueError("theta components must lie in [-1, 1]")
    return klb.mean_field + (np.sqrt(klb.eigenvalues) * theta) @ klb.eigenfunctions


def realize_field(klb: KLBasis, theta) -> np.ndarray:
    """Permeability k = exp(a(x, theta)) per fine cell."""
    return np.exp(log_field(klb, theta))


def channelized_mean(grid: StructuredGrid, ridges=None, base: float = 0.0) -> np.ndarray:
    """Synthetic channelised log-permeability mean.

    Each ridge is ``(amplitude, x0, y0, angle, half_width, length)``: an
    anisotropic Gaussian elongated along ``angle`` (radians).
    """
    if ridges is None:
        ridges = DEFAULT_RIDGES
    c = grid.cell_centers()
    a = np.full(grid.n_cells, base, dtype=float)
    for amp, x0, y0, ang, width, length in ridges:
        dx, dy = c[:, 0] - x0, c[:, 1] - y0
        along = dx * np.cos(ang) + dy * np.sin(ang)
        across = -dx * np.sin(ang) + dy * np.cos(ang)
        a += amp * np.exp(-0.5 * (across / width) ** 2 - 0.5 * (along / length) ** 2)
    return a


DEFAULT_RIDGES = (
    (3.0, 0.35, 0.65, -0.6, 0.05, 0.45),
    (2.5, 0.65, 0.35, -0.7, 0.04, 0.40),
    (-2.0, 0.50, 0.50, 0.9, 0.06, 0.30),
)
