"""Uncertainty-quantification experiments for the quarter five-spot.

An :class:`Experiment` owns the grid, KLE, wells and coarse partition and
exposes three deterministic flow models (fine mixed, local multiscale,
global multiscale) as functions of theta. :func:`run_experiment` then
applies full sparse-grid collocation, hybrid HDMR or adaptive HDMR on top.

The model output ("QoI vector") is the saturation at each snapshot time
followed by the water-cut series.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import hdmr
from .config import ExperimentConfig
from .export import read_grid_csv, write_grid_csv
from .field import (CovarianceSpec, KLBasis, StructuredGrid, build_covariance, channelized_mean,
                    compute_kle, realize_field)
from .pressure import (GlobalVelocityLibrary, assemble_ms_basis_set, build_partition, solve_coarse,
                       solve_fine_mixed, solve_singlephase_global)
from .sparsegrid import build_sparse_grid, cc_rule, quadrature, variance_from_grid
from .transport import FracFlowModel, Wells, impes_run

log = logging.getLogger(__name__)


class MethodKind(str, enum.Enum):
    MFEM_FULL = "MFEM-full"
    L_MMSFEM_FULL = "L-MMsFEM-full"
    G_MMSFEM_FULL = "G-MMsFEM-full"
    L_MMSFEM_HYBRID = "L-MMsFEM-hybrid"
    G_MMSFEM_HYBRID = "G-MMsFEM-hybrid"
    L_MMSFEM_ADAPTIVE = "L-MMsFEM-adaptive"
    G_MMSFEM_ADAPTIVE = "G-MMsFEM-adaptive"

    @property
    def solver(self) -> str:
        """'fine', 'local' or 'global'."""
        if self is MethodKind.MFEM_FULL:
            return "fine"
        return "local" if self.value.startswith("L-") else "global"

    @property
    def reduction(self) -> str:
        """'full', 'hybrid' or 'adaptive'."""
        return self.value.rsplit("-", 1)[1]


def _hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]


def _atomic_save_npz(path, **arrays):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".npz")
    os.close(fd)
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# experiment set-up and flow models


class Experiment:
    """Shared set-up of one configuration; model runs are memoised."""

    def __init__(self, config: ExperimentConfig, klb: KLBasis | None = None):
        self.config = config
        self.grid = StructuredGrid(*config.fine)
        self.partition = build_partition(self.grid, *config.coarse)
        self.wells = Wells.quarter_five_spot(self.grid)
        self.source = self.wells.source(self.grid)
        self.model = FracFlowModel(config.flow_model, config.viscosity_ratio)
        self.timings: dict = {}
        self.cache_dir = config.resolved_cache_dir()
        t = time.perf_counter()
        self.klb = klb if klb is not None else self._load_kle()
        self.timings["kle"] = time.perf_counter() - t
        self.dim = self.klb.n_terms
        self._library: GlobalVelocityLibrary | None = None
        self.evaluators: dict = {}
        self.n_steps = int(round(config.t_end_pvi / config.dt_pvi))

    # ---- KLE
    def _load_kle(self) -> KLBasis:
        cfg = self.config
        key = _hash("kle", cfg.fine, cfg.sigma2, cfg.corr_x, cfg.corr_y, cfg.n_terms)
        path = os.path.join(self.cache_dir, f"kle-{key}.npz") if self.cache_dir else None
        if path and os.path.exists(path):
            klb = KLBasis.load(path)
        else:
            cov = build_covariance(self.grid, CovarianceSpec(cfg.sigma2, cfg.corr_x, cfg.corr_y))
            klb = compute_kle(cov, self.grid, cfg.n_terms)
            if path:
                os.makedirs(self.cache_dir, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".npz")
                os.close(fd)
                klb.save(tmp)
                os.replace(tmp, path)
        if cfg.mean_field == "channelized":
            klb = klb.with_mean(channelized_mean(self.grid))
        return klb

    def permeability(self, theta) -> np.ndarray:
        return realize_field(self.klb, theta)

    # ---- global single-phase library
    @property
    def library(self) -> GlobalVelocityLibrary:
        if self._library is None:
            t = time.perf_counter()
            self._library = precompute_global_library(self)
            self.timings["library"] = time.perf_counter() - t
        return self._library

    # ---- QoI layout
    @property
    def qoi_size(self) -> int:
        return len(self.config.snapshot_pvi) * self.grid.n_cells + self.n_steps + 1

    def split_qoi(self, vec):
        """(dict pvi -> saturation, water-cut series) from a QoI vector."""
        vec = np.asarray(vec)
        n = self.grid.n_cells
        sats = {t: vec[..., i * n:(i + 1) * n] for i, t in enumerate(self.config.snapshot_pvi)}
        return sats, vec[..., len(self.config.snapshot_pvi) * n:]

    @property
    def pvi_axis(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.config.dt_pvi

    # ---- flow models
    def pressure_solver(self, theta, solver: str):
        """Callable mapping a mobility field to the fine flux at theta."""
        k = self.permeability(theta)
        q = self.source
        if solver == "fine":
            return lambda lam: solve_fine_mixed(self.grid, lam * k, q).flux
        if solver == "local":
            basis = assemble_ms_basis_set(self.partition, k, "local", source=q)
        elif solver == "global":
            lev, lev_in = self.config.levels
            active = self.config.active
            bflux = self.library.boundary_flux(theta, active, lev, lev_in)
            basis = assemble_ms_basis_set(self.partition, k, "global", boundary_flux=bflux, source=q)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        return lambda lam: solve_coarse(basis, lam * k, q)[1].flux

    def simulate(self, theta, solver: str):
        cfg = self.config
        res = impes_run(self.grid, self.pressure_solver(theta, solver), self.model,
                        cfg.t_end_pvi, cfg.dt_pvi, self.wells, cfg.snapshot_pvi)
        return res

    def qoi(self, theta, solver: str) -> np.ndarray:
        res = self.simulate(theta, solver)
        parts = [res.snapshots[t] for t in self.config.snapshot_pvi]
        return np.concatenate(parts + [res.watercut.values])

    def evaluator(self, solver: str) -> hdmr.CachedEvaluator:
        ev = self.evaluators.get(solver)
        if ev is None:
            ev = hdmr.CachedEvaluator(lambda th, s=solver: self.qoi(th, s), self.dim)
            self.evaluators[solver] = ev
        return ev

    # ---- sensitivity functional
    def sensitivity_functional(self):
        """Reduce per-component first-order variances to one number."""
        cfg = self.config
        n = self.grid.n_cells
        if cfg.sensitivity_qoi == "saturation":
            if not cfg.snapshot_pvi:
                raise ValueError("saturation sensitivity needs at least one snapshot")
            i = int(np.argmax(cfg.snapshot_pvi))
            return lambda var: float(np.sum(var[i * n:(i + 1) * n]) * self.grid.cell_area)
        start = len(cfg.snapshot_pvi) * n
        t = self.pvi_axis
        return lambda var: float(np.trapezoid(var[start:], t))


def precompute_global_library(experiment: Experiment) -> GlobalVelocityLibrary:
    """Single-phase fine velocities on every 1-D collocation line.

    Entries are keyed by (dimension, node); with a cache directory the
    library is persisted and only missing entries are solved.
    ``library.new_solves`` counts the solves performed by this call.
    """
    cfg = experiment.config
    top = max(*cfg.levels, 2)  # the sensitivity pass runs at level 2
    nodes = [float(x) for x in cc_rule(top).nodes if x != 0.0]
    grid, q = experiment.grid, experiment.source
    key = _hash("library", cfg.fine, experiment.klb.fingerprint())
    path = (os.path.join(experiment.cache_dir, f"library-{key}.npz")
            if experiment.cache_dir else None)
    stored = {}
    if path and os.path.exists(path):
        with np.load(path) as z:
            stored = {k: z[k] for k in z.files}

    def solve(theta, what):
        try:
            return solve_singlephase_global(grid, experiment.permeability(theta), q).flux
        except Exception as exc:
            raise RuntimeError(f"single-phase solve failed for {what}: {exc}") from exc

    new = 0
    if "anchor" in stored:
        anchor = stored["anchor"]
    else:
        anchor = solve(np.zeros(experiment.dim), "the anchor")
        stored["anchor"] = anchor
        new += 1
    entries = {}
    for d in range(experiment.dim):
        for x in nodes:
            name = f"d{d}_{x!r}"
            if name not in stored:
                theta = np.zeros(experiment.dim)
                theta[d] = x
                stored[name] = solve(theta, f"dimension {d}, node {x!r}")
                new += 1
            entries[(d, x)] = stored[name]
    if path and new:
        os.makedirs(experiment.cache_dir, exist_ok=True)
        _atomic_save_npz(path, **stored)
    lib = GlobalVelocityLibrary(anchor, entries, level=cfg.level)
    lib.new_solves = new
    return lib


# --------------------------------------------------------------------------
# statistics


@dataclass
class QoIStats:
    grid: tuple  # (nx, ny)
    pvi: np.ndarray
    sat_mean: dict
    sat_std: dict
    watercut_mean: np.ndarray
    watercut_std: np.ndarray
    ledger: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def save(self, directory) -> None:
        """Write CSV artifacts; a completed directory is replaced atomically."""
        directory = os.path.abspath(directory)
        parent = os.path.dirname(directory)
        os.makedirs(parent, exist_ok=True)
        tmp = tempfile.mkdtemp(dir=parent, prefix=".tmp-qoi-")
        try:
            self._write(tmp)
            if os.path.exists(directory):
                old = tempfile.mkdtemp(dir=parent, prefix=".old-qoi-")
                os.rmdir(old)
                os.replace(directory, old)
                os.replace(tmp, directory)
                shutil.rmtree(old)
            else:
                os.replace(tmp, directory)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise

    def _write(self, d) -> None:
        nx, ny = self.grid

        def series(name, values):
            with open(os.path.join(d, name), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["pvi", "value"])
                for t, v in zip(self.pvi, values):
                    w.writerow([repr(float(t)), repr(float(v))])

        def field_csv(name, values):
            write_grid_csv(os.path.join(d, name), values, nx, ny)

        series("watercut_mean.csv", self.watercut_mean)
        series("watercut_std.csv", self.watercut_std)
        for t in self.sat_mean:
            field_csv(f"sat_mean_{t:g}.csv", self.sat_mean[t])
            field_csv(f"sat_std_{t:g}.csv", self.sat_std[t])
        with open(os.path.join(d, "ledger.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for k in sorted(self.ledger):
                w.writerow([k, self.ledger[k]])
        with open(os.path.join(d, "timings.json"), "w") as fh:
            json.dump(self.timings, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory) -> "QoIStats":
        def series(name):
            with open(os.path.join(directory, name)) as fh:
                rows = list(csv.reader(fh))[1:]
            arr = np.array([[float(a), float(b)] for a, b in rows])
            return arr[:, 0], arr[:, 1]

        def field_csv(name):
            return read_grid_csv(os.path.join(directory, name))

        pvi, wm = series("watercut_mean.csv")
        _, ws = series("watercut_std.csv")
        sat_mean, sat_std, grid = {}, {}, None
        for name in sorted(os.listdir(directory)):
            if name.startswith("sat_mean_") and name.endswith(".csv"):
                t = float(name[len("sat_mean_"):-4])
                grid, sat_mean[t] = field_csv(name)
                _, sat_std[t] = field_csv(f"sat_std_{name[len('sat_mean_'):]}")
        ledger = {}
        lpath = os.path.join(directory, "ledger.csv")
        if os.path.exists(lpath):
            with open(lpath) as fh:
                ledger = {k: v for k, v in list(csv.reader(fh))[1:]}
        timings = {}
        tpath = os.path.join(directory, "timings.json")
        if os.path.exists(tpath):
            with open(tpath) as fh:
                timings = json.load(fh)
        return cls(grid, pvi, sat_mean, sat_std, wm, ws, ledger, timings)


def _stats_from_moments(exp: Experiment, mean, var, ledger, timings) -> QoIStats:
    std = np.sqrt(np.maximum(var, 0.0))
    sm, wm = exp.split_qoi(mean)
    ss, ws = exp.split_qoi(std)
    return QoIStats(exp.config.fine, exp.pvi_axis, dict(sm), dict(ss), wm, ws, ledger, timings)


def sensitivity_report(exp: Experiment, solver: str) -> hdmr.SensitivityReport:
    """First-order variances of the configured functional at level 2."""
    t = time.perf_counter()
    variances = hdmr.first_order_variances(exp.evaluator(solver), exp.dim, 2,
                                           reduce=exp.sensitivity_functional(),
                                           workers=exp.config.workers)
    exp.timings["sensitivity"] = exp.timings.get("sensitivity", 0.0) + time.perf_counter() - t
    return hdmr.sensitivity_select(variances, exp.config.zeta)


def run_experiment(config: ExperimentConfig, method=None, experiment: Experiment | None = None,
                   report: hdmr.SensitivityReport | None = None) -> QoIStats:
    """Mean and standard deviation of saturation and water-cut.

    Pass a shared ``experiment`` to reuse the KLE, the global library and
    memoised model runs across methods.
    """
    exp = experiment or Experiment(config)
    cfg = exp.config
    kind = MethodKind(method or cfg.method)
    solver, reduction = kind.solver, kind.reduction
    lev, lev_in = cfg.levels
    ev = exp.evaluator(solver)
    timings = {"kle": exp.timings.get("kle", 0.0)}
    if solver == "global":
        _ = exp.library
        timings["library"] = exp.timings.get("library", 0.0)
    ledger = {"method": kind.value, "N": exp.dim, "level": lev}
    runs_before = ev.n_unique

    if reduction == "full":
        grid = build_sparse_grid(exp.dim, lev, cfg.node_budget)
        t = time.perf_counter()
        values = ev.many(grid.nodes, cfg.workers)
        timings["solves"] = time.perf_counter() - t
        t = time.perf_counter()
        mean = quadrature(grid, values)
        var = variance_from_grid(grid, values)
        timings["stats"] = time.perf_counter() - t
        ledger.update(model_solves=grid.size, J=exp.dim)
    else:
        if cfg.active is not None:
            active = cfg.active
        else:
            if report is None:
                report = sensitivity_report(exp, solver)
            active = report.active
            timings["sensitivity"] = exp.timings.get("sensitivity", 0.0)
        ledger.update(J=len(active), active=" ".join(str(a) for a in active), level_inactive=lev_in)
        t = time.perf_counter()
        if reduction == "hybrid":
            dec = hdmr.build_hybrid(ev, exp.dim, active, lev, lev_in,
                                    node_budget=cfg.node_budget, workers=cfg.workers)
            timings["solves"] = time.perf_counter() - t
            t = time.perf_counter()
            mean, var = hdmr.hybrid_stats(dec)
            timings["stats"] = time.perf_counter() - t
        else:
            order = min(cfg.adaptive_order, len(active))
            dec = hdmr.build_adaptive(ev, exp.dim, active, order, lev, lev_in,
                                      node_budget=cfg.node_budget, workers=cfg.workers)
            timings["solves"] = time.perf_counter() - t
            t = time.perf_counter()
            outer = build_sparse_grid(exp.dim, lev, cfg.node_budget)
            mean, var, count = hdmr.adaptive_stats(dec, outer, return_count=True)
            timings["stats"] = time.perf_counter() - t
            ledger.update(order=order, interpolations=count)
        ledger["model_solves"] = dec.ledger
    ledger["unique_runs_new"] = ev.n_unique - runs_before
    return _stats_from_moments(exp, mean, var, ledger, timings)


# --------------------------------------------------------------------------
# errors


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return num / den


@dataclass
class ErrorReport:
    pvi: float
    mean_sat: float
    std_sat: float
    mean_watercut: float
    std_watercut: float

    def as_dict(self) -> dict:
        return {"pvi": self.pvi, "E_m(S)": self.mean_sat, "E_std(S)": self.std_sat,
                "E_m(W)": self.mean_watercut, "E_std(W)": self.std_watercut}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in self.as_dict().items():
                w.writerow([k, repr(float(v))])


def _closest_key(d: dict, t: float):
    for k in d:
        if abs(float(k) - t) <= 1e-9:
            return k
    raise KeyError(f"no saturation snapshot at {t} PVI")


def relative_errors(reference: QoIStats, test: QoIStats, pvi: float) -> ErrorReport:
    """Relative L1 errors in space and relative L2 errors over PVI."""
    if tuple(reference.grid) != tuple(test.grid):
        raise ValueError("grids differ")
    if reference.pvi.shape != test.pvi.shape or np.abs(reference.pvi - test.pvi).max() > 1e-12:
        raise ValueError("time axes differ")
    kr, kt = _closest_key(reference.sat_mean, pvi), _closest_key(test.sat_mean, pvi)

    def l1(a, b):
        return _ratio(float(np.abs(a - b).sum()), float(np.abs(a).sum()))

    def l2(a, b):
        num = np.sqrt(np.trapezoid((a - b) ** 2, reference.pvi))
        den = np.sqrt(np.trapezoid(a**2, reference.pvi))
        return _ratio(float(num), float(den))

    return ErrorReport(
        pvi=float(pvi),
        mean_sat=l1(reference.sat_mean[kr], test.sat_mean[kt]),
        std_sat=l1(reference.sat_std[kr], test.sat_std[kt]),
        mean_watercut=l2(reference.watercut_mean, test.watercut_mean),
        std_watercut=l2(reference.watercut_std, test.watercut_std),
    )


def multiscale_error(exp: Experiment, theta, solver: str, pvi: float | None = None) -> float:
    """Relative L1 saturation gap between a multiscale and the fine model."""
    pvi = max(exp.config.snapshot_pvi) if pvi is None else pvi
    ref = exp.simulate(theta, "fine").snapshots[pvi]
    ms = exp.simulate(theta, solver).snapshots[pvi]
    return _ratio(float(np.abs(ref - ms).sum()), float(np.abs(ref).sum()))
