"""Anchored (cut) HDMR on top of Smolyak collocation.

A model is any callable mapping a point theta in [-1, 1]^N to a scalar
or an array-valued quantity of interest (QoI). All formulas act
component-wise on the QoI; nodal results are stacked along axis 0.

Notation: P_v f is f with every coordinate outside ``v`` frozen at the
anchor. The hybrid surrogate keeps the full expansion on the active set
J and first-order terms elsewhere::

    M_J f = A[P_J f] + sum_{i not in J} (A[P_i f] - f0)

The adaptive surrogate truncates the expansion on J at order q.
"""
from __future__ import annotations

import csv
import pickle
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .sparsegrid import (DEFAULT_NODE_BUDGET, BudgetExceeded, SparseGrid, build_sparse_grid,
                         cc_rule, count_nodes, interpolate, lagrange_basis, quadrature,
                         variance_from_grid)

_FORMAT_VERSION = 1


class EvaluationError(RuntimeError):
    """Model evaluation failed; ``point`` holds the offending theta."""

    def __init__(self, point, cause):
        self.point = np.array(point, dtype=float)
        super().__init__(f"model evaluation failed at theta={self.point.tolist()}: {cause}")


class CachedEvaluator:
    """Memoising wrapper around a model.

    Identical points (bit-for-bit) are solved once; ``n_requests`` counts
    every lookup and ``n_unique`` the distinct model runs.
    """

    def __init__(self, fn, dim: int):
        self.fn = fn
        self.dim = dim
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.n_requests = 0

    @property
    def n_unique(self) -> int:
        return len(self._cache)

    def _key(self, theta) -> tuple:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}")
        return tuple(theta.tolist())

    def _run(self, key):
        try:
            value = np.asarray(self.fn(np.array(key)), dtype=float)
        except EvaluationError:
            raise
        except Exception as exc:
            raise EvaluationError(key, exc) from exc
        value.flags.writeable = False
        return value

    def __call__(self, theta):
        key = self._key(theta)
        with self._lock:
            self.n_requests += 1
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        value = self._run(key)
        with self._lock:
            self._cache.setdefault(key, value)
        return value

    def many(self, points, workers: int = 1) -> np.ndarray:
        """Evaluate rows of ``points``; the result follows row order."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        keys = [self._key(p) for p in points]
        with self._lock:
            self.n_requests += len(keys)
            todo = list(dict.fromkeys(k for k in keys if k not in self._cache))
        if workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self._run, todo))
        else:
            results = [self._run(k) for k in todo]
        with self._lock:
            for k, v in zip(todo, results):
                self._cache.setdefault(k, v)
            return np.stack([self._cache[k] for k in keys])


def _as_cached(evaluator, dim: int) -> CachedEvaluator:
    if isinstance(evaluator, CachedEvaluator):
        if evaluator.dim != dim:
            raise ValueError("evaluator dimension mismatch")
        return evaluator
    return CachedEvaluator(evaluator, dim)


def _anchor(dim: int, anchor) -> np.ndarray:
    a = np.zeros(dim) if anchor is None else np.asarray(anchor, dtype=float).copy()
    if a.shape != (dim,) or np.any(np.abs(a) > 1):
        raise ValueError("anchor must lie in [-1, 1]^N")
    return a


def _embed(anchor: np.ndarray, dims, sub_points: np.ndarray) -> np.ndarray:
    pts = np.tile(anchor, (len(sub_points), 1))
    pts[:, list(dims)] = sub_points
    return pts


# --------------------------------------------------------------------------
# first-order components and sensitivity


def first_order_component(evaluator, dim_index: int, level: int, dim: int, anchor=None,
                          workers: int = 1):
    """Nodes and values of f_i(theta_i) = f(anchor | theta_i) - f0.

    Returns ``(nodes, values)`` on the 1-D Clenshaw-Curtis rule.
    """
    if not 0 <= dim_index < dim:
        raise ValueError("dim_index out of range")
    ev = _as_cached(evaluator, dim)
    a = _anchor(dim, anchor)
    f0 = ev(a)
    nodes = cc_rule(level).nodes
    vals = ev.many(_embed(a, [dim_index], nodes[:, None]), workers) - f0
    if anchor is None or a[dim_index] == 0.0:
        vals[len(nodes) // 2] = 0.0
    return nodes, vals


def _rule_variance(rule, vals):
    """Centred 1-D quadrature variance, clipped at zero."""
    dev = vals - np.tensordot(rule.weights, vals, axes=1)
    return np.maximum(np.tensordot(rule.weights, dev * dev, axes=1), 0.0)


def first_order_variances(evaluator, dim: int, level: int, reduce=None, anchor=None,
                          workers: int = 1) -> np.ndarray:
    """sigma^2(f_i) for every dimension.

    For array-valued models the per-component variances are reduced to a
    scalar by ``reduce`` (default: plain sum).
    """
    rule = cc_rule(level)
    out = np.empty(dim)
    for i in range(dim):
        _, vals = first_order_component(evaluator, i, level, dim, anchor, workers)
        var = _rule_variance(rule, vals)
        out[i] = float(np.sum(var)) if reduce is None else float(reduce(var))
    return out


@dataclass
class SensitivityReport:
    variances: np.ndarray
    order: np.ndarray
    zeta: float
    n_active: int
    active: tuple

    @property
    def cumulative_fraction(self) -> np.ndarray:
        v = self.variances[self.order]
        return np.cumsum(v) / v.sum()

    def to_csv(self, path) -> None:
        frac = self.cumulative_fraction
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "dim", "variance", "cumulative_fraction", "active"])
            for r, d in enumerate(self.order):
                w.writerow([r + 1, int(d), repr(float(self.variances[d])),
                            repr(float(frac[r])), int(r < self.n_active)])


def sensitivity_select(variances, zeta: float) -> SensitivityReport:
    """Smallest J whose top-J first-order variances reach fraction zeta.

    Dimensions are 0-based; ties keep the original index order.
    """
    v = np.asarray(variances, dtype=float)
    if v.ndim != 1 or v.size == 0 or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("variances must be a non-empty vector of finite values >= 0")
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (0, 1)")
    total = v.sum()
    if total <= 0:
        raise ValueError("all first-order variances are zero: no active dimension")
    order = np.argsort(-v, kind="stable")
    frac = np.cumsum(v[order]) / total
    n_active = int(np.searchsorted(frac >= zeta * (1 - 1e-12), True)) + 1
    n_active = min(n_active, v.size)
    return SensitivityReport(v, order, zeta, n_active, tuple(sorted(int(d) for d in order[:n_active])))


# --------------------------------------------------------------------------
# hybrid decomposition


@dataclass
class HybridDecomposition:
    dim: int
    active: tuple
    anchor: np.ndarray
    f0: np.ndarray
    level: int
    level_inactive: int
    active_grid: SparseGrid
    active_values: np.ndarray
    inactive_values: dict  # i -> values of P_i f on the 1-D rule of level_inactive
    ledger: int
    unique_runs: int = 0

    @property
    def inactive(self) -> tuple:
        return tuple(i for i in range(self.dim) if i not in self.active)

    @property
    def qoi_shape(self) -> tuple:
        return self.f0.shape


def _check_active(dim, active):
    active = tuple(sorted(set(int(a) for a in active)))
    if not active:
        raise ValueError("active set must be nonempty")
    if active[0] < 0 or active[-1] >= dim:
        raise ValueError("active index out of range")
    return active


def build_hybrid(evaluator, dim: int, active, level: int = 2, level_inactive: int | None = None,
                 anchor=None, node_budget: int = DEFAULT_NODE_BUDGET,
                 workers: int = 1) -> HybridDecomposition:
    """Collocate P_J f on a Smolyak grid and P_i f on 1-D rules."""
    active = _check_active(dim, active)
    level_inactive = level if level_inactive is None else level_inactive
    ev = _as_cached(evaluator, dim)
    a = _anchor(dim, anchor)
    inactive = [i for i in range(dim) if i not in active]
    ledger = count_nodes(len(active), level) + len(inactive) * cc_rule(level_inactive).size + 1
    if ledger > node_budget:
        raise BudgetExceeded(f"hybrid decomposition needs {ledger} runs > budget {node_budget}")
    f0 = np.array(ev(a))
    grid = build_sparse_grid(len(active), level, node_budget)
    block = ev.many(_embed(a, active, grid.nodes), workers)
    nodes = cc_rule(level_inactive).nodes
    lines = {i: ev.many(_embed(a, [i], nodes[:, None]), workers) for i in inactive}
    return HybridDecomposition(dim, active, a, f0, level, level_inactive, grid, block, lines,
                               ledger, ev.n_unique)


def _points(dim, points):
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != dim:
        raise ValueError(f"points must have {dim} coordinates")
    if np.any(np.abs(pts) > 1):
        raise ValueError("point outside [-1, 1]^N")
    return pts, single


def _line_interp(level, values, x):
    basis = lagrange_basis(cc_rule(level).nodes, x)
    flat = values.reshape(values.shape[0], -1)
    return (basis @ flat).reshape((len(x),) + values.shape[1:])


def evaluate_hybrid(dec: HybridDecomposition, points):
    """Surrogate value at one point (length N) or at rows of a (P, N) array."""
    pts, single = _points(dec.dim, points)
    out = interpolate(dec.active_grid, dec.active_values, pts[:, list(dec.active)])
    out = np.array(out, dtype=float).reshape((len(pts),) + dec.qoi_shape)
    for i, vals in dec.inactive_values.items():
        out += _line_interp(dec.level_inactive, vals, pts[:, i]) - dec.f0
    return out[0] if single else out


def hybrid_stats(dec: HybridDecomposition):
    """Mean and variance by summing the block and 1-D component moments."""
    rule = cc_rule(dec.level_inactive)
    mean = quadrature(dec.active_grid, dec.active_values).astype(float)
    var = variance_from_grid(dec.active_grid, dec.active_values).astype(float)
    for vals in dec.inactive_values.values():
        m = np.tensordot(rule.weights, vals, axes=1)
        mean = mean + m - dec.f0
        var = var + _rule_variance(rule, vals)
    return mean, var


@dataclass
class AnovaDecomposition:
    """Same surrogate written with zero-mean 1-D components."""

    dim: int
    active: tuple
    f0: np.ndarray  # E[f^cut]
    level_inactive: int
    active_grid: SparseGrid
    block_values: np.ndarray
    components: dict  # i -> zero-mean values on the 1-D rule

    @property
    def qoi_shape(self) -> tuple:
        return self.f0.shape


def cut_to_anova(dec: HybridDecomposition) -> AnovaDecomposition:
    rule = cc_rule(dec.level_inactive)
    shift = np.zeros(dec.qoi_shape)
    comps = {}
    for i, vals in dec.inactive_values.items():
        cut = vals - dec.f0
        mean = np.tensordot(rule.weights, cut, axes=1)
        comps[i] = cut - mean
        shift = shift + mean
    block = dec.active_values + shift
    f0 = quadrature(dec.active_grid, block)
    return AnovaDecomposition(dec.dim, dec.active, np.asarray(f0, dtype=float), dec.level_inactive,
                              dec.active_grid, block, comps)


def evaluate_anova(dec: AnovaDecomposition, points):
    pts, single = _points(dec.dim, points)
    out = interpolate(dec.active_grid, dec.block_values, pts[:, list(dec.active)])
    out = np.array(out, dtype=float).reshape((len(pts),) + dec.qoi_shape)
    for i, vals in dec.components.items():
        out += _line_interp(dec.level_inactive, vals, pts[:, i])
    return out[0] if single else out


def anova_stats(dec: AnovaDecomposition):
    rule = cc_rule(dec.level_inactive)
    mean = quadrature(dec.active_grid, dec.block_values).astype(float)
    var = variance_from_grid(dec.active_grid, dec.block_values).astype(float)
    for vals in dec.components.values():
        mean = mean + np.tensordot(rule.weights, vals, axes=1)
        var = var + _rule_variance(rule, vals)
    return mean, var


def component_means(dec: AnovaDecomposition) -> dict:
    rule = cc_rule(dec.level_inactive)
    return {i: np.tensordot(rule.weights, v, axes=1) for i, v in dec.components.items()}


# --------------------------------------------------------------------------
# adaptive decomposition


def _subset_coeff(n_active: int, size: int, order: int) -> int:
    """Inclusion-exclusion weight of P_v f (|v| = size) in the order-q truncation."""
    return sum((-1) ** k * comb(n_active - size, k) for k in range(order - size + 1))


@dataclass
class AdaptiveDecomposition:
    dim: int
    active: tuple
    order: int
    anchor: np.ndarray
    f0: np.ndarray
    level: int
    level_inactive: int
    subsets: dict  # v -> (grid over |v| dims, nodal values of P_v f)
    coeffs: dict  # v -> integer weight, including () for the anchor term
    inactive_values: dict
    ledger: int
    unique_runs: int = 0
    last_interpolation_count: int = 0

    @property
    def qoi_shape(self) -> tuple:
        return self.f0.shape


def build_adaptive(evaluator, dim: int, active, order: int = 2, level: int = 2,
                   level_inactive: int | None = None, anchor=None,
                   node_budget: int = DEFAULT_NODE_BUDGET, workers: int = 1) -> AdaptiveDecomposition:
    """Collocate P_v f for every v in J with 1 <= |v| <= q, plus 1-D terms."""
    active = _check_active(dim, active)
    if not 1 <= order <= len(active):
        raise ValueError("order must satisfy 1 <= q <= |J|")
    level_inactive = level if level_inactive is None else level_inactive
    ev = _as_cached(evaluator, dim)
    a = _anchor(dim, anchor)
    J = len(active)
    inactive = [i for i in range(dim) if i not in active]
    ledger = (sum(comb(J, j) * count_nodes(j, level) for j in range(1, order + 1))
              + len(inactive) * cc_rule(level_inactive).size + 1)
    if ledger > node_budget:
        raise BudgetExceeded(f"adaptive decomposition needs {ledger} runs > budget {node_budget}")
    f0 = np.array(ev(a))
    subsets = {}
    coeffs = {(): _subset_coeff(J, 0, order)}
    for size in range(1, order + 1):
        grid = build_sparse_grid(size, level, node_budget)
        for v in combinations(active, size):
            subsets[v] = (grid, ev.many(_embed(a, v, grid.nodes), workers))
            coeffs[v] = _subset_coeff(J, size, order)
    nodes = cc_rule(level_inactive).nodes
    lines = {i: ev.many(_embed(a, [i], nodes[:, None]), workers) for i in inactive}
    return AdaptiveDecomposition(dim, active, order, a, f0, level, level_inactive, subsets, coeffs,
                                 lines, ledger, ev.n_unique)


def evaluate_adaptive(dec: AdaptiveDecomposition, points):
    pts, single = _points(dec.dim, points)
    out = np.zeros((len(pts),) + dec.qoi_shape)
    out += dec.coeffs[()] * dec.f0
    for v, (grid, vals) in dec.subsets.items():
        c = dec.coeffs[v]
        if c:
            out += c * np.asarray(interpolate(grid, vals, pts[:, list(v)])).reshape(out.shape)
    for i, vals in dec.inactive_values.items():
        out += _line_interp(dec.level_inactive, vals, pts[:, i]) - dec.f0
    return out[0] if single else out


def adaptive_stats(dec: AdaptiveDecomposition, outer_grid: SparseGrid, return_count: bool = False):
    """Mean by component quadrature; variance on the full-dimensional grid.

    The variance path interpolates every component at every outer node,
    so its cost grows with the outer grid size; the number of
    interpolations is stored in ``last_interpolation_count``.  The block
    on the active set and each inactive 1-D term depend on disjoint
    independent variables, so their covariances vanish; the variance is
    accumulated group by group on the outer nodes rather than letting the
    outer rule integrate those cross products approximately.
    """
    if outer_grid.dim != dec.dim:
        raise ValueError("outer grid dimension must equal N")
    rule = cc_rule(dec.level_inactive)
    mean = dec.coeffs[()] * dec.f0
    for v, (grid, vals) in dec.subsets.items():
        mean = mean + dec.coeffs[v] * quadrature(grid, vals)
    for vals in dec.inactive_values.values():
        mean = mean + np.tensordot(rule.weights, vals, axes=1) - dec.f0
    pts = outer_grid.nodes
    block = np.zeros((len(pts),) + dec.qoi_shape)
    for v, (grid, vals) in dec.subsets.items():
        c = dec.coeffs[v]
        if c:
            block += c * np.asarray(interpolate(grid, vals, pts[:, list(v)])).reshape(block.shape)
    var = variance_from_grid(outer_grid, block)
    for i, vals in dec.inactive_values.items():
        var = var + variance_from_grid(outer_grid, _line_interp(dec.level_inactive, vals, pts[:, i]))
    count = outer_grid.size * (len(dec.subsets) + len(dec.inactive_values))
    dec.last_interpolation_count = count
    mean = np.asarray(mean, dtype=float)
    if return_count:
        return mean, var, count
    return mean, var


# --------------------------------------------------------------------------
# exact projections (no interpolation), for vectorised callables f(P x N)


def hybrid_projection(f, dim: int, active, anchor=None):
    """Callable evaluating P_J f + sum_{i not in J} (P_i f - f0) exactly."""
    active = _check_active(dim, active)
    a = _anchor(dim, anchor)
    inactive = [i for i in range(dim) if i not in active]
    f0 = f(a[None, :])[0]

    def proj(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.array(f(_embed(a, active, pts[:, list(active)])), dtype=float)
        for i in inactive:
            out += f(_embed(a, [i], pts[:, [i]])) - f0
        return out

    return proj


def adaptive_projection(f, dim: int, active, order: int, anchor=None):
    """Callable evaluating the order-q truncation on J plus 1-D terms exactly."""
    active = _check_active(dim, active)
    a = _anchor(dim, anchor)
    J = len(active)
    inactive = [i for i in range(dim) if i not in active]
    f0 = f(a[None, :])[0]
    terms = [(v, _subset_coeff(J, len(v), order)) for s in range(1, order + 1)
             for v in combinations(active, s)]
    c0 = _subset_coeff(J, 0, order)

    def proj(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts)) + c0 * f0
        for v, c in terms:
            if c:
                out = out + c * f(_embed(a, v, pts[:, list(v)]))
        for i in inactive:
            out = out + f(_embed(a, [i], pts[:, [i]])) - f0
        return out

    return proj


# --------------------------------------------------------------------------
# complexity ledger


@dataclass(frozen=True)
class ComplexityCounts:
    full: int
    truncated: int
    hybrid: int
    adaptive: int

    def as_dict(self) -> dict:
        return {"full": self.full, "truncated_q": self.truncated, "hybrid": self.hybrid,
                "adaptive": self.adaptive}


def complexity_counts(n: int, n_active: int, level: int = 2, order: int = 2,
                      level_inactive: int | None = None) -> ComplexityCounts:
    """Model-run counts of the four collocation strategies.

    HDMR-based counts include one anchor run and do not deduplicate the
    centre node shared by the component grids.
    """
    if not 1 <= n_active <= n:
        raise ValueError("need 1 <= J <= N")
    lp = level if level_inactive is None else level_inactive
    ones = (n - n_active) * count_nodes(1, lp)
    truncated = sum(comb(n, j) * count_nodes(j, level) for j in range(1, min(order, n) + 1))
    adaptive = sum(comb(n_active, j) * count_nodes(j, level)
                   for j in range(1, min(order, n_active) + 1))
    return ComplexityCounts(full=count_nodes(n, level), truncated=truncated,
                            hybrid=count_nodes(n_active, level) + ones + 1,
                            adaptive=adaptive + ones + 1)


# --------------------------------------------------------------------------
# persistence


def save_decomposition(dec, path) -> None:
    with open(path, "wb") as fh:
        pickle.dump({"version": _FORMAT_VERSION, "decomposition": dec}, fh)


def load_decomposition(path):
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != _FORMAT_VERSION:
        raise ValueError(f"unsupported decomposition format {payload.get('version')!r}")
    return payload["decomposition"]
