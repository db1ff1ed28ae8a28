"""Nested Clenshaw-Curtis Smolyak sparse grids on [-1, 1]^N.

Weights are taken with respect to the uniform probability density
2^-N, so quadrature sums directly estimate expectations.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

DEFAULT_NODE_BUDGET = 10**6


class BudgetExceeded(RuntimeError):
    """Raised when a requested grid would exceed the node budget."""


@dataclass(frozen=True)
class Rule1D:
    level: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.nodes)


def rule_size(level: int) -> int:
    return 1 if level == 0 else 2**level + 1


@lru_cache(maxsize=None)
def cc_rule(level: int) -> Rule1D:
    """Clenshaw-Curtis rule of the given level, ascending nodes.

    Node ``k`` of level ``l`` is bit-identical to node ``2k`` of level
    ``l + 1``: the cosine argument differs only by exact powers of two.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    if level == 0:
        return Rule1D(0, np.zeros(1), np.ones(1))
    n = 2**level
    k = np.arange(n + 1)
    x = -np.cos(np.pi * k / n)
    half = n // 2
    x[half] = 0.0
    x[n - k[:half]] = -x[:half]
    x[0], x[n] = -1.0, 1.0

    # Closed-form CC weights on [-1, 1] (sum 2), then halved for the density.
    theta = np.pi * k / n
    w = np.ones(n + 1)
    for j in range(1, half + 1):
        b = 1.0 if 2 * j == n else 2.0
        w -= b * np.cos(2 * j * theta) / (4 * j * j - 1)
    c = np.full(n + 1, 2.0)
    c[0] = c[n] = 1.0
    w *= c / n
    w = 0.5 * (w + w[::-1])
    x.flags.writeable = False
    w = w / 2.0
    w.flags.writeable = False
    return Rule1D(level, x, w)


@dataclass(frozen=True)
class SmolyakTerm:
    """One tensor-product interpolant in the combination formula.

    ``dims`` lists the coordinates with positive level; all other
    coordinates sit on the level-0 node (0.0). ``index`` maps tensor
    positions to rows of the grid node array.
    """

    coeff: int
    dims: tuple
    levels: tuple
    index: np.ndarray


@dataclass
class SparseGrid:
    dim: int
    level: int
    nodes: np.ndarray
    weights: np.ndarray
    terms: list = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def multi_indices(self) -> list:
        """Full level vectors of the contributing tensor grids."""
        out = []
        for t in self.terms:
            v = [0] * self.dim
            for d, l in zip(t.dims, t.levels):
                v[d] = l
            out.append(tuple(v))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"theta_{i + 1}" for i in range(self.dim)] + ["weight"])
            for x, w in zip(self.nodes, self.weights):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(w))])


def _sparse_multi_indices(dim: int, level: int):
    """Yield (dims, levels) for every level vector with |i| <= level.

    Only positive entries are listed, so high dimensions stay cheap.
    """
    yield (), ()
    for k in range(1, min(dim, level) + 1):
        # positive compositions of s into k parts, s <= level
        comps = []
        for s in range(k, level + 1):
            for cut in itertools.combinations(range(1, s), k - 1):
                bounds = (0,) + cut + (s,)
                comps.append(tuple(bounds[i + 1] - bounds[i] for i in range(k)))
        for dims in itertools.combinations(range(dim), k):
            for levels in comps:
                yield dims, levels


def count_nodes(dim: int, level: int) -> int:
    """Number of distinct nodes H(dim + level, dim) of the nested CC grid."""
    if dim < 1 or level < 0:
        raise ValueError("dim must be >= 1 and level >= 0")
    # new points contributed by each 1-D level: 1, 2, 2, 4, 8, ...
    new = [1] + [2 if l == 1 else 2 ** (l - 1) for l in range(1, level + 1)]
    poly = [1] + [0] * level
    for _ in range(dim):
        nxt = [0] * (level + 1)
        for a, ca in enumerate(poly):
            if ca:
                for b in range(level + 1 - a):
                    nxt[a + b] += ca * new[b]
        poly = nxt
    return sum(poly)


@lru_cache(maxsize=64)
def _cached_grid(dim: int, level: int) -> SparseGrid:
    return _build(dim, level)


def build_sparse_grid(dim: int, level: int, node_budget: int = DEFAULT_NODE_BUDGET) -> SparseGrid:
    """Smolyak grid A(dim + level, dim) built from nested CC rules.

    Grids are cached and must be treated as read-only.
    """
    if dim < 1 or level < 0:
        raise ValueError("dim must be >= 1 and level >= 0")
    n = count_nodes(dim, level)
    if n > node_budget:
        raise BudgetExceeded(f"sparse grid ({dim}, {level}) has {n} nodes > budget {node_budget}")
    return _cached_grid(dim, level)


def _build(dim: int, level: int) -> SparseGrid:
    key_to_row: dict = {}
    coords: list = []
    weights: list = []
    raw_terms = []
    for dims, levels in _sparse_multi_indices(dim, level):
        s = sum(levels)
        gap = level - s
        if gap > dim - 1:
            continue
        coeff = (-1) ** gap * comb(dim - 1, gap)
        rules = [cc_rule(l) for l in levels]
        shape = tuple(r.size for r in rules)
        index = np.empty(shape, dtype=np.intp)
        for pos in np.ndindex(*shape):
            key = tuple((d, rules[a].nodes[p]) for a, (d, p) in enumerate(zip(dims, pos))
                        if rules[a].nodes[p] != 0.0)
            row = key_to_row.get(key)
            if row is None:
                row = len(coords)
                key_to_row[key] = row
                coords.append(key)
                weights.append([])
            w = float(coeff)
            for a, p in enumerate(pos):
                w *= rules[a].weights[p]
            weights[row].append(w)
            index[pos] = row
        raw_terms.append(SmolyakTerm(coeff, dims, levels, index))

    nodes = np.zeros((len(coords), dim))
    for row, key in enumerate(coords):
        for d, x in key:
            nodes[row, d] = x
    nodes.flags.writeable = False
    # exactly rounded sums: combination coefficients reach C(dim-1, level)
    w = np.array([math.fsum(parts) for parts in weights])
    w.flags.writeable = False
    return SparseGrid(dim, level, nodes, w, raw_terms)


def _check_values(grid: SparseGrid, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.size:
        raise ValueError(f"expected {grid.size} nodal values, got {values.shape[0]}")
    return values


def quadrature(grid: SparseGrid, values):
    """Sum of nodal values times weights; works on trailing QoI axes."""
    values = _check_values(grid, values)
    return np.tensordot(grid.weights, values, axes=1)


def variance_from_grid(grid: SparseGrid, values, raw: bool = False):
    """Quadrature estimate of E[f^2] - E[f]^2.

    Evaluated in centred form, sum w (f - m)^2 with m the quadrature mean,
    which equals the raw moment difference when the weights sum to one
    but does not leave a rounding residue for constant data.  The estimate
    can dip below zero because the rule is not positive for f^2; it is
    clipped at zero unless ``raw`` is set.
    """
    values = _check_values(grid, values)
    mean = np.tensordot(grid.weights, values, axes=1)
    dev = values - mean
    var = np.tensordot(grid.weights, dev * dev, axes=1)
    if raw:
        return var
    return np.maximum(var, 0.0)


def lagrange_basis(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Lagrange basis polynomials through ``nodes`` evaluated at ``x``.

    Returns an array of shape (len(x), len(nodes)); exact 0/1 at nodes.
    """
    x = np.asarray(x, dtype=float)
    m = len(nodes)
    out = np.ones((x.size, m))
    if m == 1:
        return out
    for k in range(m):
        for j in range(m):
            if j != k:
                out[:, k] *= (x - nodes[j]) / (nodes[k] - nodes[j])
    return out


def interpolate(grid: SparseGrid, values, points):
    """Evaluate the Smolyak interpolant of nodal ``values`` at ``points``.

    ``points`` may be a single point of length ``dim`` or an array of
    shape (P, dim). Trailing axes of ``values`` are carried through.
    """
    values = _check_values(grid, values)
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != grid.dim:
        raise ValueError(f"points must have {grid.dim} coordinates")
    if np.any(np.abs(pts) > 1.0):
        raise ValueError("interpolation point outside [-1, 1]^dim")
    flat = values.reshape(grid.size, -1)
    out = np.zeros((pts.shape[0], flat.shape[1]))
    for term in grid.terms:
        if not term.dims:
            out += term.coeff * flat[term.index.reshape(-1)]
            continue
        basis = None
        for d, l in zip(term.dims, term.levels):
            b = lagrange_basis(cc_rule(l).nodes, pts[:, d])
            basis = b if basis is None else (basis[:, :, None] * b[:, None, :]).reshape(len(pts), -1)
        out += term.coeff * (basis @ flat[term.index.reshape(-1)])
    out = out.reshape((pts.shape[0],) + values.shape[1:])
    return out[0] if single else out
