"""Test functions on [-1, 1]^N shared by the HDMR property tests.

Each member is vectorised over rows of a (P, N) array. Non-polynomial
(Genz-style oscillatory, product-peak, corner and Gaussian) parts only
enter through interaction terms that vanish on every cut through the
anchor, so the collocated surrogate stays inside the exactness space of
the level-2 rules while the true function does not.

Interaction terms are odd in at least one variable, which makes the cut
components of the truncation gap orthogonal to the remaining error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss


@dataclass(frozen=True)
class Member:
    name: str
    dim: int
    active: tuple
    order: int  # truncation order used for the adaptive surrogate
    f: object

    def scalar(self, theta):
        return float(self.f(np.asarray(theta, dtype=float)[None, :])[0])


def _m(name, dim, active, order):
    def wrap(fn):
        return Member(name, dim, active, order, fn)
    return wrap


@_m("constant", 4, (0, 1), 1)
def _constant(x):
    return np.full(len(x), 2.5)


@_m("linear_plus_bilinear", 4, (1, 2), 1)
def _lin_bilin(x):
    return x[:, 0] + x[:, 1] * x[:, 2]


@_m("quadratic_mix", 6, (0, 1, 2), 2)
def _quad_mix(x):
    return (1 + 2 * x[:, 0] - x[:, 1] ** 2 + 0.7 * x[:, 0] * x[:, 1] + 0.4 * x[:, 1] * x[:, 2]
            + 0.3 * x[:, 3] ** 2 - 0.2 * x[:, 4] + 0.1 * x[:, 5] + 0.5 * x[:, 3] * x[:, 5]
            + 0.8 * x[:, 0] * x[:, 1] * x[:, 2])


@_m("oscillatory_interaction", 6, (0, 1, 2), 2)
def _oscillatory(x):
    return (1 + x[:, 0] + 0.5 * x[:, 1] ** 2 + 0.3 * x[:, 0] * x[:, 2]
            + np.sin(x[:, 0]) * np.sin(x[:, 1]) * np.sin(x[:, 2])
            + np.cos(np.pi * x[:, 3] * x[:, 4]) + 0.2 * x[:, 5])


@_m("product_peak_interaction", 4, (0, 1), 1)
def _product_peak(x):
    return (0.5 + x[:, 0] - 0.3 * x[:, 1] + 0.6 * x[:, 0] * x[:, 1] + 0.2 * x[:, 2] ** 2
            + 1.0 / (1.0 + 0.25 * (x[:, 2] * x[:, 3]) ** 2))


@_m("corner_mixed", 4, (0, 1), 1)
def _corner(x):
    return x[:, 0] ** 2 + x[:, 1] + 0.4 * x[:, 0] * x[:, 1] + x[:, 1] * (np.exp(x[:, 2] * x[:, 3]) - 1)


@_m("anisotropic_poly", 6, (2, 4), 1)
def _aniso(x):
    return (3 - x[:, 2] + 2 * x[:, 4] ** 2 + x[:, 2] * x[:, 4] + 0.5 * x[:, 0] ** 2
            - 0.25 * x[:, 1] + 0.1 * x[:, 3] + 0.05 * x[:, 5] ** 2
            + 0.3 * x[:, 0] * x[:, 1] * x[:, 3])


@_m("exp_interaction", 6, (0, 1), 1)
def _exp_inter(x):
    return (1 + 0.5 * x[:, 0] + 0.5 * x[:, 1] + 0.25 * x[:, 0] * x[:, 1]
            + np.exp(0.5 * x[:, 2] * x[:, 3]) + x[:, 4] * x[:, 5] ** 3)


@_m("sine_coupled", 4, (0, 1, 2), 2)
def _sine_coupled(x):
    return (x[:, 0] - x[:, 1] + x[:, 2] ** 2 + 1.5 * x[:, 0] * x[:, 1] * x[:, 2] + x[:, 3]
            + np.sin(x[:, 0] * x[:, 3]))


@_m("sum_of_squares", 6, (1, 3), 1)
def _squares(x):
    return (x[:, 1] ** 2 + x[:, 3] ** 2 + x[:, 1] * x[:, 3]
            + 0.5 * (x[:, 0] ** 2 + x[:, 2] ** 2 + x[:, 4] ** 2 + x[:, 5] ** 2))


@_m("gaussian_interaction", 6, (0, 1, 2), 1)
def _gaussian(x):
    return (1 + x[:, 0] + x[:, 1] + x[:, 2] + 0.5 * x[:, 0] * x[:, 1] - 0.5 * x[:, 1] * x[:, 2]
            + x[:, 3] * x[:, 4] * np.exp(-x[:, 5] ** 2))


@_m("constant_plus_triple", 4, (0, 1, 2), 2)
def _const_triple(x):
    return 1 + x[:, 0] * x[:, 1] * x[:, 2] + x[:, 3] ** 2


CORPUS = [_constant, _lin_bilin, _quad_mix, _oscillatory, _product_peak, _corner, _aniso,
          _exp_inter, _sine_coupled, _squares, _gaussian, _const_triple]


def tensor_gauss_legendre(dim: int, npts: int):
    """Nodes (P, dim) and probability weights of the tensor Gauss-Legendre rule."""
    x, w = leggauss(npts)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    wg = np.meshgrid(*([w / 2] * dim), indexing="ij")
    weights = np.prod(np.column_stack([g.ravel() for g in wg]), axis=1)
    return nodes, weights


def oracle_moments(values, weights):
    mean = weights @ values
    return mean, weights @ (values - mean) ** 2
