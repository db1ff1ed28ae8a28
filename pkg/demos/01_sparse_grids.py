"""Smolyak sparse grids on nested Clenshaw-Curtis rules.

Run with ``python demos/01_sparse_grids.py``.
"""
# %% [markdown]
# A level-2 grid in N dimensions has 2N^2 + 2N + 1 nodes, far fewer than
# the 5^N points of the matching tensor rule.

# %%
import numpy as np

from hdmrflow.sparsegrid import build_sparse_grid, count_nodes, interpolate, quadrature

for n in (2, 5, 20, 80):
    print(f"N = {n:2d}: level-2 sparse grid {count_nodes(n, 2):6d} nodes, tensor rule 5^N = {5.0**n:.3g}")

# %% [markdown]
# The rule integrates every monomial of total degree <= 5 exactly with
# respect to the uniform density on [-1, 1]^N.

# %%
grid = build_sparse_grid(3, 2)
x = grid.nodes
print("E[x1^2 x2^2] =", quadrature(grid, x[:, 0] ** 2 * x[:, 1] ** 2), "(exact 1/9)")
print("E[x1^4]      =", quadrature(grid, x[:, 0] ** 4), "(exact 1/5)")
print("negative weights:", int((grid.weights < 0).sum()), "of", grid.size)

# %% [markdown]
# The same nodes carry a polynomial interpolant.

# %%
f = lambda p: np.exp(0.5 * p[..., 0]) * np.cos(p[..., 1]) + p[..., 2]
pts = np.random.default_rng(0).uniform(-1, 1, (1000, 3))
for level in (1, 2, 3, 4):
    g = build_sparse_grid(3, level)
    err = np.abs(interpolate(g, f(g.nodes), pts) - f(pts)).max()
    print(f"level {level}: {g.size:4d} nodes, max interpolation error {err:.2e}")
