import numpy as np
import pytest

from hdmrflow.field import CovarianceSpec, StructuredGrid, build_covariance, compute_kle, realize_field
from hdmrflow.pressure import (GlobalVelocityLibrary, MissingLibraryEntry, NormalizationError,
                               assemble_ms_basis_set, build_ms_basis, build_partition, divergence,
                               quarter_five_spot, solve_coarse, solve_fine_mixed,
                               solve_singlephase_global, transmissibility)
from hdmrflow.sparsegrid import cc_rule

GRID = StructuredGrid(16, 16)


@pytest.fixture(scope="module")
def perm():
    klb = compute_kle(build_covariance(GRID, CovarianceSpec(1.0, 0.2, 0.2)), GRID, 6)
    return realize_field(klb, np.array([0.8, -0.5, 0.3, 0.9, -1.0, 0.2]))


def test_transmissibility_harmonic():
    g = StructuredGrid(2, 1)
    t = transmissibility(g, [1.0, 3.0])
    # one interior x-face, hy/hx = 2, harmonic mean 1.5
    assert t[1] == pytest.approx(2 * 1.5)
    assert t[0] == t[2] == 0.0


def test_zero_source_gives_zero_solution():
    sol = solve_fine_mixed(GRID, np.ones(GRID.n_cells), np.zeros(GRID.n_cells))
    np.testing.assert_array_equal(sol.flux, 0.0)
    np.testing.assert_allclose(sol.pressure, 0.0, atol=1e-14)


def test_five_spot_divergence_and_boundary(perm):
    q = quarter_five_spot(GRID)
    sol = solve_fine_mixed(GRID, perm, q)
    assert np.abs(sol.divergence() - q * GRID.cell_area).max() <= 1e-10
    ux, uy = sol.ux(), sol.uy()
    assert np.all(ux[:, 0] == 0) and np.all(ux[:, -1] == 0)
    assert np.all(uy[0, :] == 0) and np.all(uy[-1, :] == 0)
    assert abs(sol.pressure.sum()) < 1e-10


def test_coefficient_scaling(perm):
    q = quarter_five_spot(GRID)
    a = solve_fine_mixed(GRID, perm, q)
    b = solve_fine_mixed(GRID, 4.0 * perm, q)
    np.testing.assert_allclose(b.flux, a.flux, atol=1e-10)
    np.testing.assert_allclose(4.0 * b.pressure, a.pressure, atol=1e-10)


def test_incompatible_source_rejected():
    q = np.zeros(GRID.n_cells)
    q[0] = 1.0
    with pytest.raises(ValueError):
        solve_fine_mixed(GRID, np.ones(GRID.n_cells), q)
    with pytest.raises(ValueError):
        solve_fine_mixed(GRID, -np.ones(GRID.n_cells), np.zeros(GRID.n_cells))


def test_singlephase_is_unit_mobility(perm):
    q = quarter_five_spot(GRID)
    np.testing.assert_array_equal(solve_singlephase_global(GRID, perm, q).flux,
                                  solve_fine_mixed(GRID, perm, q).flux)


def test_partition_structure():
    part = build_partition(GRID, 4, 4)
    assert part.n_blocks == 16 and part.n_edges == 2 * 4 * 3
    assert np.all(np.bincount(part.block_of_cell) == 16)
    for e in part.edges:
        assert e.k1 != e.k2 and len(e.faces) == 4


def test_local_basis_homogeneous_invariants():
    part = build_partition(GRID, 4, 4)
    bs = assemble_ms_basis_set(part, np.ones(GRID.n_cells), "local")
    for e in part.edges:
        psi = bs.psi[:, e.index]
        assert psi[e.faces].sum() == pytest.approx(1.0, abs=1e-14)
        div = divergence(GRID, psi)
        c1, c2 = part.block_cells(e.k1), part.block_cells(e.k2)
        np.testing.assert_allclose(div[c1], GRID.cell_area / part.block_area[e.k1], atol=1e-10)
        np.testing.assert_allclose(div[c2], -GRID.cell_area / part.block_area[e.k2], atol=1e-10)
        # supported on the two adjacent blocks only
        others = np.setdiff1d(np.arange(GRID.n_cells), np.concatenate([c1, c2]))
        assert np.all(div[others] == 0)


def test_basis_scale_invariance(perm):
    part = build_partition(GRID, 4, 4)
    a = build_ms_basis(part, 5, perm, np.ones(4))
    b = build_ms_basis(part, 5, 7.0 * perm, np.ones(4))
    np.testing.assert_allclose(a.flux, b.flux, atol=1e-10)
    assert a.profile.sum() == pytest.approx(1.0)


def test_zero_net_boundary_flux_rejected(perm):
    part = build_partition(GRID, 4, 4)
    with pytest.raises(NormalizationError):
        build_ms_basis(part, 0, perm, np.array([1.0, -1.0, 1.0, -1.0]))


def test_global_fallback_to_local_on_stagnant_edge():
    part = build_partition(GRID, 4, 4)
    flux = np.zeros(GRID.n_faces)
    bs = assemble_ms_basis_set(part, np.ones(GRID.n_cells), "global", boundary_flux=flux)
    assert bs.fallback_edges == list(range(part.n_edges))


def test_local_equals_global_for_uniform_flow():
    part = build_partition(GRID, 4, 4)
    k = np.ones(GRID.n_cells)
    uniform = np.zeros(GRID.n_faces)
    uniform[: GRID.n_xfaces] = 1.0
    uniform[GRID.n_xfaces:] = 1.0
    loc = assemble_ms_basis_set(part, k, "local")
    glo = assemble_ms_basis_set(part, k, "global", boundary_flux=uniform)
    np.testing.assert_allclose(glo.psi, loc.psi, atol=1e-12)


def test_coarse_conservation_and_zero_source(perm):
    part = build_partition(GRID, 4, 4)
    q = quarter_five_spot(GRID)
    bs = assemble_ms_basis_set(part, perm, "local", source=q)
    coarse, fine = solve_coarse(bs, perm, q)
    blocks = part.block_sums(divergence(GRID, fine.flux))
    np.testing.assert_allclose(blocks, part.block_sums(q * GRID.cell_area), atol=1e-10)
    assert abs(coarse.pressure @ part.block_area) < 1e-10
    c0, f0 = solve_coarse(bs, perm, np.zeros(GRID.n_cells))
    np.testing.assert_allclose(f0.flux, 0.0, atol=1e-14)
    np.testing.assert_allclose(c0.pressure, 0.0, atol=1e-14)


def test_global_basis_reproduces_singlephase(perm):
    part = build_partition(GRID, 4, 4)
    q = quarter_five_spot(GRID)
    usg = solve_singlephase_global(GRID, perm, q).flux
    bs = assemble_ms_basis_set(part, perm, "global", boundary_flux=usg, source=q)
    _, fine = solve_coarse(bs, perm, q)
    assert np.linalg.norm(fine.flux - usg) <= 1e-8 * np.linalg.norm(usg)


def test_homogeneous_degeneracy_flow_aligned():
    # left-to-right line drive: fluxes are one-dimensional and the coarse
    # multiscale solution must equal the fine solve on the coarse grid
    fine = StructuredGrid(12, 6)
    part = build_partition(fine, 4, 2)
    q = np.zeros(fine.n_cells)
    for j in range(fine.ny):
        q[fine.cell_index(0, j)] = 1.0
        q[fine.cell_index(fine.nx - 1, j)] = -1.0
    bs = assemble_ms_basis_set(part, np.ones(fine.n_cells), "local", source=q)
    coarse, _ = solve_coarse(bs, np.ones(fine.n_cells), q)
    cq = part.block_sums(q * fine.cell_area) / part.coarse.cell_area
    ref = solve_fine_mixed(part.coarse, np.ones(part.coarse.n_cells), cq)
    np.testing.assert_allclose(coarse.flux, ref.flux, atol=1e-10)


def test_library_boundary_flux_and_missing_entries():
    n = 5
    anchor = np.zeros(n)
    nodes = [float(x) for x in cc_rule(2).nodes if x != 0.0]
    # u(theta) = anchor + theta_d * e_d embedded in a tiny "flux" vector
    entries = {(d, x): np.eye(n)[d] * x for d in range(2) for x in nodes}
    lib = GlobalVelocityLibrary(anchor, entries)
    np.testing.assert_allclose(lib.boundary_flux(np.array([0.5, -1.0, 0, 0, 0])),
                               [0.5, -1.0, 0, 0, 0], atol=1e-14)
    np.testing.assert_array_equal(lib.boundary_flux(np.zeros(5)), anchor)
    with pytest.raises(MissingLibraryEntry, match="dimension 3"):
        lib.boundary_flux(np.array([0, 0, 0, 1.0, 0]))
