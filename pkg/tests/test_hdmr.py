import numpy as np
import pytest

from corpus import CORPUS, oracle_moments, tensor_gauss_legendre
from hdmrflow import hdmr
from hdmrflow.sparsegrid import BudgetExceeded, build_sparse_grid


def vec(f):
    """Scalar-point model from a vectorised corpus function."""
    return lambda t: f(np.asarray(t)[None, :])[0]


RNG = np.random.default_rng(20)


def test_first_order_component_square():
    nodes, vals = hdmr.first_order_component(lambda t: t[0] ** 2, 0, 2, 3)
    np.testing.assert_allclose(vals, nodes**2, atol=1e-15)
    assert vals[len(nodes) // 2] == 0.0


def test_first_order_component_of_independent_dim_is_zero():
    _, vals = hdmr.first_order_component(lambda t: t[1], 0, 2, 3)
    np.testing.assert_array_equal(vals, 0.0)
    _, vals = hdmr.first_order_component(lambda t: 4.0, 2, 2, 3)
    np.testing.assert_array_equal(vals, 0.0)


def test_evaluation_error_carries_point():
    def bad(t):
        if t[1] > 0.5:
            raise FloatingPointError("boom")
        return 0.0

    with pytest.raises(hdmr.EvaluationError) as info:
        hdmr.first_order_component(bad, 1, 2, 3)
    assert info.value.point[1] > 0.5


@pytest.mark.parametrize("zeta,n_active", [(0.69, 2), (0.9, 3), (0.999, 4)])
def test_sensitivity_select(zeta, n_active):
    rep = hdmr.sensitivity_select([4, 3, 2, 1], zeta)
    assert rep.n_active == n_active
    assert rep.active == tuple(range(n_active))


def test_sensitivity_ordering_and_ties():
    rep = hdmr.sensitivity_select([1.0, 5.0, 1.0, 5.0], 0.4)
    assert list(rep.order) == [1, 3, 0, 2]
    assert rep.active == (1,)
    assert hdmr.sensitivity_select([1.0, 5.0, 1.0, 5.0], 0.5).active == (1, 3)


def test_sensitivity_rejects_zero_variances():
    with pytest.raises(ValueError):
        hdmr.sensitivity_select([0.0, 0.0], 0.5)
    with pytest.raises(ValueError):
        hdmr.sensitivity_select([1.0], 1.0)


def test_sensitivity_csv(tmp_path):
    rep = hdmr.sensitivity_select([1.0, 3.0], 0.5)
    rep.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "rank,dim,variance,cumulative_fraction,active"
    assert lines[1].startswith("1,1,3.0,0.75,1")  # dims are 0-based like the API


def test_first_order_variances():
    v = hdmr.first_order_variances(lambda t: 2 * t[0] + t[2] ** 2, 3, 2)
    np.testing.assert_allclose(v, [4 / 3, 0.0, 4 / 45], atol=1e-14)


def test_constant_function():
    dec = hdmr.build_hybrid(lambda t: 3.0, 5, [0, 2])
    mean, var = hdmr.hybrid_stats(dec)
    assert mean == pytest.approx(3.0, abs=1e-12) and abs(var) < 1e-12
    pts = RNG.uniform(-1, 1, (10, 5))
    np.testing.assert_allclose(hdmr.evaluate_hybrid(dec, pts), 3.0, atol=1e-12)
    ad = hdmr.build_adaptive(lambda t: 3.0, 5, [0, 2], order=1)
    assert hdmr.adaptive_stats(ad, build_sparse_grid(5, 2))[1] == pytest.approx(0.0, abs=1e-12)
    an = hdmr.cut_to_anova(dec)
    assert an.f0 == pytest.approx(3.0)


def test_anchor_evaluation_is_exact():
    f = lambda t: np.exp(t[0]) * np.cos(t[1]) + t[2] ** 3
    dec = hdmr.build_hybrid(f, 4, [0, 1])
    assert hdmr.evaluate_hybrid(dec, np.zeros(4)) == dec.f0


def test_hybrid_moments_of_bilinear():
    dec = hdmr.build_hybrid(lambda t: t[0] + t[1] * t[2], 4, [1, 2])
    mean, var = hdmr.hybrid_stats(dec)
    assert abs(mean) < 1e-12
    assert var == pytest.approx(1 / 3 + 1 / 9, abs=1e-10)


def test_hybrid_ledger_counts():
    dec = hdmr.build_hybrid(lambda t: 0.0, 10, [0, 1, 2])
    assert dec.ledger == 25 + 7 * 5 + 1
    # the anchor is shared, so distinct runs are fewer than the ledger
    assert dec.unique_runs == 25 + 7 * 4


def test_adaptive_ledger_counts():
    ad = hdmr.build_adaptive(lambda t: 0.0, 8, [0, 1, 2, 3], order=2)
    assert ad.ledger == hdmr.complexity_counts(8, 4, 2, 2).adaptive


def test_adaptive_equals_hybrid_at_full_order():
    f = vec(CORPUS[3].f)
    dec = hdmr.build_hybrid(f, 6, [0, 1, 2])
    ad = hdmr.build_adaptive(f, 6, [0, 1, 2], order=3)
    pts = RNG.uniform(-1, 1, (50, 6))
    np.testing.assert_allclose(hdmr.evaluate_adaptive(ad, pts), hdmr.evaluate_hybrid(dec, pts),
                               atol=1e-10)
    outer = build_sparse_grid(6, 2)
    m1, v1 = hdmr.hybrid_stats(dec)
    m2, v2 = hdmr.adaptive_stats(ad, outer)
    assert abs(m1 - m2) < 1e-10 and abs(v1 - v2) < 1e-10


def test_subset_coefficients():
    # order-1 truncation on 3 active dims: sum of P_i f minus 2 f0
    assert hdmr._subset_coeff(3, 1, 1) == 1
    assert hdmr._subset_coeff(3, 0, 1) == -2
    assert hdmr._subset_coeff(3, 3, 3) == 1
    assert hdmr._subset_coeff(3, 2, 3) == 0


def test_adaptive_stats_against_oracle():
    m = CORPUS[2]  # N = 6, J = 3, q = 2 polynomial
    ad = hdmr.build_adaptive(vec(m.f), m.dim, m.active, order=2)
    mean, var, count = hdmr.adaptive_stats(ad, build_sparse_grid(6, 2), return_count=True)
    x, w = tensor_gauss_legendre(6, 5)
    om, ov = oracle_moments(hdmr.evaluate_adaptive(ad, x), w)
    assert abs(mean - om) <= 1e-8 * abs(om)
    assert abs(var - ov) <= 1e-8 * ov
    assert count <= 85 * (6 - 3 + 3 + 3)


def test_vector_valued_qoi():
    f = lambda t: np.array([t[0] + t[1] * t[2], t[3] ** 2])
    dec = hdmr.build_hybrid(f, 4, [1, 2])
    mean, var = hdmr.hybrid_stats(dec)
    np.testing.assert_allclose(mean, [0.0, 1 / 3], atol=1e-12)
    np.testing.assert_allclose(var, [1 / 3 + 1 / 9, 4 / 45], atol=1e-12)
    assert hdmr.evaluate_hybrid(dec, np.zeros(4)).shape == (2,)


def test_cut_to_anova_properties():
    m = CORPUS[4]
    dec = hdmr.build_hybrid(vec(m.f), m.dim, m.active)
    an = hdmr.cut_to_anova(dec)
    for mu in hdmr.component_means(an).values():
        assert abs(mu) < 1e-12
    m1, v1 = hdmr.hybrid_stats(dec)
    m2, v2 = hdmr.anova_stats(an)
    assert abs(m1 - m2) < 1e-12 and abs(v1 - v2) < 1e-12
    assert an.f0 == pytest.approx(m1, abs=1e-12)
    pts = RNG.uniform(-1, 1, (20, m.dim))
    np.testing.assert_allclose(hdmr.evaluate_anova(an, pts), hdmr.evaluate_hybrid(dec, pts), atol=1e-12)


def test_exact_projections_match_collocation_for_polynomials():
    m = CORPUS[2]
    pts = RNG.uniform(-1, 1, (30, m.dim))
    hp = hdmr.hybrid_projection(m.f, m.dim, m.active)
    dec = hdmr.build_hybrid(vec(m.f), m.dim, m.active)
    # the degree-3 cut term is dropped by level-2 collocation but kept exactly
    triple = 0.8 * pts[:, 0] * pts[:, 1] * pts[:, 2]
    np.testing.assert_allclose(hp(pts) - triple, hdmr.evaluate_hybrid(dec, pts), atol=1e-12)


def test_orthogonality_residual():
    for m in CORPUS:
        x, w = tensor_gauss_legendre(m.dim, 8 if m.dim == 6 else 12)
        f = m.f(x)
        h = hdmr.hybrid_projection(m.f, m.dim, m.active)(x)
        a = hdmr.adaptive_projection(m.f, m.dim, m.active, m.order)(x)
        assert abs(w @ ((f - h) * (h - a))) <= 1e-8 * max(w @ f**2, 1.0), m.name


def test_complexity_counts_table():
    c = hdmr.complexity_counts(80, 31, 2, 2)
    assert (c.full, c.hybrid, c.adaptive) == (12961, 2231, 6446)
    assert c.truncated == 5 * 80 + 13 * 80 * 79 // 2


def test_complexity_ordering_at_half():
    c = hdmr.complexity_counts(80, 40, 2, 2)
    assert (c.hybrid, c.adaptive, c.full, c.truncated) == (3482, 10541, 12961, 41480)
    assert c.hybrid == min(c.hybrid, c.adaptive, c.full, c.truncated)
    assert c.adaptive < c.truncated


def test_adaptive_overtakes_full_grid_above_crossover():
    # 13 C(J, 2) grows like 6.5 J^2, so the order-2 adaptive count passes
    # the 2 N^2 full-grid count once J exceeds about 0.56 N
    assert hdmr.complexity_counts(80, 44, 2, 2).adaptive < 12961
    assert hdmr.complexity_counts(80, 46, 2, 2).adaptive > 12961


def test_budget_guard():
    with pytest.raises(BudgetExceeded):
        hdmr.build_hybrid(lambda t: 0.0, 30, range(20), node_budget=100)


def test_invalid_active_sets():
    with pytest.raises(ValueError):
        hdmr.build_hybrid(lambda t: 0.0, 3, [])
    with pytest.raises(ValueError):
        hdmr.build_adaptive(lambda t: 0.0, 3, [0, 1], order=3)


def test_cached_evaluator_and_threads():
    calls = []

    def f(t):
        calls.append(1)
        return t.sum()

    ev = hdmr.CachedEvaluator(f, 3)
    pts = build_sparse_grid(3, 2).nodes
    a = ev.many(pts, workers=3)
    b = ev.many(pts)
    np.testing.assert_array_equal(a, b)
    assert len(calls) == len(pts) == ev.n_unique


def test_decomposition_roundtrip(tmp_path):
    dec = hdmr.build_hybrid(lambda t: t[0] * t[1] + t[2], 3, [0, 1])
    hdmr.save_decomposition(dec, tmp_path / "d.pkl")
    back = hdmr.load_decomposition(tmp_path / "d.pkl")
    pts = RNG.uniform(-1, 1, (5, 3))
    np.testing.assert_array_equal(hdmr.evaluate_hybrid(back, pts), hdmr.evaluate_hybrid(dec, pts))
