import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rarechain import (
    CeConfig,
    ChangeOfMeasure,
    VisitQuantities,
    kl_distance,
    optimal_measure,
    solve_gamma,
)
from rarechain.mm1 import (
    DESK_GRID,
    FULL_GRID,
    Mm1Params,
    build_mm1,
    mm1_fopt_recursion,
    mm1_gamma_analytic,
    mm1_kl_closed_form,
    mm1_optimal_measure,
    mm1_popt_analytic,
    run_sweep,
    sample_size_rule,
)

BASE = Mm1Params(0.8, 1.0)


def gamma_fraction(lam, mu, n, x):
    sigma = Fraction(mu) / Fraction(lam)
    return (1 - sigma**x) / (1 - sigma**n)


def test_params():
    assert BASE.p == pytest.approx(4 / 9) and BASE.q == pytest.approx(5 / 9)
    assert BASE.sigma == pytest.approx(1.25)
    with pytest.raises(ValueError):
        Mm1Params(1.0, 1.0)
    with pytest.raises(ValueError):
        Mm1Params(0.5, 1.0, n=1)
    with pytest.raises(ValueError):
        Mm1Params(-1, 1.0)


def test_model_structure():
    m = build_mm1(BASE.with_n(4))
    assert m.kinds.tolist() == [1, 0, 0, 0, 2]
    assert m.P[0, 1] == 1.0 and m.P[4, 4] == 1.0
    assert m.P[2, 3] == pytest.approx(4 / 9)


def test_two_levels():
    assert solve_gamma(build_mm1(BASE.with_n(2))).hit_probability == pytest.approx(4 / 9, rel=1e-15)
    assert mm1_gamma_analytic(BASE.with_n(2), 1) == pytest.approx(4 / 9, rel=1e-15)


@pytest.mark.parametrize("n", [2, 5, 10, 50, 100, 200])
def test_gamma_analytic_vs_linear_solve(n):
    params = BASE.with_n(n)
    g = solve_gamma(build_mm1(params))
    for x in range(n + 1):
        assert mm1_gamma_analytic(params, x) == pytest.approx(g[x], rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("n,x", [(10, 1), (10, 7), (50, 3), (250, 1)])
def test_gamma_analytic_vs_rationals(n, x):
    want = float(gamma_fraction(Fraction(4, 5), 1, n, x))
    assert mm1_gamma_analytic(BASE.with_n(n), x) == pytest.approx(want, rel=1e-12)


def test_near_critical_load():
    params = Mm1Params(1.0, 1.001, 100)
    g = solve_gamma(build_mm1(params))
    want = float(gamma_fraction(1, Fraction(1001, 1000), 100, 1))
    assert g.hit_probability == pytest.approx(want, rel=1e-8)
    assert mm1_gamma_analytic(params, 1) == pytest.approx(want, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(0.05, 0.95), n=st.integers(2, 120))
def test_gamma_monotone_in_state(lam, n):
    params = Mm1Params(lam, 1.0, n)
    g = [mm1_gamma_analytic(params, x) for x in range(n + 1)]
    assert g[0] == 0.0 and g[n] == pytest.approx(1.0)
    assert all(a <= b for a, b in zip(g, g[1:]))


class TestOptimalChain:
    def test_analytic_vs_generic(self):
        for n in (5, 10, 50, 100):
            params = BASE.with_n(n)
            generic = optimal_measure(build_mm1(params))
            assert mm1_optimal_measure(params).max_abs_diff(generic) <= 1e-10

    def test_first_state_goes_up(self):
        assert mm1_popt_analytic(BASE.with_n(30), 1) == (1.0, 0.0)

    def test_roles_swap_far_from_empty(self):
        # far from 0 the conditioned walk moves like the reversed queue
        up, down = mm1_popt_analytic(BASE.with_n(100), 80)
        assert up == pytest.approx(BASE.q, abs=1e-6)
        assert down == pytest.approx(BASE.p, abs=1e-6)

    def test_visit_recursion(self):
        for n in (3, 10, 100):
            params = BASE.with_n(n)
            model = build_mm1(params)
            generic = VisitQuantities.of(model, optimal_measure(model)).v
            np.testing.assert_allclose(mm1_fopt_recursion(params), generic, rtol=1e-10)

    def test_visit_values_n10(self):
        v = mm1_fopt_recursion(BASE.with_n(10))[1:10]
        want = [1.745869387679248, 3.020771020100954, 3.8884499788862033, 4.392290211974259,
                4.557483731019523, 4.392290211974259, 3.8884499788862033, 3.020771020100954,
                1.745869387679248]
        np.testing.assert_allclose(v, want, rtol=1e-12)

    def test_kl_closed_form(self):
        params = BASE.with_n(10)
        model = build_mm1(params)
        nom = ChangeOfMeasure.nominal(model)
        assert mm1_kl_closed_form(params, nom) == pytest.approx(3.504142071098853, rel=1e-10)
        P = optimal_measure(model).P.copy()
        P[4, 5], P[4, 3] = 0.5, 0.5
        cand = ChangeOfMeasure(P)
        assert mm1_kl_closed_form(params, cand) == pytest.approx(
            kl_distance(model, optimal_measure(model), cand), rel=1e-10)
        P[4, 5], P[4, 3] = 1.0, 0.0
        assert mm1_kl_closed_form(params, ChangeOfMeasure(P)) == math.inf


def test_sample_size_rule():
    assert sample_size_rule(5) == 2000
    assert sample_size_rule(100) == 20000
    assert DESK_GRID == (10, 25, 50, 100)
    assert FULL_GRID[0] == 10 and FULL_GRID[-1] == 250 and len(FULL_GRID) == 25


class TestSweep:
    def test_small_sweep(self):
        res = run_sweep(0.8, 1.0, n_grid=(5, 10), ce=CeConfig(max_iterations=5),
                        replications=500, seed=0, samples=1000)
        assert [r.n for r in res] == [5, 10]
        for r in res:
            assert r.ok and r.hits > 0
            assert r.exact_pa == pytest.approx(mm1_gamma_analytic(BASE.with_n(r.n), 1), rel=1e-10)
            assert abs(r.mean - r.exact_pa) <= 5 * r.re_of_mean * r.mean
            assert 1.8 <= r.rat <= 2.0 + 1e-9
            assert r.ce_samples == 1000 and 1 <= r.ce_iterations <= 5
        again = run_sweep(0.8, 1.0, n_grid=(5, 10), ce=CeConfig(max_iterations=5),
                          replications=500, seed=0, samples=1000)
        np.testing.assert_array_equal(res.column("mean"), again.column("mean"))

    def test_failed_cell_recorded(self):
        res = run_sweep(0.8, 1.0, n_grid=(5, 120), ce=CeConfig(max_iterations=2, initial_measure="nominal"),
                        replications=100, seed=0, samples=200)
        ok, bad = res.records
        assert ok.ok
        assert not bad.ok and "NoHitsError" in bad.error
        assert math.isnan(bad.mean) and bad.exact_pa > 0

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            run_sweep(0.8, 1.0, n_grid=())
