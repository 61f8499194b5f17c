from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from oracles import expected_unresolved_brute
from poolkit.combinatorics import DesignShape, precision
from poolkit.metrics import (
    BudgetExceeded,
    LibraryModel,
    MetricsResult,
    PrecisionError,
    approx_intermediates,
    alpha_single,
    evaluate,
    positive_count_pmf,
    tail_cutoff,
    unresolved_negatives_asymptotic,
    unresolved_negatives_exact,
    unresolved_negatives_independent_pools,
    unresolved_positives_approx,
    unresolved_positives_exact,
)
from poolkit.screening import simulate_random_ksets

SHAPE_1298 = (LibraryModel(1298, 2.5), DesignShape(47, 4))


def test_library_model_validation():
    with pytest.raises(ValueError):
        LibraryModel(10, 10)
    with pytest.raises(ValueError):
        LibraryModel(10, 0)
    assert LibraryModel(10, 2).prob == Fraction(1, 5)


def test_metrics_result_identities():
    r = MetricsResult(100, 3.0, 2.0, 1.0, "exact")
    assert r.resolved_negatives == 95.0
    assert r.resolved_positives == 2.0
    assert r.confirmatory_load == 5.0


def test_truncation_point_has_small_tail():
    model = LibraryModel(33000, 10)
    p_max = tail_cutoff(model)
    total = mpmath.fsum(w for _, w in positive_count_pmf(model))
    assert 1 - total < 1e-12
    assert p_max < 60


def test_fraction_pmf_is_complete():
    pmf = positive_count_pmf(LibraryModel(6, Fraction(2)), "fraction")
    assert sum(w for _, w in pmf) == 1 and len(pmf) == 7


@pytest.mark.parametrize("n,v,k,c", [(6, 4, 2, 2), (5, 5, 2, 1), (2, 3, 3, 1), (4, 5, 3, 1)])
def test_exact_measures_match_enumeration(n, v, k, c):
    n_bar, p_bar = expected_unresolved_brute(n, v, k, c)
    model, shape = LibraryModel(n, Fraction(c)), DesignShape(v, k)
    assert unresolved_negatives_exact(model, shape, backend="fraction") == n_bar
    assert unresolved_positives_exact(model, shape, backend="fraction") == p_bar
    assert unresolved_positives_exact(model, shape, route="closed_form",
                                      backend="fraction") == p_bar


def test_every_clone_in_every_pool():
    # with v == k every other clone is positive or an unresolved negative
    n, c = 2, Fraction(1)
    _, p_bar = expected_unresolved_brute(n, 3, 3, c)
    assert p_bar == c
    model = LibraryModel(n, c)
    assert unresolved_positives_exact(model, DesignShape(3, 3), backend="fraction") == p_bar


def test_unresolved_negatives_reference_shape():
    n_bar = unresolved_negatives_exact(*SHAPE_1298)
    asym = unresolved_negatives_asymptotic(*SHAPE_1298)
    assert abs(float(asym) - 4.68) < 0.005
    assert abs(float(n_bar) - float(asym)) < 0.05
    assert abs(unresolved_negatives_exact(*SHAPE_1298, backend="float") - float(n_bar)) < 1e-9


def test_unresolved_negatives_vanish_without_positives():
    model = LibraryModel(1298, 1e-6)
    assert float(unresolved_negatives_exact(model, DesignShape(47, 4))) < 1e-3


def test_precision_failure_is_reported():
    # at 16 digits the alternating inclusion-exclusion sum drifts from the recursion
    with pytest.raises(PrecisionError):
        unresolved_negatives_exact(LibraryModel(33000, 10), DesignShape(170, 10), digits=16,
                                   tolerance=1e-40)


def test_asymptotic_values_from_the_optimizer_range():
    model = LibraryModel(33000, 10)
    assert abs(float(unresolved_negatives_asymptotic(model, DesignShape(170, 10))) - 44) < 2
    assert abs(float(unresolved_negatives_asymptotic(model, DesignShape(253, 10))) - 2.8) < 0.2


@pytest.mark.parametrize("n", [1000, 5000, 40000])
@pytest.mark.parametrize("c,v,k", [(1.0, 30, 4), (5.0, 120, 8), (10.0, 250, 10)])
def test_asymptotic_close_to_exact(n, c, v, k):
    model, shape = LibraryModel(n, c), DesignShape(v, k)
    exact = float(unresolved_negatives_exact(model, shape))
    asym = float(unresolved_negatives_asymptotic(model, shape))
    assert abs(asym - exact) <= 0.01 * exact + 1e-9


def test_independent_pools_on_reference_shape():
    exact = float(unresolved_negatives_exact(*SHAPE_1298))
    indep = float(unresolved_negatives_independent_pools(*SHAPE_1298))
    assert indep >= exact
    assert abs(indep - exact) <= 0.10 * exact


def test_independent_pools_exact_for_single_pool():
    model = LibraryModel(50, Fraction(3))
    shape = DesignShape(7, 1)
    assert unresolved_negatives_independent_pools(model, shape, backend="fraction") == \
        unresolved_negatives_exact(model, shape, backend="fraction")


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 400), st.floats(0.05, 8), st.integers(1, 30), st.data())
def test_independent_pools_is_upper_bound(n, c, v, data):
    c = min(c, n - 1)
    k = data.draw(st.integers(1, min(v, 8)))
    model, shape = LibraryModel(n, c), DesignShape(v, k)
    with precision(60):
        bound = unresolved_negatives_independent_pools(model, shape, digits=60)
        exact = unresolved_negatives_exact(model, shape, digits=60)
        assert bound >= exact * (1 - mpmath.mpf(10) ** -40)


def test_unresolved_positives_reference_shape():
    chain = unresolved_positives_exact(*SHAPE_1298)
    closed = unresolved_positives_exact(*SHAPE_1298, route="closed_form", digits=40)
    assert abs(2.5 - float(chain) - 1.36) < 0.01
    assert abs(float(chain - closed)) < 1e-9
    assert abs(unresolved_positives_exact(*SHAPE_1298, backend="float") - float(chain)) < 1e-9


def test_closed_form_budget():
    with pytest.raises(BudgetExceeded):
        unresolved_positives_exact(LibraryModel(33000, 10), DesignShape(170, 10),
                                   route="closed_form", max_summands=1000)


def test_single_positive_term():
    model = LibraryModel(100, Fraction(1, 2))
    shape = DesignShape(5, 2)
    assert alpha_single(model, shape, exact=True) == 1 - Fraction(9, 10) ** 99


def test_approx_intermediates_ranges():
    shape = DesignShape(47, 4)
    for p in range(1, 15):
        omega, mu, zeta = approx_intermediates(p, shape)
        assert omega >= shape.k - 1e-12
        assert 0 <= mu <= 1
        assert all(0 <= z <= 1 for z in zeta) and zeta[0] == 1


def test_approximation_on_known_optimum():
    model = LibraryModel(33000, 10)
    p_bar = unresolved_positives_approx(model, DesignShape(170, 10))
    # the 0.5 c target is missed by less than 0.01 at 170 pools
    assert 10 - p_bar > 4.99
    assert abs(unresolved_positives_approx(model, DesignShape(170, 10), backend="mpmath")
               - p_bar) < 1e-9


def test_approximations_vanish_without_positives():
    model = LibraryModel(1000, 1e-7)
    for variant in ("correlated", "independent_pools"):
        assert unresolved_positives_approx(model, DesignShape(40, 5), variant) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(5, 3000), st.floats(0.1, 10), st.integers(2, 50), st.data())
def test_measures_within_bounds(n, c, v, data):
    c = min(c, n / 2)
    k = data.draw(st.integers(1, min(v, 10)))
    model, shape = LibraryModel(n, c), DesignShape(v, k)
    r = evaluate(model, shape, "float")
    assert -1e-9 <= r.p_bar <= c + 1e-9
    assert -1e-9 <= r.n_bar <= n - c + 1e-9
    a = evaluate(model, shape, "approx")
    assert -1e-9 <= a.p_bar <= c + 1e-9


@pytest.mark.parametrize("n,c,k", [(1000, 2.0, 4), (20000, 8.0, 9)])
def test_more_pools_never_hurt(n, c, k):
    model = LibraryModel(n, c)
    prev_n, prev_p = float("inf"), float("inf")
    for v in range(k + 5, 260, 7):
        shape = DesignShape(v, k)
        n_bar = unresolved_negatives_exact(model, shape, backend="float")
        p_bar = unresolved_positives_exact(model, shape, backend="float")
        assert n_bar <= prev_n + 1e-9 and p_bar <= prev_p + 1e-9
        prev_n, prev_p = n_bar, p_bar


def test_evaluate_methods():
    for method in ("exact", "float", "approx", "independent_pools"):
        r = evaluate(*SHAPE_1298, method=method)
        assert r.method == method
        assert 1.2 < r.resolved_positives < 1.5
    with pytest.raises(ValueError):
        evaluate(*SHAPE_1298, method="eq5")


@pytest.mark.slow
def test_exact_measures_match_ten_million_replicates():
    sim = simulate_random_ksets(*SHAPE_1298, replicates=10_000_000, seed=20)
    p_bar = float(unresolved_positives_exact(*SHAPE_1298))
    n_bar = float(unresolved_negatives_exact(*SHAPE_1298))
    assert abs(sim.metrics().p_bar - p_bar) < 3 * sim.stderrs["resolved_positive"]
    assert abs(sim.unresolved_negatives - n_bar) < 3 * sim.stderrs["unresolved_negative"]
