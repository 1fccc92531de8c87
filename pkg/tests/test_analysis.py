import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from shelvesim.analysis import (
    NINETY_FIVE_DELTA,
    BudgetRow,
    NotIdentifiableError,
    ScanPoint,
    assemble_budget,
    binomial_two_sample_test,
    fit_A_M1,
    fit_rb_decay,
    from_decibels,
    invert_single_point,
    m1_branching_ratio,
    reference_budget_rows,
    to_decibels,
    wilson_interval,
)
from shelvesim.dynamics import shelving_error_analytic


def wilson_by_root(k, n, z):
    # Solve (p_hat - p)^2 = z^2 p (1 - p) / n for p on each side of p_hat.
    ph = k / n
    g = lambda p: (ph - p) ** 2 - z * z * p * (1 - p) / n  # noqa: E731
    low = 0.0 if k == 0 else optimize.brentq(g, 0.0, ph, xtol=1e-16, rtol=1e-15)
    high = 1.0 if k == n else optimize.brentq(g, max(ph, 1e-300), 1.0, xtol=1e-16, rtol=1e-15)
    return low, high


def test_wilson_zero_successes():
    e = wilson_interval(0, 100)
    assert e.ci_low == 0.0
    assert e.ci_high == pytest.approx(1 / 101, rel=1e-14)


def test_wilson_all_successes():
    e = wilson_interval(100, 100)
    assert e.ci_high == 1.0
    assert e.ci_low == pytest.approx(100 / 101, rel=1e-14)


def test_wilson_known_value():
    # k = 10, n = 1e5, z = 1
    e = wilson_interval(10, 100_000)
    lo, hi = wilson_by_root(10, 100_000, 1.0)
    assert (e.ci_low, e.ci_high) == pytest.approx((lo, hi), abs=1e-15)
    assert e.ci_low == pytest.approx(7.2985e-5, rel=1e-4)


def test_wilson_invalid():
    for args in ((1, 0), (5, 3), (-1, 3)):
        with pytest.raises(ValueError):
            wilson_interval(*args)


@given(st.integers(1, 10**6).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))),
       st.floats(0.1, 4.0))
def test_wilson_contains_estimate(kn, z):
    k, n = kn
    e = wilson_interval(k, n, z)
    assert 0.0 <= e.ci_low <= e.p_hat <= e.ci_high <= 1.0


def test_wilson_coverage_small_rate():
    gen = np.random.default_rng(3)
    p, n = 1e-4, 100_000
    ks = gen.binomial(n, p, size=10_000)
    hits = 0
    for k in ks:
        e = wilson_interval(int(k), n)
        hits += e.ci_low <= p <= e.ci_high
    assert abs(hits / len(ks) - 0.6827) < 0.05


def test_decibels():
    assert to_decibels(1e-4) == pytest.approx(-40.0)
    assert from_decibels(-40.8) == pytest.approx(8.318e-5, rel=1e-3)
    np.testing.assert_allclose(from_decibels(to_decibels(np.array([1e-3, 0.5]))), [1e-3, 0.5])


def test_fisher_exact_branch():
    # C(15,10) / C(20,10)
    assert binomial_two_sample_test(5, 10, 0, 10) == pytest.approx(3003 / 184756, rel=1e-12)
    assert binomial_two_sample_test(0, 10, 0, 10) == pytest.approx(1.0)


def test_z_branch_against_formula():
    k1, n1, k2, n2 = 12, 100_000, 3, 100_000
    pool = (k1 + k2) / (n1 + n2)
    z = (k1 / n1 - k2 / n2) / math.sqrt(pool * (1 - pool) * (1 / n1 + 1 / n2))
    expected = 0.5 * math.erfc(z / math.sqrt(2))
    assert binomial_two_sample_test(k1, n1, k2, n2) == pytest.approx(expected, rel=1e-10)


def test_exact_branch_up_to_1000():
    # Exact conditional tail for 3/1000 vs 0/1000: C(1000, 3) / C(2000, 3)
    expected = math.comb(1000, 3) / math.comb(2000, 3)
    assert binomial_two_sample_test(3, 1000, 0, 1000) == pytest.approx(expected, rel=1e-10)
    assert binomial_two_sample_test(3, 1001, 0, 1001) != pytest.approx(expected, rel=1e-3)


def test_budget_reference_rows():
    b = assemble_budget(reference_budget_rows())
    assert round(b.predicted_avg_inaccuracy * 1e4, 1) == 0.9
    assert round(b.predicted_avg_infidelity * 1e4, 1) == 2.4
    lo, hi = b.infidelity_interval
    assert lo < b.predicted_avg_infidelity < hi
    assert "Predicted average infidelity" in b.table()


def test_budget_symmetric_rows_sum_exactly():
    rows = [BudgetRow("a", 1e-4, "one_only", 1e-5, 1e-5), BudgetRow("b", 2e-5, "both")]
    b = assemble_budget(rows)
    assert b.predicted_avg_inaccuracy == pytest.approx((1e-4 + 2 * 2e-5) / 2, rel=1e-12)
    assert b.predicted_avg_infidelity == b.predicted_avg_inaccuracy


def test_budget_row_validation():
    with pytest.raises(ValueError):
        BudgetRow("x", 1e-4, "sometimes")


def synthetic_scan(a_m1_mhz, constants, seed, times=(0.05, 0.1, 0.2, 0.25, 0.3), n=100_000):
    c = constants.with_A_M1_mHz(a_m1_mhz)
    gen = np.random.default_rng(seed)
    return [ScanPoint(t, int(gen.binomial(n, float(shelving_error_analytic(t, c)))), n)
            for t in times]


def test_fit_recovers_rate(constants):
    pts = synthetic_scan(4.5, constants, 1, n=10_000_000)
    est = fit_A_M1(pts, constants)
    assert est.value == pytest.approx(constants.A_M1, rel=0.05)
    assert est.ci_low < constants.A_M1 < est.ci_high or abs(est.value / constants.A_M1 - 1) < 0.03
    assert est.total_high - est.total_low > est.ci_high - est.ci_low


def test_fit_interval_is_skewed_upward(constants):
    est = fit_A_M1(synthetic_scan(4.5, constants, 2), constants)
    assert est.ci_high - est.value > est.value - est.ci_low


def test_fit_95_wider_than_68(constants):
    pts = synthetic_scan(4.5, constants, 3)
    a, b = fit_A_M1(pts, constants), fit_A_M1(pts, constants, NINETY_FIVE_DELTA)
    assert b.ci_low <= a.ci_low and b.ci_high >= a.ci_high


def test_fit_zero_errors_gives_upper_limit(constants):
    est = fit_A_M1([ScanPoint(0.3, 0, 100_000)], constants)
    assert est.value == 0.0 and est.ci_low == 0.0 and est.upper_limit_only
    assert est.ci_high > 0


def test_fit_not_identifiable(constants):
    with pytest.raises(NotIdentifiableError):
        fit_A_M1([ScanPoint(0.05, 3000, 100_000), ScanPoint(0.1, 300, 100_000)], constants)


def test_single_point_inversion(constants):
    a = invert_single_point(7.5e-5, 10.0, constants)
    assert a / (2 * math.pi) * 1e3 == pytest.approx(4.1, rel=0.05)
    assert m1_branching_ratio(a, constants) == pytest.approx(a * constants.tau_D)


def test_rb_fit_exact_curve():
    m = np.array([2, 50, 200, 800])
    p = 1 - 2 * 7.4e-5
    y = 0.5 * p ** m + 0.5
    fit = fit_rb_decay(m, y)
    assert fit.eps == pytest.approx(7.4e-5, rel=1e-6)


def test_rb_fit_free_offset():
    m = np.array([1, 10, 50, 100, 200])
    y = 0.45 * 0.98 ** m + 0.52
    fit = fit_rb_decay(m, y, offset=None)
    assert fit.p == pytest.approx(0.98, rel=1e-6)
    assert fit.offset == pytest.approx(0.52, rel=1e-6)


def test_rb_fit_flat_is_degenerate():
    fit = fit_rb_decay([2, 50, 200], [1.0, 1.0, 1.0])
    assert fit.degenerate and fit.eps == 0.0
