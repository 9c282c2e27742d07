import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from rmflab import moments as mo
from rmflab.errors import InvalidArgument, ResourceBudgetExceeded, UndefinedMoment
from rmflab.sieve import build_factor_table

from . import oracles

TABLE1 = {2: 1.000, 3: 1.333, 5: 1.806, 7: 2.472, 11: 3.249, 13: 4.310, 17: 5.603, 19: 7.305, 23: 9.378, 29: 11.778}


@pytest.fixture(scope="module")
def t():
    return build_factor_table(20000)


# -- second moments ---------------------------------------------------------


def test_second_moment_examples(t):
    assert mo.second_moment(10, 1, t) == 4
    assert mo.second_moment(10**4, 0, t) == 1
    assert mo.second_moment(30, 3, t) == 1
    assert mo.second_moment(100, None, t, "all") == sum(oracles.squarefree(n) for n in range(1, 101))
    assert mo.second_moment(100, 2, t, "at_most") == sum(len(oracles.S(100, j)) for j in range(3))


# -- fourth moments ---------------------------------------------------------


@pytest.mark.parametrize("x", [2, 6, 10, 15, 22, 30])
def test_fourth_moment_exhaustive(t, x):
    for k in range(0, 4):
        e2, e4 = oracles.exhaustive_moments(x, k)
        assert mo.second_moment(x, k, t) == e2
        assert mo.fourth_moment_exact_rademacher(x, k, t) == e4


@settings(max_examples=25, deadline=None)
@given(x=st.integers(2, 400), k=st.integers(1, 4))
def test_fourth_moment_naive_kernel_counts(t, x, k):
    c = oracles.pair_kernel_counts(oracles.S(x, k))
    assert mo.fourth_moment_exact_rademacher(x, k, t) == sum(v * v for v in c.values())


@pytest.mark.parametrize("x", [10, 100, 1000, 20000])
def test_k1_closed_form(t, x):
    p = t.pi(x)
    assert mo.fourth_moment_exact_rademacher(x, 1, t) == 3 * p * p - 2 * p
    assert mo.m4_excess(x, 1, t, exact=True) == Fraction(-2, p)


def test_empty_and_undefined(t):
    assert mo.fourth_moment_exact_rademacher(20, 4, t) == 0
    with pytest.raises(UndefinedMoment):
        mo.m4_excess(20, 4, t)


# -- strata ----------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(x=st.integers(2, 300), k=st.integers(1, 4))
def test_strata_against_naive(t, x, k):
    naive = oracles.kernel_strata(x, k)
    assert all(w % 2 == 0 for w, v in naive.items() if v)
    got = dict(mo.cross_terms_by_W(x, k, t))
    assert got == {W: naive.get(2 * W, 0) for W in range(k + 1)}
    assert sum(got.values()) == mo.fourth_moment_exact_rademacher(x, k, t)


@settings(max_examples=25, deadline=None)
@given(x=st.integers(2, 300), k=st.integers(1, 4))
def test_same_largest_prime_strata_against_naive(t, x, k):
    naive = oracles.kernel_strata(x, k, same_largest_prime=True)
    got = dict(mo.cross_terms_by_W(x, k, t, pairing="same_largest_prime"))
    assert got == {W: naive.get(2 * W, 0) for W in range(k + 1)}
    assert mo.increment_fourth_sum(x, k, t) == oracles.increment_fourth_sum(x, k)


def test_m1_term_dominates_for_fixed_k(t):
    r = mo.fourth_moment_report(20000, 1, t)
    assert r.m1_term / r.fourth_moment > 0.33
    assert r.cross_terms_by_W[0][1] == r.m1_term == r.second_moment**2


@settings(max_examples=20, deadline=None)
@given(x=st.integers(2, 5000), k=st.integers(2, 4))
def test_w1_explicit_equals_same_prime_stratum(t, x, k):
    w1 = dict(mo.cross_terms_by_W(x, k, t, pairing="same_largest_prime"))[1]
    assert mo.w1_term_explicit(x, k, t) == w1


def test_w1_explicit_brute_force(t):
    for x, k in [(100, 2), (500, 3), (1200, 4)]:
        want = 0
        ps = oracles.primes_upto(x)
        for r in ps:
            for s in ps:
                if s >= r:
                    continue
                c = sum(
                    1
                    for n in oracles.S(x // r, k - 1)
                    if n > 1 and max(oracles.factorize(n)) > r and n % r and n % s
                )
                want += 4 * c * c
        assert mo.w1_term_explicit(x, k, t) == want


def test_w1_contribution_of_three_and_two(t):
    # t prime, 3 < t <= 100/3: 5,7,...,31
    assert mo.w1_contributions(100, 2, t)[(3, 2)] == 9
    assert 4 * 9**2 == 324


def test_w1_empty_when_too_few_primes_fit(t):
    assert mo.w1_term_explicit(20, 5, t) == 0


def test_full_stratum_differs_from_explicit_w1(t):
    """The explicit term sees only pairs with a common largest prime."""
    full = dict(mo.cross_terms_by_W(10, 2, t))
    assert full[1] == 4 and mo.w1_term_explicit(10, 2, t) == 0


def test_w1_profiles_match_direct_values(t):
    explicit, stratum = mo.w1_profiles(3000, 3, t)
    assert np.array_equal(explicit, stratum)
    for x in (100, 777, 1500, 3000):
        assert explicit[x] == mo.w1_term_explicit(x, 3, t)


def test_martingale_lower_bound(t):
    for x, k in [(1000, 2), (5000, 3), (20000, 2)]:
        r = mo.fourth_moment_report(x, k, t)
        assert r.extra["martingale_lower_bound_holds"]


def test_pair_budget_and_bucketed_grouping(t, monkeypatch):
    with pytest.raises(ResourceBudgetExceeded):
        mo.fourth_moment_exact_rademacher(5000, 2, t, max_pairs=1000)
    direct = mo.cross_terms_by_W(5000, 3, t)
    monkeypatch.setattr(mo, "PASS_PAIRS", 5000)
    assert mo.cross_terms_by_W(5000, 3, t) == direct


@pytest.mark.slow
def test_k2_regression_baseline():
    t = build_factor_table(10**5)
    s2 = mo.second_moment(10**5, 2, t)
    m4 = mo.fourth_moment_exact_rademacher(10**5, 2, t)
    assert s2 == len(oracles.S(10**5, 2)) == 23313
    assert m4 == 2621763801
    assert mo.m4_excess(10**5, 2, t) > 0


# -- conditional second moments --------------------------------------------------


def _conditional_oracle(x, k, q, cond):
    """E(M~^2 | eps_p = cond[p], p <= q) by enumerating every other prime."""
    ps = oracles.primes_upto(x)
    rest = [p for p in ps if p > q]
    total = 0
    for eps in oracles.sign_patterns(rest):
        m = oracles.restricted_sum(x, {**eps, **cond}, "exact", k)
        total += m * m
    return Fraction(total, 2 ** len(rest) * len(oracles.S(x, k)))


@pytest.mark.parametrize("q", [2, 3, 5])
def test_conditional_finite_matches_enumeration(t, q):
    qs = oracles.primes_upto(q)
    for k in (1, 2, 3):
        for cond in oracles.sign_patterns(qs):
            got = mo.conditional_second_moment_finite(30, k, q, [cond[p] for p in qs], t)
            assert got == pytest.approx(float(_conditional_oracle(30, k, q, cond)), abs=1e-12)


@pytest.mark.parametrize("q", [2, 3, 5, 7])
@pytest.mark.parametrize("selector", ["exact", "at_most"])
def test_tower_law(t, q, selector):
    pats = mo.all_sign_patterns(len(oracles.primes_upto(q)))
    split = mo.smooth_split(10**4, 2, q, t, selector)
    vals = [mo.conditional_second_moment_finite(10**4, 2, q, p, t, selector=selector, split=split) for p in pats]
    assert min(vals) >= 0
    assert abs(np.mean(vals) - 1) < 1e-12


def test_exact_k_split_on_eps2_is_null(t):
    """M^(k) is homogeneous, so flipping eps_2 alone cannot change E(M^2 | eps_2)."""
    for k in (1, 2, 3):
        assert mo.conditional_second_moment_finite(10**4, k, 2, [1.0], t) == pytest.approx(1.0, abs=1e-12)
        assert mo.conditional_second_moment_finite(10**4, k, 2, [-1.0], t) == pytest.approx(1.0, abs=1e-12)


def test_conditional_rejects_composite_q(t):
    with pytest.raises(InvalidArgument):
        mo.conditional_second_moment_finite(100, 2, 4, [1, 1], t)
    with pytest.raises(InvalidArgument):
        mo.conditional_second_moment_finite(100, 2, 3, [1], t)


def test_asymptotic_small_cases():
    assert mo.conditional_second_moment_asymptotic(2, [1], 1.0) == 1.0
    assert mo.conditional_second_moment_asymptotic(3, [1, 1], 1.0) == pytest.approx(4 / 3, abs=1e-15)


def _asymptotic_oracle(q, eps, kbar):
    ps = oracles.primes_upto(q)
    Ns = sorted(math.prod(c) for r in range(len(ps) + 1) for c in __import__("itertools").combinations(ps, r))
    f = {N: math.prod(eps[p] for p in oracles.factorize(N)) if N > 1 else 1 for N in Ns}
    w = {N: oracles.omega(N) if N > 1 else 0 for N in Ns}
    s = Fraction(0)
    for N in Ns:
        inner = sum(f[M] for M in Ns if M < N and w[M] == w[N])
        s += Fraction(kbar) ** w[N] * f[N] * inner / N
    prod = math.prod(Fraction(p, p + Fraction(kbar)) for p in ps)
    return 1 + 2 * prod * s


@settings(max_examples=20, deadline=None)
@given(q=st.sampled_from([2, 3, 5, 7, 11]), kbar=st.sampled_from([0.5, 1.0, 1.5, 3.0]), data=st.data())
def test_asymptotic_against_rational_oracle(q, kbar, data):
    ps = oracles.primes_upto(q)
    signs = data.draw(st.lists(st.sampled_from([1, -1]), min_size=len(ps), max_size=len(ps)))
    got = mo.conditional_second_moment_asymptotic(q, signs, kbar)
    assert got == pytest.approx(float(_asymptotic_oracle(q, dict(zip(ps, signs)), kbar)), rel=1e-12)


def test_table1_values_and_monotonicity():
    rows = mo.table1()
    assert [q for q, _ in rows] == list(TABLE1)
    for q, v in rows:
        assert abs(v - TABLE1[q]) <= 0.001
    vals = [v for _, v in rows]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_table1_continuous_in_kbar():
    for q in (3, 13, 29):
        a, b, c = (mo.conditional_second_moment_asymptotic(q, [1] * len(oracles.primes_upto(q)), kb) for kb in (0.999, 1.0, 1.001))
        assert abs(a - b) < 0.05 and abs(c - b) < 0.05


def test_conditional_finite_approaches_asymptotic_slowly(t_big):
    """q = 3, all plus, k = floor(log log x): recorded gap to the limit value."""
    gaps = []
    for x in (10**4, 10**5, 10**6):
        k = math.floor(math.log(math.log(x)))
        gaps.append(abs(mo.conditional_second_moment_finite(x, k, 3, [1, 1], t_big) - 4 / 3))
    assert all(g < 0.5 for g in gaps)


# -- Gaussian truncated moment ------------------------------------------------------


def test_gaussian_truncated_examples():
    assert mo.gaussian_truncated_second_moment(0.0) == 0.0
    assert abs(mo.gaussian_truncated_second_moment(8.0) - 1) < 1e-12
    assert round(mo.gaussian_density_term(3.0), 5) == 0.02659
    assert abs(mo.gaussian_density_term(3.0) - 0.02660) < 5e-5
    assert abs(mo.gaussian_tail_term(3.0) - 0.02159) < 5e-5
    assert abs(mo.gaussian_truncation_deficit(3.0) - 0.00501) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 7.0))
def test_gaussian_truncated_against_quadrature(a):
    inner, _ = integrate.quad(lambda z: z * z * stats.norm.pdf(z), 0.0, a, epsabs=1e-13)
    outer, _ = integrate.quad(lambda z: a * a * stats.norm.pdf(z), a, np.inf, epsabs=1e-13)
    want = 2 * (inner + outer)
    assert mo.gaussian_truncated_second_moment(a) == pytest.approx(want, abs=1e-9)


def test_normal_cdf_against_scipy():
    z = np.linspace(-9, 9, 1001)
    assert np.allclose(mo.normal_cdf(z), stats.norm.cdf(z), rtol=1e-13, atol=1e-300)
    assert mo.normal_tail(3.0) == pytest.approx(stats.norm.sf(3.0), rel=1e-13)


def test_truncation_comparison():
    r = mo.truncation_comparison()
    assert r.all_plus_is_max
    assert abs(r.all_plus_value - 11.778) <= 0.001
    assert r.gaussian_deficit < 0.00501 + 1e-5
    assert r.extreme_patterns_bound > 0.0054
    assert r.pattern_average_excess >= r.extreme_patterns_bound
    assert r.holds
