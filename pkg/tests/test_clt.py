import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rmflab import clt
from rmflab import moments as mo
from rmflab.errors import InvalidArgument, UndefinedMoment
from rmflab.rmf import SumSpec
from rmflab.sieve import build_factor_table

from . import oracles


@pytest.fixture(scope="module")
def t():
    return build_factor_table(20000)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-6, 6, allow_nan=False), min_size=1, max_size=200))
def test_ks_matches_scipy(v):
    assert clt.ks_statistic(np.array(v)) == pytest.approx(stats.kstest(v, "norm").statistic, abs=1e-12)


def test_ks_critical_value_against_limit_law():
    for level in (0.01, 0.05, 0.1, 0.2):
        want = stats.kstwobign.ppf(1 - level) / math.sqrt(1000)
        assert clt.ks_critical_value(1000, level) == pytest.approx(want, rel=5e-3)


def test_kurtosis_error_on_normals():
    rng = np.random.default_rng(3)
    k, se = clt.kurtosis_with_error(rng.standard_normal(200000))
    assert abs(k - 3) < 4 * se
    assert se == pytest.approx(math.sqrt(24 / 200000), rel=0.1)


def test_k1_kurtosis(t):
    """M^(1) is a sum of pi(x) independent signs: kurtosis 3 - 2/pi(x)."""
    x = 10**4
    r = clt.simulate_distribution(SumSpec(x, "exact", 1), "rademacher", 20000, 11, t)
    assert abs(r.sample_kurtosis - (3 - 2 / t.pi(x))) < 5 * r.kurtosis_se
    assert abs(r.mean) < 5 * r.mean_se
    assert abs(r.variance - 1) < 5 * r.variance_se


def test_second_moment_mc_matches_exact(t):
    for spec in (SumSpec(2000, "exact", 2), SumSpec(2000, "at_most", 3), SumSpec(500, "all")):
        r = clt.simulate_distribution(spec, "rademacher", 20000, 5, t)
        assert abs(r.variance - 1) < 5 * r.variance_se


def test_samples_do_not_depend_on_threads(t):
    spec = SumSpec(5000, "exact", 2)
    a = clt.sample_sums(spec, "rademacher", 3000, 99, t, threads=1)
    b = clt.sample_sums(spec, "rademacher", 3000, 99, t, threads=3)
    assert np.array_equal(a, b)
    c = clt.sample_sums(spec, "gaussian", 1000, 99, t, threads=2)
    assert np.array_equal(c, clt.sample_sums(spec, "gaussian", 1000, 99, t, threads=1))


def test_samples_agree_with_brute_force(t):
    from rmflab.rmf import sample_assignment

    spec = SumSpec(300, "exact", 2)
    got = clt.sample_sums(spec, "rademacher", 5, 42, t)
    for i in range(5):
        a = sample_assignment("rademacher", 300, 42, index=i, table=t)
        eps = {p: a[p] for p in oracles.primes_upto(300)}
        assert got[i] == oracles.restricted_sum(300, eps, "exact", 2)


def test_truncated_second_moment(t):
    rows = clt.truncated_second_moment_mc(SumSpec(10**4, "exact", 1), "rademacher", [0.0, 1.0, 3.0], 20000, 1, t)
    assert rows[0]["estimate"] == 0.0
    for r in rows[1:]:
        assert abs(r["estimate"] - r["gaussian"]) < 5 * r["std_error"] + 2e-3


def test_mcleish_quantities(t):
    rep = clt.mcleish_quantities(5000, 2, "rademacher", [0.01, 0.05, 0.1], 4000, 3, t)
    assert Fraction(rep.normalized_variance_sum) == 1
    assert abs(rep.cross_term_estimate - rep.cross_term_exact) < 4 * rep.cross_term_se
    est = [r["estimate"] for r in rep.lindeberg_estimates]
    assert est[0] >= est[1] >= est[2] >= 0
    assert rep.square_sum_second_moment == pytest.approx(
        rep.cross_term_estimate + float(Fraction(mo.increment_fourth_sum(5000, 2, t), mo.second_moment(5000, 2, t) ** 2)),
        rel=0.05,
    )


def test_lindeberg_sum_shrinks_with_x(t):
    vals = [
        clt.mcleish_quantities(x, 1, "rademacher", [0.05], 200, 1, t).lindeberg_estimates[0]["estimate"]
        for x in (100, 1000, 20000)
    ]
    # k = 1: X_p^2 = 1/pi(x) exceeds 0.0025 only while pi(x) < 400
    assert vals[0] == pytest.approx(1.0) and vals[1] == pytest.approx(1.0) and vals[2] == 0.0


def test_exact_cross_term_k1(t):
    p = t.pi(1000)
    assert clt.exact_cross_term(1000, 1, t) == pytest.approx((p * p - p) / p**2)


def test_split_k1_is_null(t):
    r = clt.chatterjee_split(SumSpec(10**4, "exact", 1), "rademacher", 20000, 8, t)
    assert abs(r.z_score) < 4
    assert r.n_plus + r.n_minus == 20000


def test_exact_split_average(t):
    for spec in (SumSpec(10**4, "exact", 2), SumSpec(10**4, "at_most", 2)):
        plus, minus = clt.exact_split_second_moments(spec, t)
        assert (plus + minus) / 2 == pytest.approx(1.0, abs=1e-12)


def test_split_rejects_continuous(t):
    with pytest.raises(InvalidArgument):
        clt.chatterjee_split(SumSpec(100, "exact", 1), "gaussian", 100, 0, t)


def test_undefined_normalisation(t):
    with pytest.raises(UndefinedMoment):
        clt.simulate_distribution(SumSpec(20, "exact", 4), "rademacher", 100, 0, t)
    with pytest.raises(InvalidArgument):
        clt.sample_sums(SumSpec(20, "exact", 1), "rademacher", 1, 0, t)
