"""Monte Carlo laboratory for the normalised sums ``M~ = M / sqrt(E M^2)``.

Sample ``j`` is always assignment ``(seed, j)``; samples are generated in
fixed-size batches (the size depends only on the problem, never on the
thread count) and reassembled in order, so every estimate is a pure
function of ``(spec, model, n_samples, seed)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import moments
from .errors import InvalidArgument, UndefinedMoment
from .rmf import EpsilonBatch, IncrementPlan, SumPlan, SumSpec, get_model
from .sieve import FactorTable, squarefree_with_k

_BATCH_CELLS = 2**24


def batch_size(n_primes: int) -> int:
    """Samples per batch, a function of the problem size only."""
    return int(min(4096, max(16, _BATCH_CELLS // max(1, n_primes))))


def _run_batches(n_samples: int, n_primes: int, work: Callable[[int, int], np.ndarray], threads: int) -> np.ndarray:
    size = batch_size(n_primes)
    starts = list(range(0, n_samples, size))
    jobs = [(s, min(size, n_samples - s)) for s in starts]
    if threads <= 1 or len(jobs) == 1:
        parts = [work(s, n) for s, n in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: work(*job), jobs))
    return np.concatenate(parts, axis=0)


def _check_samples(n_samples: int) -> None:
    if n_samples < 2:
        raise InvalidArgument("need at least 2 samples")


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def ks_statistic(samples: np.ndarray) -> float:
    """One-sample Kolmogorov-Smirnov distance ``sup |F_n - Phi|``."""
    z = np.sort(np.asarray(samples, dtype=float))
    n = z.size
    if n == 0:
        raise InvalidArgument("KS statistic of an empty sample")
    cdf = moments.normal_cdf(z)
    i = np.arange(1, n + 1)
    return float(max((i / n - cdf).max(), (cdf - (i - 1) / n).max()))


def ks_critical_value(n: int, level: float = 0.01) -> float:
    """Asymptotic critical value ``c(level) / sqrt(n)``; 1.63 at the 1% level."""
    c = {0.01: 1.63, 0.05: 1.36, 0.1: 1.22}.get(level)
    if c is None:
        c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c / math.sqrt(n)


def mean_with_error(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def kurtosis_with_error(v: np.ndarray) -> tuple[float, float]:
    """``m4 / m2^2`` about the sample mean, with a delta-method standard error."""
    v = np.asarray(v, dtype=float)
    d = v - v.mean()
    m2, m3, m4 = (d**2).mean(), (d**3).mean(), (d**4).mean()
    if m2 == 0:
        raise UndefinedMoment("zero sample variance")
    infl = (d**4 - m4) / m2**2 - 2.0 * m4 * (d**2 - m2) / m2**3 - 4.0 * m3 * d / m2**2
    return float(m4 / m2**2), float(infl.std(ddof=1) / math.sqrt(v.size))


def variance_with_error(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    d = v - v.mean()
    m2 = float((d**2).mean())
    return float(v.var(ddof=1)), float(np.sqrt(max((d**4).mean() - m2 * m2, 0.0) / v.size))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def normalisation(spec: SumSpec, t: FactorTable) -> int:
    """``E M^2`` (model independent)."""
    if spec.largest_prime is not None:
        raise InvalidArgument("largest-prime restricted specs are not simulated")
    e2 = moments.second_moment(spec.x, spec.k, t, spec.selector)
    if e2 == 0:
        raise UndefinedMoment(f"E M^2 = 0 for {spec}; the normalisation is undefined")
    return e2


def sample_sums(
    spec: SumSpec, model, n_samples: int, seed: int, t: FactorTable, *, threads: int = 1, with_eps2: bool = False
):
    """Raw sums ``M`` for samples ``0 .. n_samples-1`` (and eps_2 when asked)."""
    _check_samples(n_samples)
    model = get_model(model)
    plan = SumPlan(spec, t)
    n_primes = max(1, plan.n_primes)

    def work(start, n):
        batch = EpsilonBatch(model, n_primes, seed, start, n)
        vals = plan.evaluate(batch)
        if with_eps2:
            return np.column_stack([vals, batch.values(np.array([0]))[:, 0]])
        return vals

    out = _run_batches(n_samples, n_primes, work, threads)
    if with_eps2:
        return out[:, 0], out[:, 1]
    return out


@dataclass(frozen=True)
class DistributionReport:
    """Monte Carlo summary of ``M~`` for one spec and model."""

    spec: dict
    model: str
    n_samples: int
    seed: int
    second_moment_exact: int
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    ks_statistic: float
    sample_kurtosis: float
    kurtosis_se: float
    truncated_second_moments: list

    def as_dict(self) -> dict:
        return asdict(self)


def _spec_dict(spec: SumSpec) -> dict:
    return {"x": spec.x, "selector": spec.selector, "k": spec.k}


def truncated_rows(z: np.ndarray, a_list: Sequence[float]) -> list[dict]:
    rows = []
    for a in a_list:
        est, se = mean_with_error(np.minimum(z * z, a * a))
        rows.append(
            {"a": float(a), "estimate": est, "std_error": se, "gaussian": moments.gaussian_truncated_second_moment(a)}
        )
    return rows


def simulate_distribution(
    spec: SumSpec,
    model,
    n_samples: int,
    seed: int,
    t: FactorTable,
    *,
    a_list: Sequence[float] = (1.0, 2.0, 3.0),
    threads: int = 1,
    return_samples: bool = False,
):
    """Draw ``M~`` and summarise it; optionally also return the samples."""
    e2 = normalisation(spec, t)
    model = get_model(model)
    z = sample_sums(spec, model, n_samples, seed, t, threads=threads) / math.sqrt(e2)
    mean, mean_se = mean_with_error(z)
    var, var_se = variance_with_error(z)
    kurt, kurt_se = kurtosis_with_error(z)
    report = DistributionReport(
        spec=_spec_dict(spec),
        model=model.name,
        n_samples=n_samples,
        seed=seed,
        second_moment_exact=e2,
        mean=mean,
        mean_se=mean_se,
        variance=var,
        variance_se=var_se,
        ks_statistic=ks_statistic(z),
        sample_kurtosis=kurt,
        kurtosis_se=kurt_se,
        truncated_second_moments=truncated_rows(z, a_list),
    )
    return (report, z) if return_samples else report


def truncated_second_moment_mc(
    spec: SumSpec, model, a_list: Sequence[float], n_samples: int, seed: int, t: FactorTable, *, threads: int = 1
) -> list[dict]:
    """``E min(M~^2, a^2)`` with standard errors next to the Gaussian value."""
    e2 = normalisation(spec, t)
    z = sample_sums(spec, model, n_samples, seed, t, threads=threads) / math.sqrt(e2)
    return truncated_rows(z, a_list)


# ---------------------------------------------------------------------------
# martingale (McLeish) quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McLeishReport:
    x: int
    k: int
    model: str
    n_samples: int
    seed: int
    normalized_variance_sum: str
    lindeberg_estimates: list
    cross_term_estimate: float
    cross_term_se: float
    cross_term_exact: float | None
    square_sum_second_moment: float
    square_sum_second_moment_se: float

    def as_dict(self) -> dict:
        return asdict(self)


def exact_cross_term(x: int, k: int, t: FactorTable) -> float:
    """``sum_{p != q} E X_p^2 X_q^2`` for Rademacher eps, ``X_p = M_p / sqrt(E M^2)``."""
    e2 = moments.second_moment(x, k, t)
    same = sum(v for _, v in moments.cross_terms_by_W(x, k, t, pairing="same_largest_prime"))
    diag = moments.increment_fourth_sum(x, k, t)
    return float(Fraction(same - diag, e2 * e2))


def normalized_variance_sum(x: int, k: int, t: FactorTable) -> Fraction:
    """``sum_p E M_p^2 / E M^2`` computed from counts by largest prime."""
    S = squarefree_with_k(t, x, k)
    if S.size == 0:
        raise UndefinedMoment("empty sum")
    _, per_prime = np.unique(t.largest_prime[S], return_counts=True)
    return Fraction(int(per_prime.sum()), int(S.size))


def mcleish_quantities(
    x: int,
    k: int,
    model,
    thresholds: Sequence[float],
    n_samples: int,
    seed: int,
    t: FactorTable,
    *,
    threads: int = 1,
    exact_cross: bool | None = None,
) -> McLeishReport:
    """Lindeberg sums ``sum_p E X_p^2 1{|X_p| > e}`` and the cross term by Monte Carlo."""
    _check_samples(n_samples)
    model = get_model(model)
    e2 = moments.second_moment(x, k, t)
    if e2 == 0:
        raise UndefinedMoment("empty sum")
    plan = IncrementPlan(x, k, t)
    thresholds = [float(e) for e in thresholds]
    scale = 1.0 / e2

    def work(start, n):
        batch = EpsilonBatch(model, plan.n_primes, seed, start, n)
        X2 = plan.evaluate(batch) ** 2 * scale
        cols = [(X2 * (X2 > e * e)).sum(axis=1) for e in thresholds]
        s2 = X2.sum(axis=1)
        cross = s2 * s2 - (X2 * X2).sum(axis=1)
        return np.column_stack(cols + [cross, s2 * s2])

    data = _run_batches(n_samples, plan.n_primes, work, threads)
    lind = []
    for i, e in enumerate(thresholds):
        est, se = mean_with_error(data[:, i])
        lind.append({"epsilon": e, "estimate": est, "std_error": se})
    cross, cross_se = mean_with_error(data[:, -2])
    sq, sq_se = mean_with_error(data[:, -1])
    if exact_cross is None:
        exact_cross = model.integer_valued
    return McLeishReport(
        x=x,
        k=k,
        model=model.name,
        n_samples=n_samples,
        seed=seed,
        normalized_variance_sum=str(normalized_variance_sum(x, k, t)),
        lindeberg_estimates=lind,
        cross_term_estimate=cross,
        cross_term_se=cross_se,
        cross_term_exact=exact_cross_term(x, k, t) if exact_cross else None,
        square_sum_second_moment=sq,
        square_sum_second_moment_se=sq_se,
    )


# ---------------------------------------------------------------------------
# conditioning on eps_2
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitReport:
    spec: dict
    n_samples: int
    seed: int
    n_plus: int
    n_minus: int
    variance_plus: float
    variance_plus_se: float
    variance_minus: float
    variance_minus_se: float
    difference: float
    difference_se: float
    z_score: float
    second_moment_plus: float
    second_moment_minus: float

    def as_dict(self) -> dict:
        return asdict(self)


def chatterjee_split(
    spec: SumSpec, model, n_samples: int, seed: int, t: FactorTable, *, threads: int = 1
) -> SplitReport:
    """Sample variance of ``M~`` given ``eps_2 = +1`` versus ``eps_2 = -1``."""
    model = get_model(model)
    if not model.integer_valued:
        raise InvalidArgument("the eps_2 split is defined for the Rademacher model")
    e2 = normalisation(spec, t)
    m, eps2 = sample_sums(spec, model, n_samples, seed, t, threads=threads, with_eps2=True)
    z = m / math.sqrt(e2)
    plus, minus = z[eps2 > 0], z[eps2 < 0]
    if plus.size < 2 or minus.size < 2:
        raise UndefinedMoment("one side of the split has fewer than 2 samples")
    vp, sp = variance_with_error(plus)
    vm, sm = variance_with_error(minus)
    diff = vp - vm
    se = math.hypot(sp, sm)
    return SplitReport(
        spec=_spec_dict(spec),
        n_samples=n_samples,
        seed=seed,
        n_plus=int(plus.size),
        n_minus=int(minus.size),
        variance_plus=vp,
        variance_plus_se=sp,
        variance_minus=vm,
        variance_minus_se=sm,
        difference=diff,
        difference_se=se,
        z_score=diff / se if se > 0 else math.inf,
        second_moment_plus=float((plus * plus).mean()),
        second_moment_minus=float((minus * minus).mean()),
    )


def exact_split_second_moments(spec: SumSpec, t: FactorTable) -> tuple[float, float]:
    """``E(M~^2 | eps_2 = +1)`` and ``E(M~^2 | eps_2 = -1)`` exactly."""
    if spec.selector not in ("exact", "at_most"):
        raise InvalidArgument("exact split supports the exact and at_most selectors")
    return (
        moments.conditional_second_moment_finite(spec.x, spec.k, 2, [1.0], t, selector=spec.selector),
        moments.conditional_second_moment_finite(spec.x, spec.k, 2, [-1.0], t, selector=spec.selector),
    )
