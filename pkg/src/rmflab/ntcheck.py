"""Counting estimates for integers with k prime factors, checked against exact tables.

Every validator scans an exact :class:`FactorTable` and reports the smallest
(or largest) constant for which the stated inequality holds on the scanned
range.  The constants in the classical statements are not effective, so the
shipped defaults are the values observed on the reference range.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .errors import InvalidArgument, OutOfDomain
from .sieve import CountQuery, FactorTable, count, primes_up_to

EULER_GAMMA = 0.5772156649015329
# sum over primes of p^-2 (the prime zeta function at 2)
PRIME_ZETA_2 = 0.45224742004106549850

# Constants observed on the reference range x <= 10^6 (see `calibrate`),
# rounded outward.  A future scan that needs a worse constant fails.
REFERENCE_X = 10**6
SHIPPED = {
    "hardy_ramanujan_A": 1.7,
    "hardy_ramanujan_B": 1.0,
    "sathe_selberg_delta": 1.0,
    "chebychev_lower_const": 1.7,
    "chebychev_upper_const": 0.0,
    "mertens_threshold_q": 3,
    "smooth_count_const": 34.0,
}


# ---------------------------------------------------------------------------
# scale parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticParams:
    x: float
    k: int
    L: float
    kbar: float


def L_value(x: float, k: int) -> float:
    """``log log x - log k - log log(k + 1)``."""
    if x <= math.e or k < 1:
        raise OutOfDomain(f"L(k, x) needs x > e and k >= 1 (x={x}, k={k})")
    return math.log(math.log(x)) - math.log(k) - math.log(math.log(k + 1))


def params(x: float, k: int) -> AsymptoticParams:
    L = L_value(x, k)
    if L <= 0:
        raise OutOfDomain(f"L(k={k}, x={x}) = {L:.6g} <= 0")
    return AsymptoticParams(x, k, L, k / L)


def k_for_unit_kbar(x: float, k_max: int = 64) -> int:
    """The k >= 1 whose ``kbar`` is closest to 1 (scan over admissible k)."""
    best, gap = None, math.inf
    for k in range(1, k_max + 1):
        try:
            kb = params(x, k).kbar
        except OutOfDomain:
            break
        if abs(kb - 1.0) < gap:
            best, gap = k, abs(kb - 1.0)
    if best is None:
        raise OutOfDomain(f"no k with L > 0 at x={x}")
    return best


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    """Outcome of scanning one inequality over a range."""

    name: str
    scan: dict
    observed_constant: float
    configured_constant: float
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def _counts_by_x(mask: np.ndarray) -> np.ndarray:
    """``out[x] = #{1 <= n <= x : mask[n]}``."""
    out = np.cumsum(mask, dtype=np.int64)
    return out


def _loglog(xs: np.ndarray) -> np.ndarray:
    return np.log(np.log(xs))


def _check_limit(x: int, t: FactorTable) -> None:
    if x > t.limit:
        raise InvalidArgument(f"scan to {x} needs a table to at least {x} (have {t.limit})")


def hardy_ramanujan_check(
    x_max: int,
    t: FactorTable,
    *,
    x_min: int = 100,
    k_range: Iterable[int] | None = None,
    B: float = SHIPPED["hardy_ramanujan_B"],
    A: float = SHIPPED["hardy_ramanujan_A"],
) -> BoundCheck:
    """Smallest A with ``#{n<=x : omega(n)=k} <= A x (loglog x + B)^(k-1) / ((k-1)! log x)``."""
    _check_limit(x_max, t)
    xs = np.arange(x_min, x_max + 1, dtype=np.float64)
    ll, lx = _loglog(xs) + B, np.log(xs)
    if np.any(ll <= 0):
        raise OutOfDomain("log log x + B must be positive on the scan")
    omega = t.omega[: x_max + 1]
    ks = list(k_range) if k_range is not None else list(range(1, int(omega.max()) + 1))
    worst, where = 0.0, None
    per_k = {}
    for k in ks:
        cnt = _counts_by_x(omega == k)[x_min:]
        ratio = cnt * math.factorial(k - 1) * lx / (xs * ll ** (k - 1))
        i = int(np.argmax(ratio))
        per_k[k] = float(ratio[i])
        if ratio[i] > worst:
            worst, where = float(ratio[i]), {"x": int(xs[i]), "k": k}
    return BoundCheck(
        "hardy_ramanujan",
        {"x_min": x_min, "x_max": x_max, "k": ks, "B": B},
        worst,
        A,
        worst <= A,
        {"argmax": where, "per_k": {str(k): v for k, v in per_k.items()}},
    )


def sathe_selberg_check(
    x_max: int,
    t: FactorTable,
    *,
    x_min: int = 16,
    delta: float = SHIPPED["sathe_selberg_delta"],
) -> BoundCheck:
    """Largest delta with ``#S_{k,x} >= delta x (loglog x)^(k-1) / ((k-1)! log x)`` for ``1 <= k <= loglog x``."""
    _check_limit(x_max, t)
    x_min = max(x_min, 16)
    xs = np.arange(x_min, x_max + 1, dtype=np.float64)
    ll, lx = _loglog(xs), np.log(xs)
    sq = t.squarefree[: x_max + 1]
    omega = t.omega[: x_max + 1]
    best, where = math.inf, None
    for k in range(1, int(math.floor(ll.max())) + 1):
        ok = ll >= k
        if not ok.any():
            continue
        cnt = _counts_by_x(sq & (omega == k))[x_min:]
        ratio = cnt * math.factorial(k - 1) * lx / (xs * ll ** (k - 1))
        ratio = np.where(ok, ratio, np.inf)
        i = int(np.argmin(ratio))
        if ratio[i] < best:
            best, where = float(ratio[i]), {"x": int(xs[i]), "k": k}
    return BoundCheck(
        "sathe_selberg",
        {"x_min": x_min, "x_max": x_max},
        best,
        delta,
        best >= delta,
        {"argmin": where},
    )


def _sqfree_count(x: int, k: int, t: FactorTable, excluded: Iterable[int] = ()) -> int:
    return count(CountQuery(int(x), k, "squarefree", excluded_primes=frozenset(excluded)), t)


def local_ratio_check(x: int, k: int, t: FactorTable, *, lam: float | None = None) -> dict:
    """Observed ratios of squarefree counts next to their predicted main terms.

    Without ``lam``: ``#S_{k+1,x} / #S_{k,x}`` against ``L/k``.  With ``lam``:
    ``#S_{k, lam x} / #S_{k,x}`` against ``lam (1 + log lam / log x)^(k/L - 1)``.
    """
    p = params(x, k)
    base = _sqfree_count(x, k, t)
    if base == 0:
        raise OutOfDomain(f"#S_(k={k}, x={x}) = 0")
    if lam is None:
        observed = _sqfree_count(x, k + 1, t) / base
        predicted = p.L / k
        form = "k_step"
    else:
        if not 1 <= lam <= x:
            raise InvalidArgument("need 1 <= lambda <= x")
        top = int(math.floor(lam * x))
        _check_limit(top, t)
        observed = _sqfree_count(top, k, t) / base
        predicted = lam * (1.0 + math.log(lam) / math.log(x)) ** (p.kbar - 1.0)
        form = "lambda_scaling"
    return {
        "form": form,
        "x": x,
        "k": k,
        "lambda": lam,
        "L": p.L,
        "observed": observed,
        "predicted": predicted,
        "relative_deviation": observed / predicted - 1.0,
        "heuristic_scale": math.log(p.L) / p.L if p.L > 1 else None,
    }


# ---------------------------------------------------------------------------
# G(z)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GValue:
    z: float
    cutoff: int
    value: float
    half_width: float


_PRIME_CACHE: dict[int, np.ndarray] = {}


def _primes(cutoff: int) -> np.ndarray:
    if cutoff not in _PRIME_CACHE:
        _PRIME_CACHE[cutoff] = primes_up_to(cutoff).astype(np.float64)
    return _PRIME_CACHE[cutoff]


def _tail_inverse_squares(ps: np.ndarray) -> float:
    return PRIME_ZETA_2 - math.fsum((1.0 / ps**2).tolist())


def log_G(z: float, cutoff: int = 10**6) -> tuple[float, float]:
    """``log G(z)`` and a half-width for the truncated Euler product.

    Primes above the cutoff contribute ``-(z^2 + z)/2 * sum_{p > cutoff} p^-2``
    to leading order; that sum is the prime zeta value at 2 minus the partial
    sum.  The half-width bounds the neglected ``O(z^3 / p^3)`` remainder.
    ``log Gamma`` is ``math.lgamma`` (a Lanczos approximation, relative error
    near machine precision).
    """
    if z < 0:
        raise InvalidArgument("G(z) is evaluated for z >= 0")
    if cutoff < 1000:
        raise InvalidArgument("cutoff must be at least 1000")
    ps = _primes(cutoff)
    terms = np.log1p(z / ps) + z * np.log1p(-1.0 / ps)
    tail2 = _tail_inverse_squares(ps)
    head = math.fsum(terms.tolist())
    tail = -(z * z + z) / 2.0 * tail2
    # remainder per prime is at most (z^3 + z)/(3 p^3) for p > z; sum_{p>P} p^-3 < 1/(2 P^2)
    half = (z**3 + z) / 3.0 / (2.0 * cutoff**2) + 1e-15 * abs(head)
    return head + tail - math.lgamma(z + 1.0), half


def G_function(z: float, cutoff: int = 10**6) -> GValue:
    """``G(z) = Gamma(z+1)^-1 prod_p (1 + z/p)(1 - 1/p)^z`` with an error half-width."""
    lg, half = log_G(z, cutoff)
    v = math.exp(lg)
    return GValue(z, cutoff, v, v * (math.expm1(half)))


def log_derivative_zG(z: float, cutoff: int = 10**6, h: float = 1e-4) -> float:
    """``d/dz log(z G(z))`` by central finite difference."""
    if z - h <= 0:
        raise InvalidArgument("z must exceed the step")
    f = lambda w: math.log(w) + log_G(w, cutoff)[0]  # noqa: E731
    return (f(z + h) - f(z - h)) / (2.0 * h)


def log_derivative_series(z: float, cutoff: int = 10**6) -> float:
    """``-psi(z) + sum_p (1/(p+z) + log(1 - 1/p))`` with the same tail correction."""
    ps = _primes(cutoff)
    s = math.fsum((1.0 / (ps + z) + np.log1p(-1.0 / ps)).tolist())
    s += -(z + 0.5) * _tail_inverse_squares(ps)
    return -float(special.digamma(z)) + s


def log_derivative_check(
    zs: Sequence[float] = tuple(range(10, 101, 5)), cutoff: int = 10**6, C: float = 3.0
) -> BoundCheck:
    """Residual of ``d/dz log(zG) + log(z log z) + gamma`` in units of ``1/log z``."""
    rows = []
    worst = 0.0
    for z in zs:
        fd = log_derivative_zG(z, cutoff)
        series = log_derivative_series(z, cutoff)
        model = -math.log(z * math.log(z)) - EULER_GAMMA
        scaled = abs(fd - model) * math.log(z)
        worst = max(worst, scaled)
        rows.append({"z": z, "finite_difference": fd, "series": series, "model": model, "scaled_residual": scaled})
    return BoundCheck("log_derivative_G", {"z": list(zs), "cutoff": cutoff}, worst, C, worst <= C, {"rows": rows})


def euler_factor(kbar: float, excluded: Iterable[int]) -> float:
    """``prod_{p in excluded} (1 + kbar/p)^-1``."""
    return math.prod(1.0 / (1.0 + kbar / p) for p in excluded)


def excluded_prime_density_check(x: int, k: int, excluded: Iterable[int], t: FactorTable, *, R: int = 8) -> dict:
    """Exact count coprime to ``excluded`` against the main term with ``h = 0``."""
    excluded = sorted(set(int(p) for p in excluded))
    if len(excluded) > R:
        raise InvalidArgument(f"at most {R} excluded primes")
    p = params(x, k)
    observed = _sqfree_count(x, k, t, excluded)
    euler = euler_factor(p.kbar, excluded)
    lx = math.log(x)
    main = math.exp(log_G(p.kbar)[0]) * euler * x * math.log(lx) ** (k - 1) / (math.factorial(k - 1) * lx)
    return {
        "x": x,
        "k": k,
        "excluded": excluded,
        "kbar": p.kbar,
        "euler_factor": euler,
        "observed": observed,
        "main_term": main,
        "ratio": observed / main,
    }


# ---------------------------------------------------------------------------
# Chebychev, Mertens and smooth numbers
# ---------------------------------------------------------------------------


def chebychev_psi(y_max: int, t: FactorTable) -> np.ndarray:
    """``psi(y) = sum_{p^m <= y} log p`` for ``0 <= y <= y_max``."""
    _check_limit(y_max, t)
    n = np.arange(y_max + 1)
    spf = t.spf[: y_max + 1]
    lam = np.zeros(y_max + 1)
    pp = (n >= 2) & (t.largest_prime[: y_max + 1] == spf)
    lam[pp] = np.log(spf[pp].astype(np.float64))
    return np.cumsum(lam)


def chebychev_mertens_check(
    y_max: int,
    t: FactorTable,
    *,
    q_max: int = 10**4,
    R_values: Sequence[int] = (1, 2, 4),
    lower_const: float = SHIPPED["chebychev_lower_const"],
    upper_const: float = SHIPPED["chebychev_upper_const"],
) -> BoundCheck:
    """Calibrate ``0.9212 y - a log y <= psi(y) <= 1.1056 y + b log^2 y`` and the product bound.

    The product bound ``prod_{p<=q} (1 + R/p)^-1 >= (2 log q)^-R`` fails for
    small q; the report gives the smallest q0 beyond which it holds on the
    scan, for each R.
    """
    psi = chebychev_psi(y_max, t)
    ys = np.arange(2, y_max + 1, dtype=np.float64)
    ly = np.log(ys)
    a = float(np.max((0.9212 * ys - psi[2:]) / ly))
    b = float(np.max((psi[2:] - 1.1056 * ys) / ly**2))
    a, b = max(a, 0.0), max(b, 0.0)
    mertens = {}
    for R in R_values:
        ps = primes_up_to(q_max).astype(np.float64)
        lhs = -np.cumsum(np.log1p(R / ps))
        rhs = -R * np.log(2.0 * np.log(ps))
        fails = ps[lhs < rhs]
        mertens[str(R)] = {
            "q_max": q_max,
            "failures": int(fails.size),
            "threshold_q": int(fails.max()) + 1 if fails.size else 2,
            "at_q29": {"product": float(np.exp(lhs[ps == 29][0])), "bound": float((2 * math.log(29)) ** -R)}
            if q_max >= 29
            else None,
        }
    threshold = SHIPPED["mertens_threshold_q"]
    passed = a <= lower_const and b <= upper_const and all(m["threshold_q"] <= threshold for m in mertens.values())
    return BoundCheck(
        "chebychev_mertens",
        {"y_max": y_max, "q_max": q_max, "R": list(R_values)},
        max(a, b),
        max(lower_const, upper_const),
        passed,
        {"lower_log_const": a, "upper_log2_const": b, "mertens": mertens},
    )


def smooth_counts(y_values: Iterable[int], t: FactorTable) -> list[tuple[int, int]]:
    """``#{r <= y : P(r) <= log^2 y}`` for each y (P(1) = 1 counts)."""
    out = []
    lp = t.largest_prime
    for y in y_values:
        y = int(y)
        _check_limit(y, t)
        bound = math.log(y) ** 2 if y > 1 else 0.0
        out.append((y, int(np.count_nonzero(lp[1 : y + 1] <= bound))))
    return out


def smooth_count_check(
    y_max: int, t: FactorTable, *, eps: float = 0.1, const: float = SHIPPED["smooth_count_const"], y_min: int = 2
) -> BoundCheck:
    """Largest ``#{r <= y : P(r) <= log^2 y} / y^(1/2 + eps)`` over ``y_min <= y <= y_max``.

    The smoothness bound ``log^2 y`` moves with y, so counts are recomputed
    only where it crosses a prime.
    """
    _check_limit(y_max, t)
    lp = t.largest_prime[1 : y_max + 1]
    ys = np.arange(y_min, y_max + 1)
    bounds = np.log(ys.astype(np.float64)) ** 2
    primes = primes_up_to(max(2, int(bounds.max()) + 1))
    # index of the largest admissible prime for each y
    level = np.searchsorted(primes, bounds, side="right")
    ratio = np.empty(ys.size)
    counts = np.empty(ys.size, dtype=np.int64)
    for lev in np.unique(level):
        sel = level == lev
        cap = primes[lev - 1] if lev > 0 else 1
        cum = np.cumsum(lp <= cap)
        counts[sel] = cum[ys[sel] - 1]
    ratio = counts / ys.astype(np.float64) ** (0.5 + eps)
    i = int(np.argmax(ratio))
    return BoundCheck(
        "smooth_count",
        {"y_min": y_min, "y_max": y_max, "eps": eps},
        float(ratio[i]),
        const,
        bool(ratio[i] <= const),
        {"argmax_y": int(ys[i]), "count_at_argmax": int(counts[i]), "count_at_y_max": int(counts[-1])},
    )


def calibrate(t: FactorTable, x_max: int | None = None) -> dict:
    """Observed constants on ``x <= x_max`` (the shipped defaults come from this)."""
    x_max = t.limit if x_max is None else x_max
    cm = chebychev_mertens_check(x_max, t)
    return {
        "x_max": x_max,
        "hardy_ramanujan_A": hardy_ramanujan_check(x_max, t).observed_constant,
        "sathe_selberg_delta": sathe_selberg_check(x_max, t).observed_constant,
        "chebychev_lower_const": cm.details["lower_log_const"],
        "chebychev_upper_const": cm.details["upper_log2_const"],
        "mertens": cm.details["mertens"],
        "smooth_count_const": smooth_count_check(x_max, t).observed_constant,
    }


def run_all(t: FactorTable, x_max: int | None = None) -> list[BoundCheck]:
    """Every scan-based validator with the shipped constants."""
    x_max = t.limit if x_max is None else x_max
    return [
        hardy_ramanujan_check(x_max, t),
        sathe_selberg_check(x_max, t),
        chebychev_mertens_check(x_max, t, q_max=min(x_max, 10**4)),
        smooth_count_check(x_max, t),
        log_derivative_check(),
    ]
