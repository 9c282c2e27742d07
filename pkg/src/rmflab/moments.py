"""Exact second and fourth moments of restricted sums, and conditional second moments.

For Rademacher ``eps`` and squarefree ``a, b, c, d`` the expectation
``E f(a)f(b)f(c)f(d)`` is 1 when ``abcd`` is a square and 0 otherwise, so

    E M^(k)(x)^4 = #{(a,b,c,d) in S^4 : abcd square} = sum_m c_m^2,

with ``c_m = #{(a,b) in S^2 : s(ab) = m}`` and ``s`` the squarefree kernel.
Splitting quadruples by their multiset gives

    E M^4 = 3|S|^2 - 2|S| + 24 T,

where ``T`` counts 4-element subsets of ``S`` with square product.  Every
member of such a subset shares each of its primes with another member, so
``T`` only depends on the *core* of ``S``: what remains after repeatedly
discarding elements that own a prime occurring in no other element.  Pair
enumeration is restricted to the core; for ``k = 1`` the core is empty.
"""

from __future__ import annotations

import itertools
import math
import os
import tempfile
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument, ResourceBudgetExceeded, UndefinedMoment
from .sieve import CountQuery, FactorTable, count, primes_up_to, squarefree_with_k

DEFAULT_MAX_PAIRS = 250_000_000
PASS_PAIRS = 30_000_000
_BLOCK_PAIRS = 4_000_000
PAIRINGS = ("all", "same_largest_prime")


# ---------------------------------------------------------------------------
# second moments
# ---------------------------------------------------------------------------


def second_moment(x: int, k: int | None, t: FactorTable, selector: str = "exact") -> int:
    """``E M^2`` for any unit-variance model: the number of selected squarefree n."""
    if selector == "exact":
        return count(CountQuery(x, k, "squarefree"), t)
    if selector == "at_most":
        return count(CountQuery(x, k, "at_most"), t)
    if selector == "all":
        return count(CountQuery(x, None, "at_most"), t)
    raise InvalidArgument(f"unknown selector {selector!r}")


# ---------------------------------------------------------------------------
# kernel pair machinery
# ---------------------------------------------------------------------------


def _core(S: np.ndarray, k: int, t: FactorTable) -> np.ndarray:
    """Elements of S surviving iterated removal of those with a private prime."""
    if k == 0 or S.size == 0:
        return S[:0]
    pm = t.prime_matrix(S, k)
    alive = np.ones(S.size, dtype=bool)
    while True:
        live = pm[alive]
        vals, counts = np.unique(live, return_counts=True)
        shared = counts[np.searchsorted(vals, live)] >= 2
        keep = shared.all(axis=1)
        if keep.all():
            break
        idx = np.flatnonzero(alive)
        alive[idx[~keep]] = False
        if not alive.any():
            break
    return S[alive]


def _check_budget(n_pairs: int, max_pairs: int) -> None:
    if n_pairs > max_pairs:
        raise ResourceBudgetExceeded(
            f"kernel grouping needs {n_pairs} pairs, budget is {max_pairs}", required=n_pairs
        )


def _pair_blocks(vals: np.ndarray):
    """Yield index arrays (i, j) with i < j covering all pairs of ``vals``."""
    n = vals.size
    if n < 2:
        return
    rows = max(1, _BLOCK_PAIRS // n)
    for i0 in range(0, n - 1, rows):
        i1 = min(n - 1, i0 + rows)
        ii, jj = np.nonzero(np.arange(i0, i1)[:, None] < np.arange(i0, n)[None, :])
        yield ii + i0, jj + i0


def _kernels(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g = np.gcd(a, b)
    return (a // g) * (b // g), g


_LABEL_BITS = 4


def _grouped(blocks, n_pairs: int):
    """Group pair keys from ``blocks`` (an iterable of ``(kernel, label)`` arrays).

    ``label`` is a stratum index below 16 that is constant on a kernel group.
    Returns Counters ``label -> sum C(g, 2)`` and ``label -> sum g^2`` over
    groups of equal kernel.  Each kernel is computed once.  Large inputs are
    scattered by residue into temporary files and each bucket is sorted on
    its own, so memory stays proportional to the bucket size.
    """
    buckets = max(1, -(-n_pairs // PASS_PAIRS))
    choose2: Counter = Counter()
    squares: Counter = Counter()

    def tally(key: np.ndarray) -> None:
        if key.size == 0:
            return
        key.sort()
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        sizes = np.diff(np.r_[starts, key.size]).astype(np.int64)
        labels = key[starts] & ((1 << _LABEL_BITS) - 1)
        for lab in np.unique(labels).tolist():
            g = sizes[labels == lab]
            choose2[lab] += int((g * (g - 1) // 2).sum())
            squares[lab] += int((g * g).sum())

    keys = ((m << _LABEL_BITS) | lab.astype(np.int64) for m, lab in blocks)
    if buckets == 1:
        parts = list(keys)
        tally(np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64))
        return choose2, squares
    with tempfile.TemporaryDirectory(prefix="rmflab-pairs-") as tmp:
        paths = [os.path.join(tmp, f"{r}.bin") for r in range(buckets)]
        handles = [open(path, "wb") for path in paths]
        try:
            for key in keys:
                which = (key >> _LABEL_BITS) % buckets
                order = np.argsort(which, kind="stable")
                cuts = np.searchsorted(which[order], np.arange(buckets + 1))
                key = key[order]
                for r in range(buckets):
                    if cuts[r + 1] > cuts[r]:
                        handles[r].write(key[cuts[r] : cuts[r + 1]].tobytes())
        finally:
            for h in handles:
                h.close()
        for path in paths:
            tally(np.fromfile(path, dtype=np.int64))
            os.remove(path)
    return choose2, squares


def _divisor_counts(S: np.ndarray, k: int, t: FactorTable) -> dict[int, int]:
    """``A_r = sum_{omega(h)=r} N_h^2`` with ``N_h = #{a in S : h | a}``, h squarefree."""
    if S.size == 0:
        return {r: 0 for r in range(k + 1)}
    pm = t.prime_matrix(S, k)
    A = {}
    for r in range(k + 1):
        subsets = []
        for combo in itertools.combinations(range(k), r):
            h = np.ones(S.size, dtype=np.int64)
            for c in combo:
                h *= pm[:, c]
            subsets.append(h)
        hs = np.concatenate(subsets)
        _, counts = np.unique(hs, return_counts=True)
        A[r] = int((counts.astype(np.int64) ** 2).sum())
    return A


def _unordered_pairs_by_gcd_omega(S: np.ndarray, k: int, t: FactorTable) -> dict[int, int]:
    """Number of unordered pairs a < b in S with omega(gcd(a, b)) = j, for j < k.

    Möbius-type inversion of ``A_r = sum_j C(j, r) E_j`` where ``E_j`` counts
    ordered pairs (a = b allowed) with omega(gcd) = j.
    """
    A = _divisor_counts(S, k, t)
    out = {}
    for j in range(k):
        E = sum((-1) ** (r - j) * math.comb(r, j) * A[r] for r in range(j, k + 1))
        out[j] = E // 2
    return out


# ---------------------------------------------------------------------------
# fourth moments and strata
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    """Exact Rademacher moments of ``M^(k)(x)``."""

    x: int
    k: int
    second_moment: int
    fourth_moment: int
    m4_excess: float
    cross_terms_by_W: list[tuple[int, int]]
    increment_fourth_sum: int
    m1_term: int
    pair_cross_sum: int = 0
    core_size: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["cross_terms_by_W"] = [list(p) for p in self.cross_terms_by_W]
        return d


def _square_four_sets_x3(core: np.ndarray, k: int, max_pairs: int) -> int:
    """``3 T`` = sum over kernels of C(g_m, 2), g_m = unordered core pairs."""
    n_pairs = core.size * (core.size - 1) // 2
    _check_budget(n_pairs, max_pairs)

    def blocks():
        for i, j in _pair_blocks(core):
            m, _ = _kernels(core[i], core[j])
            yield m, np.zeros(m.size, dtype=np.int8)

    c2, _ = _grouped(blocks(), n_pairs)
    return c2.get(0, 0)


def fourth_moment_exact_rademacher(
    x: int, k: int, t: FactorTable, *, max_pairs: int = DEFAULT_MAX_PAIRS
) -> int:
    """``E M^(k)(x)^4`` for Rademacher eps (number of square quadruples)."""
    if k < 0:
        raise InvalidArgument("k must be >= 0")
    S = squarefree_with_k(t, x, k)
    n = int(S.size)
    if n == 0:
        return 0
    core = _core(S, k, t)
    return 3 * n * n - 2 * n + 8 * _square_four_sets_x3(core, k, max_pairs)


def m4_excess(x: int, k: int, t: FactorTable, *, exact: bool = False, max_pairs: int = DEFAULT_MAX_PAIRS):
    """Excess kurtosis ``E M~^4 - 3``; a :class:`Fraction` when ``exact``."""
    s2 = second_moment(x, k, t)
    if s2 == 0:
        raise UndefinedMoment(f"second moment vanishes at x={x}, k={k}")
    val = Fraction(fourth_moment_exact_rademacher(x, k, t, max_pairs=max_pairs), s2 * s2) - 3
    return val if exact else float(val)


def cross_terms_by_W(
    x: int,
    k: int,
    t: FactorTable,
    *,
    pairing: str = "all",
    max_pairs: int = DEFAULT_MAX_PAIRS,
) -> list[tuple[int, int]]:
    """``[(W, sum_{omega(m) = 2W} c_m^2) for W = 0..k]``.

    ``pairing="all"`` counts ordered pairs ``(a, b) in S^2`` with ``s(ab) = m``;
    these strata partition the fourth moment.  ``pairing="same_largest_prime"``
    counts only pairs with ``P(a) = P(b)``; these strata add up to
    ``sum_{p,q} E (M_p)^2 (M_q)^2``.  In both cases ``W = k - omega(gcd(a,b))``.
    """
    if pairing not in PAIRINGS:
        raise InvalidArgument(f"pairing must be one of {PAIRINGS}")
    if k < 1:
        raise InvalidArgument("cross terms need k >= 1")
    S = squarefree_with_k(t, x, k)
    n = int(S.size)
    out = {W: 0 for W in range(k + 1)}
    if n == 0:
        return sorted(out.items())
    out[0] = n * n
    if pairing == "all":
        U = _unordered_pairs_by_gcd_omega(S, k, t)
        core = _core(S, k, t)
        n_pairs = core.size * (core.size - 1) // 2
        _check_budget(n_pairs, max_pairs)

        def blocks():
            for i, j in _pair_blocks(core):
                m, g = _kernels(core[i], core[j])
                yield m, (k - t.omega[g]).astype(np.int16)

        c2, _ = _grouped(blocks(), n_pairs)
        for W in range(1, k + 1):
            # ordered pairs: c_m = 2 g_m, and g^2 = g + 2 C(g, 2)
            out[W] = 4 * U[k - W] + 8 * c2.get(W, 0)
    else:
        _, sq = _same_prime_groups(S, t, max_pairs)
        for W, v in sq.items():
            out[W] += 4 * v
    return sorted(out.items())


def _same_prime_pairs(S: np.ndarray, t: FactorTable):
    """Yield (a, b, P) blocks of pairs a < b in S with P(a) = P(b)."""
    P = t.largest_prime[S].astype(np.int64)
    order = np.argsort(P, kind="stable")
    S, P = S[order], P[order]
    starts = np.flatnonzero(np.r_[True, P[1:] != P[:-1]])
    ends = np.r_[starts[1:], S.size]
    buf_a, buf_b, size = [], [], 0
    for s0, e0 in zip(starts.tolist(), ends.tolist()):
        m = e0 - s0
        if m < 2:
            continue
        i, j = np.triu_indices(m, 1)
        buf_a.append(S[s0 + i])
        buf_b.append(S[s0 + j])
        size += i.size
        if size >= _BLOCK_PAIRS:
            a, b = np.concatenate(buf_a), np.concatenate(buf_b)
            yield a, b, t.largest_prime[a].astype(np.int64)
            buf_a, buf_b, size = [], [], 0
    if buf_a:
        a, b = np.concatenate(buf_a), np.concatenate(buf_b)
        yield a, b, t.largest_prime[a].astype(np.int64)


def _same_prime_pair_count(S: np.ndarray, t: FactorTable) -> int:
    _, counts = np.unique(t.largest_prime[S], return_counts=True)
    c = counts.astype(np.int64)
    return int((c * (c - 1) // 2).sum())


def _same_prime_groups(S: np.ndarray, t: FactorTable, max_pairs: int):
    """Group same-P pairs by kernel; label each group by W."""
    n_pairs = _same_prime_pair_count(S, t)
    _check_budget(n_pairs, max_pairs)
    k = int(t.omega[S[0]])

    def blocks():
        for a, b, P in _same_prime_pairs(S, t):
            m, g = _kernels(a, b)
            yield m, (k - t.omega[g]).astype(np.int16)

    return _grouped(blocks(), n_pairs)


def increment_fourth_sum(x: int, k: int, t: FactorTable, *, max_pairs: int = DEFAULT_MAX_PAIRS) -> int:
    """``sum_p E (M_p^(k)(x))^4`` for Rademacher eps."""
    S = squarefree_with_k(t, x, k)
    if S.size == 0:
        return 0
    _, sizes = np.unique(t.largest_prime[S], return_counts=True)
    diag = int((sizes.astype(np.int64) ** 2).sum())
    _, sq = _same_prime_groups_exact(S, t, max_pairs)
    return diag + 4 * sq


def _same_prime_groups_exact(S: np.ndarray, t: FactorTable, max_pairs: int):
    """Sum of g^2 over groups keyed by (P, kernel), collision free."""
    n_pairs = _same_prime_pair_count(S, t)
    _check_budget(n_pairs, max_pairs)
    total = 0
    groups = 0
    for a, b, P in _same_prime_pairs(S, t):
        m, _ = _kernels(a, b)
        order = np.lexsort((m, P))
        m, P = m[order], P[order]
        new = np.r_[True, (m[1:] != m[:-1]) | (P[1:] != P[:-1])]
        starts = np.flatnonzero(new)
        sizes = np.diff(np.r_[starts, m.size]).astype(np.int64)
        total += int((sizes * sizes).sum())
        groups += starts.size
    # all pairs of one prime land in the same block, so block-local grouping is exact
    return groups, total


def fourth_moment_report(x: int, k: int, t: FactorTable, *, max_pairs: int = DEFAULT_MAX_PAIRS) -> MomentReport:
    """All exact Rademacher quantities for ``M^(k)(x)`` in one report."""
    s2 = second_moment(x, k, t)
    if s2 == 0:
        raise UndefinedMoment(f"no squarefree n <= {x} with {k} prime factors")
    m4 = fourth_moment_exact_rademacher(x, k, t, max_pairs=max_pairs)
    if k >= 1:
        strata = cross_terms_by_W(x, k, t, max_pairs=max_pairs)
        same = cross_terms_by_W(x, k, t, pairing="same_largest_prime", max_pairs=max_pairs)
        inc4 = increment_fourth_sum(x, k, t, max_pairs=max_pairs)
    else:
        strata, same, inc4 = [(0, 1)], [(0, 1)], 1
    pair_cross = sum(v for _, v in same)
    S = squarefree_with_k(t, x, k)
    return MomentReport(
        x=x,
        k=k,
        second_moment=s2,
        fourth_moment=m4,
        m4_excess=float(Fraction(m4, s2 * s2) - 3),
        cross_terms_by_W=strata,
        increment_fourth_sum=inc4,
        m1_term=s2 * s2,
        pair_cross_sum=pair_cross,
        core_size=int(_core(S, k, t).size),
        extra={
            "same_largest_prime_by_W": [list(p) for p in same],
            "martingale_lower_bound": 3 * pair_cross - 2 * inc4,
            "martingale_lower_bound_holds": m4 >= 3 * pair_cross - 2 * inc4,
        },
    )


# ---------------------------------------------------------------------------
# explicit W = 1 term
# ---------------------------------------------------------------------------


def _w1_explicit_triples(x: int, k: int, t: FactorTable):
    """All (t, r, s) with s < r primes, t in S_{k-1}, t*r <= x, P(t) > r, r, s not dividing t."""
    T = squarefree_with_k(t, x // 2, k - 1) if k > 1 else np.array([], dtype=np.int64)
    ts, rs, ss = [], [], []
    primes = primes_up_to(max(2, x // 2))
    P = t.largest_prime[T].astype(np.int64) if T.size else T
    for ri, r in enumerate(primes.tolist()):
        if r * (2 ** (k - 1)) > x:
            break
        sel = (P > r) & (T <= x // r)
        cand = T[sel]
        if cand.size == 0:
            continue
        cand = cand[cand % r != 0]
        for s in primes[:ri].tolist():
            c = cand[cand % s != 0]
            if c.size:
                ts.append(c)
                rs.append(np.full(c.size, r, dtype=np.int64))
                ss.append(np.full(c.size, s, dtype=np.int64))
    if not ts:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    return np.concatenate(ts), np.concatenate(rs), np.concatenate(ss)


def w1_contributions(x: int, k: int, t: FactorTable) -> dict[tuple[int, int], int]:
    """``{(r, s): #{t in S_{k-1, x/r} : P(t) > r, r !| t, s !| t}}`` for nonzero counts."""
    if k < 2:
        raise InvalidArgument("the explicit W=1 term needs k >= 2")
    _, rs, ss = _w1_explicit_triples(x, k, t)
    keys, counts = np.unique(np.column_stack([rs, ss]), axis=0, return_counts=True) if rs.size else ([], [])
    return {(int(r), int(s)): int(c) for (r, s), c in zip(keys, counts)}


def w1_term_explicit(x: int, k: int, t: FactorTable) -> int:
    """``4 sum_r sum_{s<r} #{t in S_{k-1, x/r} : P(t) > r, r !| t, s !| t}^2``."""
    if k < 2:
        raise InvalidArgument("the explicit W=1 term needs k >= 2")
    _, rs, ss = _w1_explicit_triples(x, k, t)
    if rs.size == 0:
        return 0
    _, counts = np.unique(rs * (x + 1) + ss, return_counts=True)
    return 4 * int((counts.astype(np.int64) ** 2).sum())


def _profile(keys: np.ndarray, activation: np.ndarray, x_max: int) -> np.ndarray:
    """``sum_key (#{items of key active at y})^2`` for every y in 0..x_max."""
    inc = np.zeros(x_max + 2, dtype=np.int64)
    if keys.size:
        order = np.lexsort((activation, keys))
        keys, activation = keys[order], activation[order]
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        first = np.repeat(starts, np.diff(np.r_[starts, keys.size]))
        rank = np.arange(keys.size) - first + 1
        np.add.at(inc, activation, 2 * rank - 1)
    return np.cumsum(inc)[: x_max + 1]


def w1_profiles(x_max: int, k: int, t: FactorTable) -> tuple[np.ndarray, np.ndarray]:
    """W=1 values for every x <= x_max, two independent ways.

    Returns ``(explicit, stratum)``: the explicit (t, r, s) formula, and the
    W=1 same-largest-prime kernel stratum from pair enumeration.  Both are
    step functions of x; an item contributes once it becomes admissible.
    """
    if k < 2:
        raise InvalidArgument("needs k >= 2")
    tt, rs, ss = _w1_explicit_triples(x_max, k, t)
    explicit = 4 * _profile(rs * (x_max + 1) + ss, tt * rs, x_max)
    S = squarefree_with_k(t, x_max, k)
    ks, acts = [], []
    for a, b, _ in _same_prime_pairs(S, t):
        m, g = _kernels(a, b)
        w1 = t.omega[g] == k - 1
        ks.append(m[w1])
        acts.append(np.maximum(a, b)[w1])
    keys = np.concatenate(ks) if ks else np.zeros(0, dtype=np.int64)
    act = np.concatenate(acts) if acts else np.zeros(0, dtype=np.int64)
    stratum = 4 * _profile(keys, act, x_max)
    return explicit, stratum


# ---------------------------------------------------------------------------
# conditional second moments
# ---------------------------------------------------------------------------


def _check_q(q: int) -> list[int]:
    q = int(q)
    ps = primes_up_to(max(q, 2)).tolist()
    if q < 2 or ps[-1] != q:
        raise InvalidArgument(f"q={q} is not prime")
    return ps


def _pattern_array(ps: list[int], eps) -> np.ndarray:
    if isinstance(eps, dict):
        missing = set(ps) - set(eps)
        if missing or set(eps) - set(ps):
            raise InvalidArgument(f"conditioning values must be given exactly on primes <= {ps[-1]}")
        return np.array([float(eps[p]) for p in ps])
    arr = np.asarray(eps, dtype=float)
    if arr.shape != (len(ps),):
        raise InvalidArgument(f"need {len(ps)} conditioning values, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class SmoothSplit:
    """``n = N * n'`` for the selected n: N-index masks and n' group ids."""

    q: int
    size: int
    group: np.ndarray
    masks: np.ndarray
    n_groups: int


def smooth_split(x: int, k: int, q: int, t: FactorTable, selector: str = "exact") -> SmoothSplit:
    ps = _check_q(q)
    if selector == "exact":
        S = squarefree_with_k(t, x, k)
    elif selector == "at_most":
        S = np.flatnonzero(
            np.r_[False, t.squarefree[1 : x + 1] & (t.omega[1 : x + 1] <= k)]
        ).astype(np.int64)
    else:
        raise InvalidArgument(f"unsupported selector {selector!r}")
    masks = np.zeros(S.size, dtype=np.int64)
    rough = S.copy()
    for i, p in enumerate(ps):
        hit = rough % p == 0
        masks[hit] |= 1 << i
        rough[hit] //= p
    _, group = np.unique(rough, return_inverse=True)
    return SmoothSplit(q, int(S.size), group.ravel(), masks, int(group.max()) + 1 if S.size else 0)


def conditional_second_moment_finite(
    x: int,
    k: int,
    q: int,
    eps,
    t: FactorTable,
    *,
    selector: str = "exact",
    split: SmoothSplit | None = None,
) -> float:
    """Exact ``E(M~^2 | eps_p, p <= q)`` at finite x.

    Each selected n is ``N n'`` with N its q-smooth part; the conditional
    second moment is ``sum_{n'} (sum_N prod_{p|N} eps_p)^2 / #S``.
    """
    ps = _check_q(q)
    e = _pattern_array(ps, eps)
    sp = split if split is not None else smooth_split(x, k, q, t, selector)
    if sp.size == 0:
        raise UndefinedMoment("empty sum: normalisation undefined")
    fN = np.ones(sp.size)
    for i in range(len(ps)):
        fN[(sp.masks >> i) & 1 == 1] *= e[i]
    sums = np.bincount(sp.group, weights=fN, minlength=sp.n_groups)
    return math.fsum((sums * sums).tolist()) / sp.size


def all_sign_patterns(n: int) -> np.ndarray:
    """All 2^n patterns of +-1, pattern j has bit i of j set -> eps_i = -1."""
    j = np.arange(2**n)[:, None]
    return 1.0 - 2.0 * ((j >> np.arange(n)[None, :]) & 1)


def _squarefree_smooth(ps: list[int]):
    """Divisors of the primorial: values, omega and membership masks."""
    n = len(ps)
    idx = np.arange(2**n)
    bits = (idx[:, None] >> np.arange(n)[None, :]) & 1
    vals = np.array([math.prod(p for p, b in zip(ps, row) if b) for row in bits.tolist()], dtype=np.int64)
    return vals, bits.sum(axis=1), bits


def conditional_second_moment_asymptotic(q: int, eps, kbar: float) -> float:
    """Large-x limit of the conditional second moment at scale ``kbar``.

    ``1 + 2 prod_{p<=q} (1 + kbar/p)^-1 sum_N kbar^omega(N) f(N)/N sum_{M<N, omega(M)=omega(N)} f(M)``
    with N, M ranging over squarefree q-smooth integers.
    """
    ps = _check_q(q)
    if not kbar > 0:
        raise InvalidArgument("kbar must be positive")
    e = _pattern_array(ps, eps)
    return float(_asymptotic_many(ps, e[None, :], kbar)[0])


def _asymptotic_many(ps: list[int], patterns: np.ndarray, kbar: float) -> np.ndarray:
    vals, om, bits = _squarefree_smooth(ps)
    order = np.argsort(vals)
    vals, om, bits = vals[order], om[order], bits[order]
    # f(N) for every pattern: product of eps over member primes
    signs = np.where(bits[None, :, :] == 1, patterns[:, None, :], 1.0).prod(axis=2)
    total = np.zeros(patterns.shape[0])
    for w in np.unique(om):
        sel = om == w
        f = signs[:, sel]
        before = np.cumsum(f, axis=1) - f
        total += ((kbar**w) * f / vals[sel] * before).sum(axis=1)
    factor = math.prod(1.0 / (1.0 + kbar / p) for p in ps)
    return 1.0 + 2.0 * factor * total


def table1(qs: Sequence[int] = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29), kbar: float = 1.0) -> list[tuple[int, float]]:
    """Asymptotic conditional second moments with every eps_p = +1."""
    return [(q, conditional_second_moment_asymptotic(q, [1.0] * len(_check_q(q)), kbar)) for q in qs]


# ---------------------------------------------------------------------------
# Gaussian truncated moment and the truncation comparison
# ---------------------------------------------------------------------------


def normal_cdf(z):
    """Standard normal CDF via the complementary error function.

    Uses ``math.erfc`` (scalars) or ``scipy.special.erfc`` (arrays); both are
    accurate to a few ulp, far beyond 12 significant digits.
    """
    if np.ndim(z) == 0:
        return 0.5 * math.erfc(-float(z) / math.sqrt(2.0))
    from scipy.special import erfc

    return 0.5 * erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def normal_tail(a: float) -> float:
    """``1 - Phi(a)`` without cancellation."""
    return 0.5 * math.erfc(a / math.sqrt(2.0))


def gaussian_truncated_second_moment(a: float) -> float:
    """``E min(X^2, a^2)`` for standard normal X."""
    if a < 0:
        raise InvalidArgument("a must be >= 0")
    return 1.0 - gaussian_truncation_deficit(a)


def gaussian_truncation_deficit(a: float) -> float:
    """``1 - E min(X^2, a^2) = (2a/sqrt(2 pi)) e^{-a^2/2} - 2(a^2 - 1)(1 - Phi(a))``."""
    return gaussian_density_term(a) - gaussian_tail_term(a)


def gaussian_density_term(a: float) -> float:
    return 2.0 * a / math.sqrt(2.0 * math.pi) * math.exp(-a * a / 2.0)


def gaussian_tail_term(a: float) -> float:
    return 2.0 * (a * a - 1.0) * normal_tail(a)


@dataclass(frozen=True)
class TruncationComparison:
    """Gaussian deficit at ``a`` against the mass the conditional moments put above ``a^2``."""

    a: float
    q: int
    kbar: float
    density_term: float
    tail_term: float
    gaussian_deficit: float
    all_plus_value: float
    all_plus_is_max: bool
    extreme_patterns_bound: float
    pattern_average_excess: float
    holds: bool


def truncation_comparison(a: float = 3.0, q: int = 29, kbar: float = 1.0) -> TruncationComparison:
    """Compare ``1 - E min(X^2, a^2)`` for Gaussian X with ``E max(C - a^2, 0)``.

    ``C`` is the asymptotic conditional second moment over uniformly random
    sign patterns at primes ``<= q``.  The all-plus and all-minus patterns
    give the same value, so ``E max(C - a^2, 0) >= (2 / 2^pi(q)) (C_+ - a^2)``.
    """
    ps = _check_q(q)
    pats = all_sign_patterns(len(ps))
    vals = _asymptotic_many(ps, pats, kbar)
    plus = float(vals[0])
    bound = 2.0 / len(pats) * max(plus - a * a, 0.0)
    avg = float(np.maximum(vals - a * a, 0.0).mean())
    deficit = gaussian_truncation_deficit(a)
    return TruncationComparison(
        a=a,
        q=q,
        kbar=kbar,
        density_term=gaussian_density_term(a),
        tail_term=gaussian_tail_term(a),
        gaussian_deficit=deficit,
        all_plus_value=plus,
        all_plus_is_max=bool(plus >= vals.max() - 1e-12),
        extreme_patterns_bound=bound,
        pattern_average_excess=avg,
        holds=deficit < bound,
    )
