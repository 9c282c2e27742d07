"""Smallest-prime-factor sieve and per-integer arithmetic classification.

A :class:`FactorTable` stores, for every ``n <= limit``, the smallest prime
factor, omega (distinct primes), big omega (with multiplicity), the largest
prime factor and a squarefree flag.  The smallest-prime-factor array is the
single source of truth; everything else is derived from it in one pass and
recomputed when a table is loaded from the on-disk cache.

Conventions for ``n = 1``: omega = big omega = 0, squarefree, and the largest
prime factor is the sentinel ``1``.
"""

from __future__ import annotations

import itertools
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InvalidArgument, ResourceBudgetExceeded

# Peak bytes per table entry during construction (stored arrays plus the
# temporaries of the factoring pass).
BYTES_PER_ENTRY = 32
DEFAULT_MAX_BYTES = 2 * 1024**3
MAX_LIMIT = 2**31 - 1

CACHE_MAGIC = b"RMF1"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIQ")


def primes_up_to(n: int) -> np.ndarray:
    """Primes ``<= n`` by a plain Eratosthenes sieve (int64 array)."""
    if n < 2:
        return np.zeros(0, dtype=np.int64)
    is_prime = np.ones(n + 1, dtype=bool)
    is_prime[:2] = False
    for i in range(2, math.isqrt(n) + 1):
        if is_prime[i]:
            is_prime[i * i :: i] = False
    return np.flatnonzero(is_prime).astype(np.int64)


def _spf_array(x: int) -> np.ndarray:
    spf = np.zeros(x + 1, dtype=np.int32)
    # descending so the smallest prime is written last
    for p in primes_up_to(math.isqrt(x))[::-1]:
        spf[p * p :: p] = p
    unset = np.flatnonzero(spf == 0)
    spf[unset] = unset
    return spf


@dataclass(frozen=True, eq=False)
class FactorTable:
    """Immutable arithmetic data for ``1 <= n <= limit`` (index 0 unused)."""

    limit: int
    spf: np.ndarray
    omega: np.ndarray
    big_omega: np.ndarray
    largest_prime: np.ndarray
    squarefree: np.ndarray
    primes: np.ndarray = field(repr=False)

    @classmethod
    def from_spf(cls, spf: np.ndarray) -> "FactorTable":
        """Derive all fields from a smallest-prime-factor array."""
        limit = len(spf) - 1
        spf = np.ascontiguousarray(spf, dtype=np.int32)
        omega = np.zeros(limit + 1, dtype=np.uint8)
        big_omega = np.zeros(limit + 1, dtype=np.uint8)
        largest = np.ones(limit + 1, dtype=np.int32)
        largest[0] = 0
        prev = np.zeros(limit + 1, dtype=np.int32)
        cur = np.arange(limit + 1, dtype=np.int32)
        active = np.arange(2, limit + 1, dtype=np.int64)
        # Peel off smallest prime factors of every n simultaneously; the chain
        # of spf values is nondecreasing, so the last one is P(n).
        while active.size:
            p = spf[cur[active]]
            big_omega[active] += 1
            omega[active] += (p != prev[active]).astype(np.uint8)
            prev[active] = p
            largest[active] = p
            cur[active] //= p
            active = active[cur[active] > 1]
        del prev, cur, active
        squarefree = omega == big_omega
        squarefree[0] = False
        primes = np.flatnonzero((spf == np.arange(limit + 1)) & (np.arange(limit + 1) >= 2))
        primes = primes.astype(np.int64)
        for arr in (spf, omega, big_omega, largest, squarefree, primes):
            arr.setflags(write=False)
        return cls(limit, spf, omega, big_omega, largest, squarefree, primes)

    # -- scalar queries -------------------------------------------------

    def _check(self, n: int) -> int:
        n = int(n)
        if n < 1 or n > self.limit:
            raise InvalidArgument(f"n={n} outside table range [1, {self.limit}]")
        return n

    def factor(self, n: int) -> list[int]:
        """Prime factors of ``n`` with multiplicity, ascending."""
        n = self._check(n)
        out = []
        while n > 1:
            p = int(self.spf[n])
            out.append(p)
            n //= p
        return out

    def prime_set(self, n: int) -> tuple[int, ...]:
        return tuple(sorted(set(self.factor(n))))

    def is_prime(self, n: int) -> bool:
        n = int(n)
        return 2 <= n <= self.limit and int(self.spf[n]) == n

    def pi(self, y: float) -> int:
        """Prime counting function by table scan (``y <= limit``)."""
        y = math.floor(y)
        if y > self.limit:
            raise InvalidArgument(f"pi({y}) needs a table to at least {y}")
        return int(np.searchsorted(self.primes, y, side="right"))

    def prime_index(self, p) -> np.ndarray | int:
        """0-based position of prime(s) ``p`` in :attr:`primes`."""
        idx = np.searchsorted(self.primes, p)
        return int(idx) if np.ndim(idx) == 0 else idx

    # -- vectorised helpers ---------------------------------------------

    def prime_matrix(self, ns: np.ndarray, k: int) -> np.ndarray:
        """Rows of ascending prime factors for squarefree ``ns`` with omega = k."""
        ns = np.asarray(ns, dtype=np.int64)
        out = np.empty((ns.size, k), dtype=np.int64)
        cur = ns.copy()
        for j in range(k):
            p = self.spf[cur].astype(np.int64)
            out[:, j] = p
            cur //= p
        if ns.size and np.any(cur != 1):
            raise InvalidArgument("prime_matrix: inputs must be squarefree with exactly k primes")
        return out


def estimate_table_bytes(x: int) -> int:
    return (int(x) + 1) * BYTES_PER_ENTRY


def build_factor_table(
    x: int,
    *,
    max_bytes: int = DEFAULT_MAX_BYTES,
    cache: str | os.PathLike | None = None,
) -> FactorTable:
    """Sieve arithmetic data for ``1 <= n <= x``.

    Supported range is ``2 <= x < 2**31``; ``x = 10**7`` needs about 320 MB
    at peak.  If ``cache`` names an existing table file with limit ``>= x``
    its spf array is reused; otherwise the freshly sieved array is written
    there.  The output never depends on the cache.
    """
    x = int(x)
    if x < 2:
        raise InvalidArgument(f"table limit must be >= 2, got {x}")
    if x > MAX_LIMIT:
        raise InvalidArgument(f"table limit {x} exceeds the int32 layout bound {MAX_LIMIT}")
    need = estimate_table_bytes(x)
    if need > max_bytes:
        raise ResourceBudgetExceeded(
            f"factor table to {x} needs ~{need} bytes (budget {max_bytes})", required=need
        )
    if cache is not None and Path(cache).exists():
        spf = read_spf_cache(cache)
        if len(spf) - 1 >= x:
            return FactorTable.from_spf(spf[: x + 1])
    spf = _spf_array(x)
    if cache is not None:
        write_spf_cache(cache, spf)
    return FactorTable.from_spf(spf)


def write_spf_cache(path: str | os.PathLike, spf: np.ndarray) -> None:
    """Write ``RMF1`` header then the little-endian u32 spf array (atomic)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, len(spf) - 1))
        fh.write(np.asarray(spf, dtype="<u4").tobytes())
    os.replace(tmp, path)


def read_spf_cache(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_CACHE_HEADER.size)
        if len(head) != _CACHE_HEADER.size:
            raise InvalidArgument(f"{path}: truncated table cache header")
        magic, version, limit = _CACHE_HEADER.unpack(head)
        if magic != CACHE_MAGIC or version != CACHE_VERSION:
            raise InvalidArgument(f"{path}: not an RMF1 v{CACHE_VERSION} table cache")
        body = np.frombuffer(fh.read(), dtype="<u4")
    if body.size != limit + 1:
        raise InvalidArgument(f"{path}: expected {limit + 1} entries, found {body.size}")
    return body.astype(np.int32)


# ---------------------------------------------------------------------------
# squarefree kernels
# ---------------------------------------------------------------------------


def _odd_exponent_primes(n: int, table: FactorTable) -> set[int]:
    if n <= table.limit:
        primes = table.factor(n)
    else:
        primes = []
        for p in table.primes:
            p = int(p)
            if p * p > n:
                break
            while n % p == 0:
                primes.append(p)
                n //= p
        if n > 1:
            if n > table.limit:
                raise InvalidArgument(f"prime factor {n} exceeds table limit {table.limit}")
            primes.append(n)
    odd: set[int] = set()
    for p in primes:
        odd ^= {p}
    return odd


def squarefree_kernel(n: int, table: FactorTable) -> int:
    """``n`` divided by its largest square factor, e.g. 120 -> 30, 72 -> 2."""
    n = int(n)
    if n < 1:
        raise InvalidArgument(f"squarefree kernel undefined for n={n}")
    return math.prod(_odd_exponent_primes(n, table))


def kernel_of_product(factors: Iterable[int], table: FactorTable) -> int:
    """Squarefree kernel of a product, factoring each factor separately.

    Each factor must lie in the table, so kernels of products up to
    ``limit**len(factors)`` are available without sieving that far.
    """
    odd: set[int] = set()
    for a in factors:
        a = int(a)
        if a < 1:
            raise InvalidArgument(f"kernel undefined for factor {a}")
        odd ^= _odd_exponent_primes(table._check(a), table)
    return math.prod(odd)


# ---------------------------------------------------------------------------
# counting queries
# ---------------------------------------------------------------------------

MODES = ("omega", "squarefree", "at_most")
_LARGEST_OPS = ("eq", "lt", "le", "gt")
# Excluded-prime sets with more members than this on tables wider than
# IE_MIN_X are counted by inclusion-exclusion over multiples.
IE_MAX_EXCLUDED = 8
IE_MIN_X = 2_000_000


@dataclass(frozen=True)
class CountQuery:
    """Which integers ``1 <= n <= x`` to select.

    ``mode``:
      * ``"omega"``: omega(n) = k (any multiplicity);
      * ``"squarefree"``: omega(n) = big_omega(n) = k;
      * ``"at_most"``: squarefree with omega(n) <= k (``k=None``: all squarefree n).

    ``largest_prime`` is ``None`` or ``(op, p)`` with op in eq/lt/le/gt,
    constraining P(n) (sentinel P(1) = 1).  ``excluded_primes`` imposes
    coprimality to each listed prime.
    """

    x: int
    k: int | None
    mode: str = "squarefree"
    largest_prime: tuple[str, int] | None = None
    excluded_primes: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown count mode {self.mode!r}; expected one of {MODES}")
        if self.k is None and self.mode != "at_most":
            raise InvalidArgument("k=None is only meaningful for mode 'at_most'")
        if self.k is not None and self.k < 0:
            raise InvalidArgument(f"k must be >= 0, got {self.k}")
        if self.largest_prime is not None:
            op, _ = self.largest_prime
            if op not in _LARGEST_OPS:
                raise InvalidArgument(f"largest-prime op {op!r} not in {_LARGEST_OPS}")
        object.__setattr__(self, "excluded_primes", frozenset(int(p) for p in self.excluded_primes))


def _validate(query: CountQuery, table: FactorTable) -> None:
    if query.x > table.limit:
        raise InvalidArgument(f"query x={query.x} exceeds table limit {table.limit}")
    refs = list(query.excluded_primes)
    if query.largest_prime is not None:
        refs.append(query.largest_prime[1])
    for p in refs:
        if p > table.limit:
            raise InvalidArgument(f"constraint prime {p} exceeds table limit {table.limit}")
    for p in query.excluded_primes:
        if not table.is_prime(p):
            raise InvalidArgument(f"excluded value {p} is not prime")


def _base_mask(query: CountQuery, table: FactorTable) -> np.ndarray:
    """Mask over indices 0..x, ignoring excluded primes."""
    x = query.x
    om = table.omega[: x + 1]
    if query.mode == "omega":
        mask = om == query.k
    else:
        mask = table.squarefree[: x + 1].copy()
        if query.mode == "squarefree":
            mask &= om == query.k
        elif query.k is not None:
            mask &= om <= query.k
    mask[0] = False
    if query.largest_prime is not None:
        op, p = query.largest_prime
        lp = table.largest_prime[: x + 1]
        mask &= {"eq": lp == p, "lt": lp < p, "le": lp <= p, "gt": lp > p}[op]
    return mask


def _mask(query: CountQuery, table: FactorTable) -> np.ndarray:
    mask = _base_mask(query, table)
    if query.excluded_primes:
        n = np.arange(query.x + 1)
        for p in sorted(query.excluded_primes):
            mask &= n % p != 0
    return mask


def _count_inclusion_exclusion(query: CountQuery, table: FactorTable) -> int:
    base = _base_mask(query, table)
    primes = sorted(query.excluded_primes)
    total = 0
    for r in range(len(primes) + 1):
        for combo in itertools.combinations(primes, r):
            d = math.prod(combo)
            if d > query.x:
                continue
            total += (-1) ** r * int(np.count_nonzero(base[d::d]))
    return total


def count(query: CountQuery, table: FactorTable, *, method: str = "auto") -> int:
    """Exact number of integers selected by ``query``.

    ``method`` is ``"scan"`` (filtered scan), ``"ie"`` (inclusion-exclusion
    over the excluded primes) or ``"auto"``.
    """
    _validate(query, table)
    if method == "auto":
        big = query.x >= IE_MIN_X and 0 < len(query.excluded_primes) <= IE_MAX_EXCLUDED
        method = "ie" if big else "scan"
    if method == "ie":
        return _count_inclusion_exclusion(query, table)
    if method != "scan":
        raise InvalidArgument(f"unknown count method {method!r}")
    return int(np.count_nonzero(_mask(query, table)))


def enumerate_integers(query: CountQuery, table: FactorTable) -> np.ndarray:
    """Selected integers in ascending order (int64 array)."""
    _validate(query, table)
    return np.flatnonzero(_mask(query, table)).astype(np.int64)


def squarefree_with_k(table: FactorTable, x: int, k: int) -> np.ndarray:
    """Shorthand for the set S_{k,x} = {n <= x : omega(n) = big_omega(n) = k}."""
    return enumerate_integers(CountQuery(x, k, "squarefree"), table)
