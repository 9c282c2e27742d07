"""Random multiplicative functions: epsilon models, assignments and restricted sums.

``f(n) = prod_{p | n} eps_p`` on squarefree ``n`` and ``0`` otherwise.  The
restricted sums are

* ``M^(k)(x)``   over ``n <= x`` with omega(n) = k,
* ``M^(<=k)(x)`` over ``n <= x`` with omega(n) <= k (this includes ``n = 1``),
* ``M(x)``       over all ``n <= x``,

optionally restricted to a single largest prime factor ``P(n) = p``, which
gives the martingale increments ``M_p^(k)(x)``.

Randomness is counter based.  Assignment ``index`` of seed ``s`` is the
Philox stream keyed by ``(s, index)``; the value at the ``i``-th prime is
read from a fixed position of that stream (bit ``i`` for Rademacher, word
``i`` otherwise), so enlarging ``x`` never changes values at smaller primes
and Monte Carlo sample ``j`` is exactly assignment ``(seed, j)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import sparse, special

from .errors import InvalidArgument, ModelInvalid
from .sieve import CountQuery, FactorTable, enumerate_integers, primes_up_to

_U53 = 2.0**-53
_SEED_MASK = 2**64 - 1


# ---------------------------------------------------------------------------
# single-prime distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Distribution:
    """A symmetric law for one ``eps_p``, sampled by inverse CDF from ``u in (0,1)``."""

    name: str
    second_moment: float
    fourth_moment: float

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def is_symmetric(self) -> bool:
        return True


class _Rademacher(Distribution):
    def from_uniform(self, u):
        return np.where(u < 0.5, -1.0, 1.0)


class _Gaussian(Distribution):
    def from_uniform(self, u):
        return special.ndtri(u)


class _Uniform(Distribution):
    def from_uniform(self, u):
        return math.sqrt(3.0) * (2.0 * u - 1.0)


@dataclass(frozen=True)
class Discrete(Distribution):
    """Finite law given by ``atoms = ((value, prob), ...)``."""

    atoms: tuple[tuple[float, float], ...] = ()

    def is_symmetric(self) -> bool:
        probs: dict[float, float] = {}
        for v, p in self.atoms:
            probs[v] = probs.get(v, 0.0) + p
        return all(abs(p - probs.get(-v, 0.0)) <= 1e-12 for v, p in probs.items())

    def from_uniform(self, u):
        values = np.array([v for v, _ in self.atoms], dtype=float)
        edges = np.cumsum([p for _, p in self.atoms])
        idx = np.searchsorted(edges, u, side="right")
        return values[np.minimum(idx, len(values) - 1)]


def discrete(name: str, atoms: Sequence[tuple[float, float]]) -> Discrete:
    atoms = tuple((float(v), float(p)) for v, p in sorted(atoms))
    return Discrete(
        name,
        second_moment=sum(p * v * v for v, p in atoms),
        fourth_moment=sum(p * v**4 for v, p in atoms),
        atoms=atoms,
    )


def three_point(a: float = math.sqrt(2.0)) -> Discrete:
    """``+-a`` with probability ``1/(2a^2)`` each, else 0; E eps^4 = a^2."""
    if a < 1:
        raise ModelInvalid(f"three-point law needs a >= 1 for unit variance, got {a}")
    q = 1.0 / (2.0 * a * a)
    return discrete(f"three_point({a:g})", [(-a, q), (0.0, 1.0 - 2.0 * q), (a, q)])


RADEMACHER = _Rademacher("rademacher", 1.0, 1.0)
GAUSSIAN = _Gaussian("gaussian", 1.0, 3.0)
UNIFORM = _Uniform("uniform_sqrt3", 1.0, 9.0 / 5.0)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsilonModel:
    """Independent symmetric ``eps_p`` with ``E eps^2 = 1`` and ``E eps^4 <= C``.

    ``components`` are used cyclically by prime index, so a model need not be
    identically distributed across primes.
    """

    name: str
    kind: str
    components: tuple[Distribution, ...]
    fourth_moment_bound: float

    def __post_init__(self):
        if self.kind not in ("rademacher", "gaussian", "custom"):
            raise ModelInvalid(f"unknown model kind {self.kind!r}")
        if not self.components:
            raise ModelInvalid("model needs at least one component distribution")
        for d in self.components:
            if not d.is_symmetric():
                raise ModelInvalid(f"{d.name}: distribution is not symmetric about 0")
            if abs(d.second_moment - 1.0) > 1e-12:
                raise ModelInvalid(f"{d.name}: E eps^2 = {d.second_moment}, must be 1")
            if d.fourth_moment > self.fourth_moment_bound + 1e-12:
                raise ModelInvalid(
                    f"{d.name}: E eps^4 = {d.fourth_moment} exceeds bound {self.fourth_moment_bound}"
                )

    @property
    def integer_valued(self) -> bool:
        return self.kind == "rademacher"

    def fourth_moments(self, n_primes: int) -> np.ndarray:
        m4 = np.array([d.fourth_moment for d in self.components])
        return m4[np.arange(n_primes) % len(m4)]

    def spec(self):
        """JSON-serialisable identifier accepted by :func:`get_model`."""
        if self.name in BUILTIN_MODELS:
            return self.name
        return {
            "name": self.name,
            "fourth_moment_bound": self.fourth_moment_bound,
            "components": [list(map(list, d.atoms)) for d in self.components],
        }


def custom_model(name: str, components: Sequence[Distribution], fourth_moment_bound=None):
    bound = max(d.fourth_moment for d in components) if fourth_moment_bound is None else fourth_moment_bound
    return EpsilonModel(name, "custom", tuple(components), float(bound))


BUILTIN_MODELS = {
    "rademacher": EpsilonModel("rademacher", "rademacher", (RADEMACHER,), 1.0),
    "gaussian": EpsilonModel("gaussian", "gaussian", (GAUSSIAN,), 3.0),
    "custom:three_point": EpsilonModel("custom:three_point", "custom", (three_point(),), 2.0),
    "custom:uniform": EpsilonModel("custom:uniform", "custom", (UNIFORM,), 1.8),
    "custom:alternating": EpsilonModel("custom:alternating", "custom", (three_point(), UNIFORM), 2.0),
}


def get_model(spec) -> EpsilonModel:
    """Resolve a model name (``rademacher``, ``gaussian``, ``custom:<name>``) or a dict."""
    if isinstance(spec, EpsilonModel):
        return spec
    if isinstance(spec, str):
        try:
            return BUILTIN_MODELS[spec]
        except KeyError:
            raise ModelInvalid(f"unknown model {spec!r}; built-ins: {sorted(BUILTIN_MODELS)}") from None
    if isinstance(spec, dict):
        comps = [discrete(f"{spec['name']}[{i}]", atoms) for i, atoms in enumerate(spec["components"])]
        return custom_model(spec["name"], comps, spec.get("fourth_moment_bound"))
    raise ModelInvalid(f"cannot interpret model spec {spec!r}")


# ---------------------------------------------------------------------------
# counter-based streams
# ---------------------------------------------------------------------------


def _stream(seed: int, index: int) -> np.random.Philox:
    key = np.array([int(seed) & _SEED_MASK, int(index) & _SEED_MASK], dtype=np.uint64)
    return np.random.Philox(key=key)


def _words(seed: int, index: int, n_words: int) -> np.ndarray:
    return _stream(seed, index).random_raw(n_words).astype(np.uint64)


def _uniforms(words: np.ndarray) -> np.ndarray:
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def _continuous_values(model: EpsilonModel, u: np.ndarray) -> np.ndarray:
    """Per-prime transform; ``u`` has primes along the last axis."""
    out = np.empty_like(u)
    ncomp = len(model.components)
    for c, dist in enumerate(model.components):
        out[..., c::ncomp] = dist.from_uniform(u[..., c::ncomp])
    return out


def _rademacher_from_words(words: np.ndarray, n: int) -> np.ndarray:
    bits = np.unpackbits(words.view(np.uint8), bitorder="little", axis=-1)[..., :n]
    return (1 - 2 * bits.astype(np.int8)).astype(np.int8)


# ---------------------------------------------------------------------------
# assignments
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EpsilonAssignment:
    """One realisation ``{p: eps_p}`` for primes ``p <= limit``."""

    model: EpsilonModel
    limit: int
    seed: int
    primes: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    index: int = 0

    def __getitem__(self, p: int):
        i = int(np.searchsorted(self.primes, p))
        if i >= len(self.primes) or self.primes[i] != p:
            raise InvalidArgument(f"{p} is not a prime <= {self.limit}")
        v = self.values[i]
        return int(v) if self.model.integer_valued else float(v)

    def as_dict(self) -> dict[int, float]:
        return {int(p): self[int(p)] for p in self.primes}

    def to_json(self) -> str:
        """Compact export; values are regenerated on import, never stored."""
        return json.dumps(
            {"model": self.model.spec(), "seed": self.seed, "limit": self.limit, "index": self.index},
            sort_keys=True,
        )


def sample_assignment(
    model,
    x: int,
    seed: int,
    *,
    index: int = 0,
    table: FactorTable | None = None,
) -> EpsilonAssignment:
    """Deterministic assignment for ``(model, seed, index)`` on primes ``<= x``."""
    model = get_model(model)
    x = int(x)
    if x < 2:
        raise InvalidArgument(f"assignment limit must be >= 2, got {x}")
    if table is not None and x <= table.limit:
        primes = table.primes[: table.pi(x)]
    else:
        primes = primes_up_to(x)
    n = len(primes)
    if model.integer_valued:
        values = _rademacher_from_words(_words(seed, index, -(-n // 64)), n)
    else:
        values = _continuous_values(model, _uniforms(_words(seed, index, n)))
    values.setflags(write=False)
    return EpsilonAssignment(model, x, int(seed), primes, values, int(index))


def assignment_from_json(text: str, table: FactorTable | None = None) -> EpsilonAssignment:
    d = json.loads(text)
    return sample_assignment(get_model(d["model"]), d["limit"], d["seed"], index=d.get("index", 0), table=table)


def fixed_assignment(values: dict[int, float], limit: int, model="rademacher") -> EpsilonAssignment:
    """Assignment with explicitly given values (for exhaustive enumeration)."""
    model = get_model(model)
    primes = primes_up_to(limit)
    if set(values) != set(int(p) for p in primes):
        raise InvalidArgument("fixed assignment must give a value for every prime <= limit")
    dtype = np.int8 if model.integer_valued else np.float64
    vals = np.array([values[int(p)] for p in primes], dtype=dtype)
    vals.setflags(write=False)
    return EpsilonAssignment(model, int(limit), -1, primes, vals, 0)


# ---------------------------------------------------------------------------
# sums over a single assignment
# ---------------------------------------------------------------------------

SELECTORS = ("exact", "at_most", "all")


@dataclass(frozen=True)
class SumSpec:
    """Which sum to form: ``selector`` exact k / at most k / all n <= x."""

    x: int
    selector: str = "exact"
    k: int | None = None
    largest_prime: int | None = None

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise InvalidArgument(f"selector must be one of {SELECTORS}, got {self.selector!r}")
        if self.selector != "all" and (self.k is None or self.k < 0):
            raise InvalidArgument(f"selector {self.selector!r} needs k >= 0")

    def query(self) -> CountQuery:
        lp = None if self.largest_prime is None else ("eq", int(self.largest_prime))
        if self.selector == "exact":
            return CountQuery(self.x, self.k, "squarefree", lp)
        k = None if self.selector == "all" else self.k
        return CountQuery(self.x, k, "at_most", lp)


def _check_ranges(x: int, a: EpsilonAssignment, t: FactorTable) -> None:
    if x > t.limit:
        raise InvalidArgument(f"x={x} exceeds table limit {t.limit}")
    if x > a.limit:
        raise InvalidArgument(f"x={x} exceeds assignment limit {a.limit}")


def _f_values(ns: np.ndarray, a: EpsilonAssignment, t: FactorTable) -> np.ndarray:
    """f(n) for an array of squarefree n (each prime looked up by index)."""
    dtype = np.int64 if a.model.integer_valued else np.float64
    out = np.ones(ns.shape, dtype=dtype)
    cur = ns.astype(np.int64).copy()
    live = np.flatnonzero(cur > 1)
    while live.size:
        p = t.spf[cur[live]]
        out[live] *= a.values[np.searchsorted(a.primes, p)]
        cur[live] //= p
        live = live[cur[live] > 1]
    return out


def _exact_sum(terms: np.ndarray, integer: bool):
    if integer:
        return int(terms.sum())
    return math.fsum(terms.tolist())


def evaluate_f(n: int, a: EpsilonAssignment, t: FactorTable):
    """Value of the random multiplicative function at ``n``."""
    n = int(n)
    if n < 1 or n > min(t.limit, a.limit):
        raise InvalidArgument(f"n={n} outside [1, {min(t.limit, a.limit)}]")
    if not t.squarefree[n]:
        return 0
    v = _f_values(np.array([n]), a, t)[0]
    return int(v) if a.model.integer_valued else float(v)


def sum_M(spec: SumSpec, a: EpsilonAssignment, t: FactorTable):
    """Exact finite sum of f(n) over the selected n, in ascending n.

    Integer-valued models are summed exactly; real models with
    :func:`math.fsum` (correctly rounded).
    """
    _check_ranges(spec.x, a, t)
    ns = enumerate_integers(spec.query(), t)
    return _exact_sum(_f_values(ns, a, t), a.model.integer_valued)


def martingale_increments(x: int, k: int, a: EpsilonAssignment, t: FactorTable) -> list[tuple[int, float]]:
    """``[(p, M_p^(k)(x)) for primes p <= x]`` in ascending p (zeros included)."""
    if k < 1:
        raise InvalidArgument("martingale increments need k >= 1")
    _check_ranges(x, a, t)
    primes = t.primes[: t.pi(x)]
    ns = enumerate_integers(CountQuery(x, k, "squarefree"), t)
    terms = _f_values(ns, a, t)
    lp = t.largest_prime[ns]
    order = np.argsort(lp, kind="stable")
    lp, terms = lp[order], terms[order]
    bounds = np.searchsorted(lp, primes, side="left"), np.searchsorted(lp, primes, side="right")
    integer = a.model.integer_valued
    return [
        (int(p), _exact_sum(terms[lo:hi], integer))
        for p, lo, hi in zip(primes.tolist(), bounds[0].tolist(), bounds[1].tolist())
    ]


@dataclass(frozen=True)
class ExchangeableRegression:
    """``E(N^(k) | eps) = (1 - k/pi(x)) M^(k)`` evaluated two ways."""

    x: int
    k: int
    pi_x: int
    M: float
    closed_form: float
    direct_average: float
    difference: float


def exchangeable_pair(x: int, k: int, a: EpsilonAssignment, t: FactorTable) -> ExchangeableRegression:
    """Conditional mean of the resampled sum ``N^(k)(x)`` given the assignment.

    ``N`` replaces ``eps_I`` by an independent copy at a uniform random prime
    ``I <= x``.  Averaging over ``I`` with the copy at its mean 0 removes, for
    each ``I``, exactly the terms divisible by ``I``; this direct average is
    compared with the closed form ``(1 - k/pi(x)) M``.
    """
    if k < 1:
        raise InvalidArgument("exchangeable pair needs k >= 1")
    _check_ranges(x, a, t)
    pi_x = t.pi(x)
    ns = enumerate_integers(CountQuery(x, k, "squarefree"), t)
    terms = _f_values(ns, a, t)
    integer = a.model.integer_valued
    M = _exact_sum(terms, integer)
    # D_p = sum of terms n with p | n
    if ns.size:
        pidx = np.searchsorted(t.primes, t.prime_matrix(ns, k))
        owners = pidx.ravel()
        contrib = np.repeat(terms, k)
    else:
        owners = np.zeros(0, dtype=np.int64)
        contrib = terms[:0]
    if integer:
        D = np.bincount(owners, weights=contrib.astype(np.float64), minlength=pi_x).astype(np.int64)
        direct = Fraction(sum(M - int(d) for d in D.tolist()), pi_x)
        closed = Fraction(pi_x - k, pi_x) * M
        diff = float(closed - direct)
        return ExchangeableRegression(x, k, pi_x, float(M), float(closed), float(direct), diff)
    order = np.argsort(owners, kind="stable")
    owners, contrib = owners[order], contrib[order]
    cuts = np.searchsorted(owners, np.arange(pi_x + 1))
    D = [math.fsum(contrib[cuts[i] : cuts[i + 1]].tolist()) for i in range(pi_x)]
    direct = math.fsum(M - d for d in D) / pi_x
    closed = (1.0 - k / pi_x) * M
    return ExchangeableRegression(x, k, pi_x, M, closed, direct, closed - direct)


# ---------------------------------------------------------------------------
# batched evaluation for Monte Carlo
# ---------------------------------------------------------------------------


class EpsilonBatch:
    """Assignments ``(seed, start) .. (seed, start + size - 1)`` on the first ``n_primes`` primes.

    ``prefix(j)`` returns ``sum_{i < j} eps_i`` per sample.  Rademacher
    batches keep packed bits and evaluate prefixes by popcount.
    """

    def __init__(self, model, n_primes: int, seed: int, start: int, size: int):
        self.model = get_model(model)
        self.n_primes = int(n_primes)
        self.size = int(size)
        self.start = int(start)
        n = self.n_primes
        idx = range(self.start, self.start + self.size)
        if self.model.integer_valued:
            nw = -(-n // 64)
            words = np.zeros((self.size, nw + 1), dtype=np.uint64)
            for r, s in enumerate(idx):
                words[r, :nw] = _words(seed, s, nw)
            if n % 64:
                words[:, nw - 1] &= np.uint64((1 << (n % 64)) - 1)
            self._words = words
            pc = np.bitwise_count(words[:, :nw]).astype(np.int32)
            self._cum = np.zeros((self.size, nw + 1), dtype=np.int32)
            np.cumsum(pc, axis=1, out=self._cum[:, 1:])
            self._dense = None
        else:
            u = np.empty((self.size, n), dtype=np.float64)
            for r, s in enumerate(idx):
                u[r] = _uniforms(_words(seed, s, n))
            self._dense = _continuous_values(self.model, u)
            self._cum = None

    def values(self, cols) -> np.ndarray:
        cols = np.asarray(cols, dtype=np.int64)
        if self._dense is not None:
            return self._dense[:, cols]
        w = self._words[:, cols // 64]
        bits = (w >> (cols % 64).astype(np.uint64)) & np.uint64(1)
        return 1.0 - 2.0 * bits.astype(np.float64)

    def dense(self) -> np.ndarray:
        if self._dense is None:
            return self.values(np.arange(self.n_primes))
        return self._dense

    def prefix(self, j) -> np.ndarray:
        j = np.asarray(j, dtype=np.int64)
        if self._dense is not None:
            if self._cum is None:
                self._cum = np.zeros((self.size, self.n_primes + 1))
                np.cumsum(self._dense, axis=1, out=self._cum[:, 1:])
            return self._cum[:, j]
        w, r = j // 64, (j % 64).astype(np.uint64)
        mask = (np.uint64(1) << r) - np.uint64(1)
        partial = np.bitwise_count(self._words[:, w] & mask).astype(np.int64)
        ones = self._cum[:, w].astype(np.int64) + partial
        return (j - 2 * ones).astype(np.float64)


def _level_plan(t: FactorTable, x: int, j: int):
    """Split S_{j,x} as n = u * q with q = P(n) > P(u), u in S_{j-1}.

    Returns (u primes as index matrix, lo, hi): the level sum is
    ``sum_u f(u) * (prefix(hi) - prefix(lo))``.
    """
    if j == 1:
        return np.zeros((1, 0), dtype=np.int64), np.array([0]), np.array([t.pi(x)])
    us = enumerate_integers(CountQuery(x // 2, j - 1, "squarefree"), t)
    pu = t.largest_prime[us].astype(np.int64)
    keep = (x // us) > pu
    us, pu = us[keep], pu[keep]
    lo = np.searchsorted(t.primes, pu, side="right")
    hi = np.searchsorted(t.primes, x // us, side="right")
    keep = hi > lo
    us, lo, hi = us[keep], lo[keep], hi[keep]
    cols = np.searchsorted(t.primes, t.prime_matrix(us, j - 1))
    return cols, lo, hi


class SumPlan:
    """Precomputed structure for evaluating a :class:`SumSpec` on a batch."""

    def __init__(self, spec: SumSpec, t: FactorTable):
        if spec.largest_prime is not None:
            raise InvalidArgument("batched plans do not support a largest-prime restriction")
        if spec.x > t.limit:
            raise InvalidArgument(f"x={spec.x} exceeds table limit {t.limit}")
        self.spec = spec
        x = spec.x
        top = int(t.omega[: x + 1].max())
        if spec.selector == "exact":
            levels = [spec.k]
        elif spec.selector == "at_most":
            levels = list(range(0, spec.k + 1))
        else:
            levels = list(range(0, top + 1))
        self.constant = 1.0 if 0 in levels else 0.0
        self.levels = [_level_plan(t, x, j) for j in levels if 1 <= j <= top]
        self.n_primes = t.pi(x)

    def evaluate(self, batch: EpsilonBatch) -> np.ndarray:
        total = np.full(batch.size, self.constant)
        for cols, lo, hi in self.levels:
            if not lo.size:
                continue
            weight = batch.prefix(hi) - batch.prefix(lo)
            for c in range(cols.shape[1]):
                weight *= batch.values(cols[:, c])
            total += weight.sum(axis=1)
        return total


class IncrementPlan:
    """Evaluate all martingale increments ``M_p^(k)(x)`` on a batch.

    ``M_p = eps_p * sum_{u in S_{k-1}, P(u) < p <= x/u} f(u)``; the inner sums
    for all p at once are a range-add, done as one sparse product.
    """

    def __init__(self, x: int, k: int, t: FactorTable):
        if k < 1:
            raise InvalidArgument("increments need k >= 1")
        self.x, self.k = x, k
        self.n_primes = t.pi(x)
        cols, lo, hi = _level_plan(t, x, k)
        self.cols = cols
        n = len(lo)
        rows = np.concatenate([np.arange(n), np.arange(n)])
        where = np.concatenate([lo, hi])
        data = np.concatenate([np.ones(n), -np.ones(n)])
        self._diff = sparse.csr_matrix((data, (rows, where)), shape=(n, self.n_primes + 1))

    def evaluate(self, batch: EpsilonBatch) -> np.ndarray:
        """Array (batch, n_primes) of increments in ascending prime order."""
        fu = np.ones((batch.size, self.cols.shape[0]))
        for c in range(self.cols.shape[1]):
            fu *= batch.values(self.cols[:, c])
        inner = np.cumsum(np.asarray(self._diff.T.dot(fu.T).T), axis=1)[:, : self.n_primes]
        return inner * batch.dense()
