"""Command line entry point: ``rmflab <command> [options]``.

Exit codes: 0 success, 1 usage or invalid configuration, 2 a ``--strict``
check failed, 3 a resource budget was exceeded.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Sequence

from . import clt, moments, ntcheck, rmf
from .errors import ModelInvalid, ResourceBudgetExceeded, RMFError
from .report import FORMATS, envelope, render, write_atomic
from .sieve import DEFAULT_MAX_BYTES, CountQuery, build_factor_table, count, primes_up_to

EXIT_OK, EXIT_USAGE, EXIT_STRICT, EXIT_BUDGET = 0, 1, 2, 3

TABLE1_Q = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)
REFERENCE_TABLE1 = {
    2: 1.000,
    3: 1.333,
    5: 1.806,
    7: 2.472,
    11: 3.249,
    13: 4.310,
    17: 5.603,
    19: 7.305,
    23: 9.378,
    29: 11.778,
}
TABLE1_TOLERANCE = 0.001
K_RULES = ("fixed", "floor-loglog", "c-loglog")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def round3(v: float) -> str:
    """Half-to-even rounding at 3 decimals of the shortest repr of ``v``."""
    return str(Decimal(repr(float(v))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _int_like(text: str) -> int:
    """Integers, also written as ``1e6`` or ``10**6``."""
    try:
        if "**" in text:
            base, exp = text.split("**")
            return int(base) ** int(exp)
        v = float(text) if any(c in text for c in "eE.") else int(text)
        if v != int(v):
            raise ValueError
        return int(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of integers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=FORMATS, default="json")
    common.add_argument("--out", help="write the report here (atomically) instead of stdout")
    common.add_argument("--strict", action="store_true", help="exit 2 when a recorded check fails")
    common.add_argument("--budget", type=_int_like, default=DEFAULT_MAX_BYTES, help="memory budget in bytes")
    common.add_argument("--table-cache", help="binary smallest-prime-factor cache file")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--timing", action="store_true", help="embed wall-clock time in the report")

    sized = _Parser(add_help=False)
    sized.add_argument("--x", type=_int_like, required=True)
    sized.add_argument("--k", type=int)
    sized.add_argument("--k-rule", choices=K_RULES, default="fixed")
    sized.add_argument("--c", type=float, default=1.0, help="multiplier for --k-rule c-loglog")

    conditioning = _Parser(add_help=False)
    conditioning.add_argument("--q", type=int)
    conditioning.add_argument("--eps-pattern", help="signs for primes <= q, e.g. '++-' (default all +)")

    sampling = _Parser(add_help=False)
    sampling.add_argument("--model", default="rademacher")
    sampling.add_argument("--samples", type=_int_like, default=10_000)
    sampling.add_argument("--seed", type=int, default=0)

    p = _Parser(prog="rmflab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t1 = sub.add_parser("table1", parents=[common], help="asymptotic conditional second moments")
    t1.add_argument("--q", type=_int_list, default=list(TABLE1_Q), help="comma separated primes")
    t1.add_argument("--kbar", type=float, default=1.0)
    t1.add_argument("--eps-pattern")
    t1.add_argument("--sensitivity", type=float, help="also evaluate at kbar*(1 -+ this)")

    mo = sub.add_parser("moments", parents=[common, sized, conditioning], help="exact moments")
    mo.add_argument("--selector", choices=rmf.SELECTORS, default="exact")

    si = sub.add_parser("simulate", parents=[common, sized, conditioning, sampling], help="Monte Carlo distribution")
    si.add_argument("--selector", choices=rmf.SELECTORS, default="exact")
    si.add_argument("--a-list", type=_float_list, default=[1.0, 2.0, 3.0])
    si.add_argument("--split", action="store_true", help="add the eps_2 variance split")
    si.add_argument("--raw-csv", help="also write the normalised samples to this CSV file")

    mc = sub.add_parser("mcleish", parents=[common, sized, sampling], help="martingale CLT quantities")
    mc.add_argument("--thresholds", type=_float_list, default=[0.05, 0.1, 0.2, 0.5])

    nt = sub.add_parser("ntcheck", parents=[common], help="counting estimate validators")
    nt.add_argument("--x", type=_int_like, default=10**5, help="scan range upper end")
    nt.add_argument("--k", type=int)
    nt.add_argument("--exclude", type=_int_list, default=[2, 3])

    sv = sub.add_parser("sieve", parents=[common], help="factor table summary")
    sv.add_argument("--x", type=_int_like, required=True)
    sv.add_argument("--k", type=int)
    return p


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def resolve_k(args) -> int | None:
    if getattr(args, "selector", "exact") == "all" and args.k is None and args.k_rule == "fixed":
        return None
    if args.k_rule == "fixed":
        if args.k is None:
            raise UsageError("--k is required with --k-rule fixed")
        return args.k
    if args.k is not None:
        raise UsageError(f"conflicting fields: --k {args.k} and --k-rule {args.k_rule}")
    if args.x < 16:
        raise UsageError("--k-rule needs --x >= 16 so that log log x >= 1")
    ll = math.log(math.log(args.x))
    if args.k_rule == "floor-loglog":
        return max(1, math.floor(ll))
    if args.c <= 0:
        raise UsageError("--c must be positive")
    return max(1, math.ceil(args.c * ll))


def parse_pattern(text: str | None, q: int) -> list[float]:
    n = len(primes_up_to(q))
    if text is None:
        return [1.0] * n
    if set(text) <= {"+", "-"}:
        vals = [1.0 if c == "+" else -1.0 for c in text]
    else:
        vals = [float(v) for v in text.split(",")]
    if len(vals) != n:
        raise UsageError(f"--eps-pattern has {len(vals)} entries, primes <= {q} number {n}")
    return vals


def _table(args, x: int):
    return build_factor_table(max(2, x), max_bytes=args.budget, cache=args.table_cache)


def _max_pairs(args) -> int:
    return max(1, args.budget // 8)


def _config(args, **resolved) -> dict:
    skip = {"out", "format", "timing", "threads", "table_cache", "raw_csv"}
    cfg = {k: v for k, v in vars(args).items() if k not in skip}
    cfg.update(resolved)
    return cfg


def _params(x: int, k: int | None) -> dict | None:
    if k is None or k < 1:
        return None
    try:
        p = ntcheck.params(x, k)
    except RMFError:
        return None
    return {"L": p.L, "kbar": p.kbar}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_table1(args):
    rows, failures = [], []
    for q in args.q:
        pattern = parse_pattern(args.eps_pattern, q)
        v = moments.conditional_second_moment_asymptotic(q, pattern, args.kbar)
        row = {"q": q, "value": round3(v), "unrounded": v}
        ref = REFERENCE_TABLE1.get(q)
        comparable = ref is not None and args.kbar == 1.0 and all(e == 1.0 for e in pattern)
        if comparable:
            row["reference"] = f"{ref:.3f}"
            row["delta"] = v - ref
            if abs(v - ref) > TABLE1_TOLERANCE:
                failures.append(q)
        rows.append(row)
    result = {"rows": rows, "kbar": args.kbar, "failures": failures}
    if args.sensitivity:
        d = args.sensitivity
        result["sensitivity"] = [
            {
                "kbar": kb,
                "values": {
                    str(q): moments.conditional_second_moment_asymptotic(q, parse_pattern(args.eps_pattern, q), kb)
                    for q in args.q
                },
            }
            for kb in (args.kbar * (1 - d), args.kbar, args.kbar * (1 + d))
        ]
    return _config(args), result, None, None, bool(failures)


def cmd_moments(args):
    k = resolve_k(args)
    t = _table(args, args.x)
    result: dict = {"params": _params(args.x, k)}
    if args.selector == "exact":
        rep = moments.fourth_moment_report(args.x, k, t, max_pairs=_max_pairs(args))
        result.update(rep.as_dict())
    else:
        result["second_moment"] = moments.second_moment(args.x, k, t, args.selector)
    if args.q is not None:
        pattern = parse_pattern(args.eps_pattern, args.q)
        cond = {
            "q": args.q,
            "pattern": pattern,
            "finite": moments.conditional_second_moment_finite(args.x, k, args.q, pattern, t, selector=args.selector),
        }
        if result["params"]:
            cond["asymptotic"] = moments.conditional_second_moment_asymptotic(args.q, pattern, result["params"]["kbar"])
        result["conditional"] = cond
    return _config(args, k=k), result, t.limit, None, False


def cmd_simulate(args):
    k = resolve_k(args)
    t = _table(args, args.x)
    spec = rmf.SumSpec(args.x, args.selector, k)
    model = rmf.get_model(args.model)
    rep, z = clt.simulate_distribution(
        spec, model, args.samples, args.seed, t, a_list=args.a_list, threads=args.threads, return_samples=True
    )
    result = rep.as_dict()
    result["params"] = _params(args.x, k)
    result["ks_critical_1pct"] = clt.ks_critical_value(args.samples)
    if args.split:
        result["split"] = clt.chatterjee_split(spec, model, args.samples, args.seed, t, threads=args.threads).as_dict()
    if args.q is not None:
        pattern = parse_pattern(args.eps_pattern, args.q)
        result["conditional_finite"] = moments.conditional_second_moment_finite(
            args.x, k, args.q, pattern, t, selector=args.selector
        )
    if args.raw_csv:
        write_atomic(args.raw_csv, "index,m_tilde\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(z.tolist())))
    return _config(args, k=k, model=model.spec()), result, t.limit, args.seed, False


def cmd_mcleish(args):
    k = resolve_k(args)
    t = _table(args, args.x)
    rep = clt.mcleish_quantities(args.x, k, args.model, args.thresholds, args.samples, args.seed, t, threads=args.threads)
    result = rep.as_dict()
    if rep.cross_term_exact is not None:
        result["cross_term_z"] = (rep.cross_term_estimate - rep.cross_term_exact) / rep.cross_term_se
    return _config(args, k=k), result, t.limit, args.seed, False


def cmd_ntcheck(args):
    t = _table(args, args.x)
    checks = ntcheck.run_all(t, args.x)
    result: dict = {"checks": [c.as_dict() for c in checks], "shipped_constants": ntcheck.SHIPPED}
    g1 = ntcheck.G_function(1.0)
    result["G1"] = {"value": g1.value, "half_width": g1.half_width, "six_over_pi_squared": 6 / math.pi**2}
    if args.k is not None:
        result["params"] = _params(args.x, args.k)
        result["local_ratio"] = ntcheck.local_ratio_check(args.x, args.k, t)
        result["excluded_prime_density"] = ntcheck.excluded_prime_density_check(args.x, args.k, args.exclude, t)
    failed = [c.name for c in checks if not c.passed]
    result["failed"] = failed
    return _config(args), result, t.limit, None, bool(failed)


def cmd_sieve(args):
    t = _table(args, args.x)
    om = t.omega[: args.x + 1]
    rows = []
    for k in range(0, int(om.max()) + 1):
        rows.append(
            {
                "k": k,
                "omega_eq_k": count(CountQuery(args.x, k, "omega"), t),
                "squarefree_omega_eq_k": count(CountQuery(args.x, k, "squarefree"), t),
            }
        )
    result = {
        "rows": rows,
        "pi_x": t.pi(args.x),
        "squarefree": count(CountQuery(args.x, None, "at_most"), t),
    }
    if args.k is not None:
        result["params"] = _params(args.x, args.k)
    return _config(args), result, t.limit, None, False


COMMANDS = {
    "table1": cmd_table1,
    "moments": cmd_moments,
    "simulate": cmd_simulate,
    "mcleish": cmd_mcleish,
    "ntcheck": cmd_ntcheck,
    "sieve": cmd_sieve,
}


def main(argv: Sequence[str] | None = None) -> int:
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        config, result, limit, seed, failed = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rmflab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceBudgetExceeded as exc:
        print(f"rmflab: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (RMFError, ModelInvalid) as exc:
        print(f"rmflab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    elapsed = time.perf_counter() - start
    doc = envelope(args.command, config, result, table_limit=limit, seed=seed)
    if args.timing:
        doc["wall_clock_seconds"] = elapsed
    text = render(doc, args.format)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    if args.strict and failed:
        print(f"rmflab: strict check failed for {args.command}", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
