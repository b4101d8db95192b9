"""Command-line entry point: ``srogers <command> [options]``.

Every command prints one JSON record holding the resolved configuration,
the result and a verdict.  Exit status: 0 when all checks pass, 1 when a
check fails, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .experiments import (
    QuadraticFormS,
    SInterval,
    dyadic_stats,
    epsilon_min_search,
    gauss_star_scan,
    oppenheim_haar,
    oppenheim_scan,
    variance_family,
)
from .lattices import DEFAULT_CAP, SLattice
from .qs_core import CapacityExceeded, InsufficientPrecision, PlaceSet, fraction_str
from .regions import Box, ProductRegion, RadiusVector, SupBall, region_from_dict
from .rogers import (
    count_NDq,
    covolume_check,
    elementary_divisor_check,
    enumerate_reduced,
    moment_series,
    psi_lattice,
    totient_zeta,
    verify_partition,
)
from .lattices import covolume
from .sampling import SamplerConfig, batch_rng, empty_probability, mc_moment, sample_lattice, sample_real_lattice


class UsageError(ValueError):
    """Invalid configuration; maps to exit status 2."""


# --------------------------------------------------------------------------
# parsing helpers


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"not a rational number: {text!r}") from exc


def _grid(text: str) -> list[Fraction]:
    """``"10,20,40"`` or ``"start:stop:step"`` (stop included)."""
    if ":" in text:
        parts = [_fraction(t) for t in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError(f"bad grid {text!r}; use start:stop:step")
        a, b, s = parts
        out = []
        while a <= b:
            out.append(a)
            a += s
        return out
    return [_fraction(t) for t in text.split(",") if t.strip()]


def _exponents(text: str | None) -> dict:
    """``"3:1,5:2"`` -> ``{3: 1, 5: 2}``."""
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        p, _, e = item.partition(":")
        try:
            out[int(p)] = int(e)
        except ValueError as exc:
            raise UsageError(f"bad exponent item {item!r}; use p:e") from exc
    return out


def _radius_grid(args, S: PlaceSet) -> list[RadiusVector]:
    t = _exponents(args.t)
    extra = set(t) - set(S.primes)
    if extra:
        raise UsageError(f"exponents given for primes {sorted(extra)} outside S")
    grid = _grid(args.T)
    if not grid or min(grid) <= 0:
        raise UsageError("radius grid must be nonempty and positive")
    return [RadiusVector(T, t) for T in grid]


def _load_json(path: str | None):
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _place_set(args) -> PlaceSet:
    try:
        return PlaceSet.parse(args.S)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _region(args, S: PlaceSet, default):
    doc = _load_json(args.region)
    if doc is None:
        return default
    try:
        return region_from_dict(doc, args.d, S)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad region document: {exc}") from exc


def _lattice(args, S: PlaceSet) -> SLattice:
    if args.lattice and args.haar_lattice:
        raise UsageError("give either --lattice or --haar-lattice")
    if args.haar_lattice:
        return sample_lattice(SamplerConfig(d=args.d, seed=args.seed, S=S), batch_rng(args.seed, 0))
    doc = _load_json(args.lattice)
    if doc is None:
        return SLattice.standard(args.d, S)
    try:
        lat = SLattice.from_dict(doc, S)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad lattice document: {exc}") from exc
    if lat.d != args.d:
        raise UsageError("lattice dimension differs from --d")
    return lat


def _form(args, S: PlaceSet) -> QuadraticFormS:
    doc = _load_json(args.form)
    try:
        if doc is None:
            M = [[int(i == j) * (1 if i < args.d - 1 else -1) for j in range(args.d)] for i in range(args.d)]
            return QuadraticFormS.diagonal_embedding(M, S)
        form = QuadraticFormS.from_dict(doc, S)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad form: {exc}") from exc
    if form.d != args.d:
        raise UsageError("form dimension differs from --d")
    return form


# --------------------------------------------------------------------------
# commands; each returns (result dict, passed, csv rows or None)


def cmd_verify_partition(args):
    S = _place_set(args)
    dens = [int(t) for t in args.denominators.split(",")]
    rep = verify_partition(args.d, args.k, args.B, S, dens, cap=args.cap)
    return rep.to_dict(), rep.passed, None


def cmd_covol_check(args):
    S = _place_set(args)
    rep = covolume_check(args.d, args.r_max, args.k_max, args.q_max, args.height, S)
    out = {"covolume": rep.to_dict()}
    ok = rep.passed
    if args.divisor_check:
        div = elementary_divisor_check(args.divisor_check, args.seed)
        out["elementary_divisors"] = div.to_dict()
        ok = ok and div.passed
    return out, ok, None


def cmd_enumerate_d(args):
    S = _place_set(args)
    classes = enumerate_reduced(args.r, args.k, args.q, args.height, S, nontrivial_only=args.nontrivial)
    rows = []
    for cls in classes:
        N = count_NDq(cls, S=S)
        cov = covolume(psi_lattice(cls, args.d), S)
        rows.append(
            {
                "D": ";".join(",".join(fraction_str(x) for x in row) for row in cls.D),
                "pivots": ",".join(map(str, cls.pivots)),
                "N": N,
                "covolume": fraction_str(cov),
                "identity_holds": cov * N**args.d == Fraction(args.q) ** (args.d * args.r),
            }
        )
    ok = all(r["identity_holds"] for r in rows)
    return {"count": len(rows), "classes": rows}, ok, rows


def _check_k(args):
    if args.d < 2 or not 1 <= args.k <= args.d - 1:
        raise UsageError(f"need 1 <= k <= d-1 (got k={args.k}, d={args.d})")


def cmd_moments(args):
    _check_k(args)
    S = _place_set(args)
    A = _region(args, S, ProductRegion.make(SupBall(args.d, 1), S))
    if args.n == 0:
        series = moment_series(A, args.k, args.d, S, H=args.height, M=args.max_scale)
        return {"series": series.to_dict()}, True, None
    if args.k > 2:
        raise UsageError("Monte-Carlo comparison supports k <= 2; use --n 0 for the series alone")
    if args.k == 2 and args.d < 3:
        raise UsageError("the second moment needs d >= 3")
    est = mc_moment(A, args.k, args.n, SamplerConfig(d=args.d, seed=args.seed, S=S), M=args.max_scale)
    return est.to_dict(), est.agrees(), None


def cmd_empty_prob(args):
    S = _place_set(args)
    A = _region(args, S, ProductRegion.make(SupBall(args.d, 1), S))
    est = empty_probability(A, args.n, SamplerConfig(d=args.d, seed=args.seed, S=S))
    return est.to_dict(), est.passes, None


def cmd_variance_family(args):
    fam = variance_family(args.p, args.d, args.k_max, args.Q, args.verify_Q)
    doc = fam.to_dict()
    return doc, fam.passed, doc["rows"]


def cmd_oppenheim(args):
    S = _place_set(args)
    form = _form(args, S)
    I = SInterval(_fraction(args.lo), _fraction(args.hi), _exponents(args.padic_interval))
    grid = _radius_grid(args, S)
    if args.haar:
        if S.primes:
            raise UsageError("--haar samples the real place only; use S=inf")
        res = oppenheim_haar(form.real, I, grid[-1], args.haar, args.seed, args.rel_err, (args.band_lo, args.band_hi), args.cap)
        rows = [{"sample": i, "ratio": r} for i, r in enumerate(res.ratios)]
        return res.to_dict(), res.passed, rows
    scan = oppenheim_scan(form, I, grid, args.seed, args.rel_err, args.cap, args.fit_fraction)
    doc = scan.to_dict()
    return doc, True, doc["records"]


def cmd_eps_min(args):
    S = _place_set(args)
    form = _form(args, S)
    if args.haar_form:
        g = sample_real_lattice(args.d, batch_rng(args.seed, 0)).basis
        form = form.composed(g)
    if args.eps:
        eps = _grid(args.eps)
    else:
        eps = [Fraction(1, 2**i) for i in range(1, args.eps_count + 1)]
    res = epsilon_min_search(form, _fraction(args.xi), eps, S, args.max_norm, args.fit_fraction)
    doc = res.to_dict()
    return doc, True, doc["records"]


def cmd_gauss_star(args):
    S = _place_set(args)
    A0 = _region(args, S, ProductRegion.make(Box(args.d, half=(Fraction(1, 2),) * args.d), S))
    lat = _lattice(args, S)
    scan = gauss_star_scan(A0, lat, _radius_grid(args, S), args.cap, args.fit_fraction)
    doc = scan.to_dict()
    return doc, True, doc["records"]


def cmd_dyadic(args):
    S = _place_set(args)
    A = _region(args, S, ProductRegion.make(Box(args.d, half=(Fraction(1, 2),) * args.d), S))
    lat = _lattice(args, S)
    res = dyadic_stats(A, lat, args.ell, _fraction(args.delta_prime), _exponents(args.J), args.cap)
    rows = [{"N1": a, "N2": b, "R": fraction_str(r)} for a, b, r in res.remainders]
    return res.to_dict(), res.independent, rows


def cmd_totient_zeta(args):
    if args.d < 3:
        raise UsageError("totient-zeta needs d >= 3")
    res = totient_zeta(args.d, args.Q, args.dps)
    return res.to_dict(), res.within_bound(), None


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, d: int | None = 3, S: bool = True, seed: bool = True):
    if d is not None:
        p.add_argument("--d", type=int, default=d, help="dimension")
    if S:
        p.add_argument("--S", default="inf", help="place set, e.g. inf or inf,3")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="candidate cap for enumerations")
    p.add_argument("--out", help="write the JSON record here instead of stdout")
    p.add_argument("--csv", help="write per-row results as CSV")


def _scan_flags(p: argparse.ArgumentParser, T: str):
    p.add_argument("--T", default=T, help="real radii: a,b,c or start:stop:step")
    p.add_argument("--t", help="p-adic exponents applied to every grid point, e.g. 3:1")
    p.add_argument("--fit-fraction", type=float, default=0.5, help="fraction of the grid used for exponent fits")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srogers", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-partition", help="classify every tuple in a box")
    _common(p, seed=False)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--B", type=int, default=2)
    p.add_argument("--denominators", default="1", help="comma-separated denominators of the grid")
    p.set_defaults(func=cmd_verify_partition, cap=2_000_000)

    p = sub.add_parser("covol-check", help="covolume identity over enumerated classes")
    _common(p)
    p.add_argument("--r-max", type=int, default=2)
    p.add_argument("--k-max", type=int, default=3)
    p.add_argument("--q-max", type=int, default=6)
    p.add_argument("--height", type=int, default=6)
    p.add_argument("--divisor-check", type=int, default=0, metavar="N", help="also test N random integer matrices")
    p.set_defaults(func=cmd_covol_check)

    p = sub.add_parser("enumerate-d", help="list reduced classes with N(D,q) and covolumes")
    _common(p, seed=False)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--height", type=int, default=3)
    p.add_argument("--nontrivial", action="store_true", help="only classes with all columns nonzero")
    p.set_defaults(func=cmd_enumerate_d)

    p = sub.add_parser("moments", help="Monte-Carlo moment against the series")
    _common(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--n", type=int, default=1000, help="number of lattices (0: series only)")
    p.add_argument("--region", help="region JSON (default: unit sup ball)")
    p.add_argument("--height", type=int, default=None, help="height window for k >= 3")
    p.add_argument("--max-scale", type=int, default=200, help="truncation M of the k = 2 series")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("empty-prob", help="frequency of lattices missing a region")
    _common(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--region", help="region JSON (default: unit sup ball)")
    p.set_defaults(func=cmd_empty_prob)

    p = sub.add_parser("variance-family", help="exact volumes and correction bounds for A_k")
    _common(p, S=False, seed=False)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--Q", type=int, default=200, help="largest q in the lower-bound sum")
    p.add_argument("--verify-Q", type=int, default=0, help="compare overlaps with q <= this against the region code")
    p.set_defaults(func=cmd_variance_family)

    p = sub.add_parser("oppenheim", help="N_T and V_T for a quadratic form")
    _common(p)
    _scan_flags(p, "10,20,40,60")
    p.add_argument("--form", help="form JSON {matrix, padic?} (default: x1^2+...-xd^2)")
    p.add_argument("--lo", default="-1/4")
    p.add_argument("--hi", default="1/4")
    p.add_argument("--padic-interval", help="p-adic balls of I, e.g. 3:1 for 3Z_3")
    p.add_argument("--rel-err", type=float, default=0.01, help="target relative error of V_T")
    p.add_argument("--haar", type=int, default=0, metavar="N", help="use N Haar-random forms q o g at the largest T")
    p.add_argument("--band-lo", type=float, default=0.9)
    p.add_argument("--band-hi", type=float, default=1.1)
    p.set_defaults(func=cmd_oppenheim)

    p = sub.add_parser("eps-min", help="least-norm vectors with q(v) near xi")
    _common(p)
    p.add_argument("--form", help="form JSON (default: x1^2+...-xd^2)")
    p.add_argument("--haar-form", action="store_true", help="compose the form with a Haar-random g")
    p.add_argument("--xi", default="0")
    p.add_argument("--eps", help="eps grid (a,b,c or start:stop:step)")
    p.add_argument("--eps-count", type=int, default=8, help="default grid 2^-1 .. 2^-count")
    p.add_argument("--max-norm", type=int, default=60)
    p.add_argument("--fit-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_eps_min)

    p = sub.add_parser("gauss-star", help="lattice counts in dilates of a unit-volume star body")
    _common(p)
    _scan_flags(p, "1:9:2")
    p.add_argument("--region", help="region JSON for A0 (default: centred unit cube)")
    p.add_argument("--lattice", help="lattice JSON (default: Z_S^d)")
    p.add_argument("--haar-lattice", action="store_true", help="sample the lattice from --seed")
    p.set_defaults(func=cmd_gauss_star)

    p = sub.add_parser("dyadic", help="dyadic remainder statistic")
    _common(p)
    p.add_argument("--region", help="region JSON (default: centred unit cube)")
    p.add_argument("--lattice", help="lattice JSON (default: Z_S^d)")
    p.add_argument("--haar-lattice", action="store_true")
    p.add_argument("--ell", type=int, default=4)
    p.add_argument("--delta-prime", default="1/2")
    p.add_argument("--J", help="J^f exponents, e.g. 3:0")
    p.set_defaults(func=cmd_dyadic)

    p = sub.add_parser("totient-zeta", help="partial sums of phi(q)/q^d")
    _common(p, S=False, seed=False)
    p.add_argument("--Q", type=int, default=1000)
    p.add_argument("--dps", type=int, default=30)
    p.set_defaults(func=cmd_totient_zeta)
    return ap


# --------------------------------------------------------------------------
# output


def _plain(x):
    if isinstance(x, Fraction):
        return fraction_str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, np.bool_)):
        return x.item()
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    return str(x)


def _resolved(args) -> dict:
    skip = {"func", "out", "csv"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_csv(path: str, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _plain(v) if not isinstance(v, (int, float, str)) else v for k, v in row.items()})


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        result, passed, rows = args.func(args)
    except UsageError as exc:
        print(f"srogers {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, CapacityExceeded, InsufficientPrecision) as exc:
        print(f"srogers {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    record = {"command": args.command, "config": _resolved(args), "result": result, "verdict": "pass" if passed else "fail"}
    text = json.dumps(record, indent=2, sort_keys=True, default=_plain)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.csv and rows is not None:
        _write_csv(args.csv, rows)
    return 0 if passed else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
