"""Reduced matrices, the tuple partition, and truncated moment series.

A reduced class is ``(r, k, q, D, pivots)``: ``D`` is an ``r x k`` matrix
over ``Z_S`` whose pivot columns are ``q e_i``, with zeros to the left of
each pivot, and whose entries become coprime integers after clearing the
(S-unit) denominators.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import mpmath

from .lattices import SublatticeSpec, covolume
from .linalg import gcd_all, hermite_rows, lcm_all, left_kernel, row_echelon, smith_diagonal
from .qs_core import CapacityExceeded, PlaceSet, as_fraction, fraction_str, in_ps, in_zs, ps_elements, split_ns_ps
from .regions import (
    NumericFallback,
    PadicSet,
    ProductRegion,
    Region,
    SupAnnulus,
    SupBall,
    UnionRegion,
    overlap_volume,
)


class InvalidQ(ValueError):
    pass


class UnsupportedK(ValueError):
    pass


class NonBallRegion(ValueError):
    pass


# --------------------------------------------------------------------------
# reduced matrices


@dataclass(frozen=True)
class ReducedMatrixClass:
    r: int
    k: int
    q: int
    D: tuple
    pivots: tuple

    def __post_init__(self):
        object.__setattr__(self, "D", tuple(tuple(as_fraction(x) for x in row) for row in self.D))
        object.__setattr__(self, "pivots", tuple(self.pivots))

    def clearing(self) -> int:
        """Least ``t`` with ``t D`` integral."""
        return lcm_all(x.denominator for row in self.D for x in row)

    def cleared(self) -> list[list[int]]:
        t = self.clearing()
        return [[int(x * t) for x in row] for row in self.D]

    def height(self) -> int:
        return max(abs(x) for row in self.cleared() for x in row)

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "k": self.k,
            "q": self.q,
            "pivots": list(self.pivots),
            "D": [[fraction_str(x) for x in row] for row in self.D],
        }


def _check_q(q: int, S: PlaceSet):
    if not isinstance(q, int) or q < 1 or split_ns_ps(q, S)[1] != 1:
        raise InvalidQ(f"q={q} is not in N_S for S={S}")


def is_reduced(D: Sequence[Sequence], S: PlaceSet) -> bool:
    entries = [as_fraction(x) for row in D for x in row]
    if not all(in_zs(x, S) for x in entries):
        return False
    t = lcm_all(x.denominator for x in entries)
    return gcd_all(int(x * t) for x in entries) == 1


def echelon_pivots(D: Sequence[Sequence]) -> tuple:
    """First nonzero column of each row."""
    out = []
    for row in D:
        j = next((j for j, x in enumerate(row) if x != 0), None)
        out.append(j)
    return tuple(out)


def in_D_rq(D: Sequence[Sequence], q: int, S: PlaceSet, pivots: Sequence[int] | None = None) -> bool:
    """Membership of ``D`` in the reduced set for ``(r, q)``."""
    if q < 1 or split_ns_ps(q, S)[1] != 1:
        return False
    r = len(D)
    k = len(D[0]) if r else 0
    piv = echelon_pivots(D) if pivots is None else tuple(pivots)
    if any(j is None for j in piv) or list(piv) != sorted(set(piv)) or len(piv) != r:
        return False
    for i in range(r):
        for i2, j in enumerate(piv):
            if as_fraction(D[i][j]) != (q if i == i2 else 0):
                return False
        if any(as_fraction(D[i][j]) != 0 for j in range(piv[i])):
            return False
    return k >= r and is_reduced(D, S)


def enumerate_reduced(
    r: int,
    k: int,
    q: int,
    H: int,
    S: PlaceSet,
    nontrivial_only: bool = False,
) -> list[ReducedMatrixClass]:
    """All ``D`` for ``(r, q)`` whose cleared entries are bounded by ``H``.

    The clearing denominator ``L`` ranges over ``P_S`` with ``L q <= H``
    (a pivot entry of the cleared matrix is ``L q``).
    """
    _check_q(q, S)
    if not 1 <= r <= k:
        raise ValueError("need 1 <= r <= k")
    if H < q:
        return []
    out = []
    for piv in itertools.combinations(range(k), r):
        free = [(i, j) for i in range(r) for j in range(piv[i] + 1, k) if j not in piv]
        for L in ps_elements(S, H // q):
            for nums in itertools.product(range(-H, H + 1), repeat=len(free)):
                if lcm_all(Fraction(n, L).denominator for n in nums) != L:
                    continue
                if gcd_all(list(nums) + [L * q]) != 1:
                    continue
                D = [[Fraction(0)] * k for _ in range(r)]
                for i, j in enumerate(piv):
                    D[i][j] = Fraction(q)
                for (i, j), n in zip(free, nums):
                    D[i][j] = Fraction(n, L)
                if nontrivial_only and any(all(D[i][j] == 0 for i in range(r)) for j in range(k)):
                    continue
                out.append(ReducedMatrixClass(r, k, q, tuple(map(tuple, D)), piv))
    return out


def count_NDq(D: ReducedMatrixClass | Sequence[Sequence], q: int | None = None, S: PlaceSet | None = None, cap: int = 200_000) -> int:
    """``#{x in {0..q-1}^r : x D / q in Z_S^k}``."""
    if isinstance(D, ReducedMatrixClass):
        q = D.q if q is None else q
        D = D.D
    S = S or PlaceSet()
    Dm = [[as_fraction(x) for x in row] for row in D]
    r = len(Dm)
    if q**r <= cap:
        return count_NDq_enum(Dm, q, S)
    return count_NDq_snf(Dm, q)


def count_NDq_enum(D, q: int, S: PlaceSet) -> int:
    r = len(D)
    k = len(D[0])
    n = 0
    for x in itertools.product(range(q), repeat=r):
        if all(in_zs(Fraction(sum(x[i] * D[i][j] for i in range(r)), q), S) for j in range(k)):
            n += 1
    return n


def count_NDq_snf(D, q: int) -> int:
    """``prod gcd(e_i, q)`` over the elementary divisors of the cleared matrix.

    Valid when ``q`` is coprime to the S-primes: clearing by an S-unit does
    not change the count.
    """
    t = lcm_all(as_fraction(x).denominator for row in D for x in row)
    rows = [[int(as_fraction(x) * t) for x in row] for row in D]
    eps = smith_diagonal(rows)
    eps = eps + [0] * (len(rows) - len(eps))
    return math.prod(math.gcd(e, q) for e in eps)


def psi_lattice(D: ReducedMatrixClass, d: int) -> SublatticeSpec:
    """Generators of the tuples ``(v_1..v_r)`` with ``(1/q)(v) D`` integral.

    Coordinates are flattened as ``v_1[0..d-1], v_2[0..d-1], ...``.
    """
    q, r = D.q, D.r
    cleared = D.cleared()
    k = len(cleared[0])
    stacked = cleared + [[q if i == j else 0 for j in range(k)] for i in range(k)]
    kernel = left_kernel(stacked)
    X = hermite_rows([row[:r] for row in kernel])
    gens = []
    for x in X:
        for c in range(d):
            g = [0] * (d * r)
            for i in range(r):
                g[i * d + c] = x[i]
            gens.append(tuple(g))
    return SublatticeSpec(d * r, tuple(gens))


@dataclass
class IdentityReport:
    """Outcome of a batch of exact identity checks."""

    checked: int = 0
    failures: int = 0
    examples: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.failures == 0

    def to_dict(self) -> dict:
        return {"checked": self.checked, "failures": self.failures, "passed": self.passed, "examples": self.examples[:5]}


def covolume_check(d: int, r_max: int, k_max: int, q_max: int, H: int, S: PlaceSet | None = None) -> IdentityReport:
    """``covol(Psi(q, D)) * N(D, q)^d == q^(d r)`` for every enumerated class."""
    S = S or PlaceSet()
    rep = IdentityReport()
    for k in range(1, k_max + 1):
        for r in range(1, min(r_max, k) + 1):
            for q in range(1, q_max + 1):
                if split_ns_ps(q, S)[1] != 1:
                    continue
                for cls in enumerate_reduced(r, k, q, H, S):
                    rep.checked += 1
                    N = count_NDq(cls, S=S)
                    cov = covolume(psi_lattice(cls, d), S)
                    if cov * N**d != Fraction(q) ** (d * r):
                        rep.failures += 1
                        rep.examples.append({**cls.to_dict(), "covolume": fraction_str(cov), "N": N})
    return rep


def elementary_divisor_check(n: int, seed: int = 0, entry_bound: int = 9, q_max: int = 12) -> IdentityReport:
    """Enumerated ``N(D, q)`` against ``prod gcd(e_i, q)`` on random integer matrices."""
    import random

    rnd = random.Random(seed)
    rep = IdentityReport()
    S = PlaceSet()
    for _ in range(n):
        r = rnd.randint(1, 3)
        k = rnd.randint(r, 4)
        q = rnd.randint(1, q_max)
        D = [[rnd.randint(-entry_bound, entry_bound) for _ in range(k)] for _ in range(r)]
        rep.checked += 1
        a, b = count_NDq_enum(D, q, S), count_NDq_snf(D, q)
        if a != b:
            rep.failures += 1
            rep.examples.append({"D": D, "q": q, "enumerated": a, "divisors": b})
    return rep


# --------------------------------------------------------------------------
# tuple partition


@dataclass(frozen=True)
class TupleClassification:
    rank: int
    k: int
    q: int = 1
    D: tuple = ()
    pivots: tuple = ()
    witnesses: tuple = ()

    @property
    def kind(self) -> str:
        if self.rank == 0:
            return "origin"
        return "full" if self.rank == self.k else "reduced"

    def key(self) -> tuple:
        return (self.rank, self.q, self.D, self.witnesses)

    def reconstruct(self) -> tuple:
        if self.rank == 0:
            return None
        d = len(self.witnesses[0])
        out = []
        for j in range(self.k):
            out.append(
                tuple(
                    sum(self.witnesses[i][c] * self.D[i][j] for i in range(self.rank)) / self.q
                    for c in range(d)
                )
            )
        return tuple(out)


def classify_tuple(vs: Sequence[Sequence], S: PlaceSet | None = None) -> TupleClassification:
    """Class of a tuple of vectors in ``Z_S^d`` (greedy pivots, least ``q``)."""
    S = S or PlaceSet()
    vs = [tuple(as_fraction(x) for x in v) for v in vs]
    k = len(vs)
    if not all(in_zs(x, S) for v in vs for x in v):
        raise ValueError("tuple entries must lie in Z_S")
    pivots: list[int] = []
    for j, v in enumerate(vs):
        if _rank([vs[i] for i in pivots] + [v]) > len(pivots):
            pivots.append(j)
    r = len(pivots)
    if r == 0:
        return TupleClassification(0, k)
    W = [vs[j] for j in pivots]
    if r == k:
        ident = tuple(tuple(Fraction(int(i == j)) for j in range(k)) for i in range(k))
        return TupleClassification(k, k, 1, ident, tuple(range(k)), tuple(W))
    C = _coordinates(W, vs)
    den = lcm_all(x.denominator for row in C for x in row)
    q = split_ns_ps(den, S)[0]
    D = tuple(tuple(q * x for x in row) for row in C)
    return TupleClassification(r, k, q, D, tuple(pivots), tuple(W))


def _rank(vectors) -> int:
    if not vectors:
        return 0
    return len(row_echelon(vectors)[1])


def _coordinates(W, vs) -> list[list[Fraction]]:
    """``C`` (``r x k``) with ``sum_i C[i][j] W[i] = vs[j]``."""
    r = len(W)
    d = len(W[0])
    # solve the d x r system column by column via the echelon form of [W^T | V^T]
    aug = [[W[i][c] for i in range(r)] + [v[c] for v in vs] for c in range(d)]
    E, piv = row_echelon(aug)
    if piv[:r] != list(range(r)):
        raise ArithmeticError("witnesses are not independent")
    return [[E[i][r + j] for j in range(len(vs))] for i in range(r)]


@dataclass
class PartitionReport:
    total: int = 0
    classes: int = 0
    collisions: int = 0
    failures: int = 0
    by_rank: dict = field(default_factory=dict)
    examples: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.collisions == 0 and self.failures == 0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "classes": self.classes,
            "collisions": self.collisions,
            "failures": self.failures,
            "by_rank": {str(k): v for k, v in sorted(self.by_rank.items())},
            "passed": self.passed,
            "examples": self.examples[:5],
        }


def _check_classification(cls: TupleClassification, vs, S: PlaceSet) -> Optional[str]:
    if cls.rank == 0:
        return None if all(x == 0 for v in vs for x in v) else "origin class for a nonzero tuple"
    if cls.reconstruct() != tuple(vs):
        return "reconstruction mismatch"
    if cls.rank == cls.k:
        return None if _rank(list(cls.witnesses)) == cls.k else "full class without full rank"
    if not in_D_rq(cls.D, cls.q, S, cls.pivots):
        return "D not in the reduced set"
    if echelon_pivots(cls.D) != cls.pivots:
        return "pivots do not match the echelon pattern"
    if _rank(list(cls.witnesses)) != cls.rank:
        return "witnesses dependent"
    if not all(in_zs(x, S) for w in cls.witnesses for x in w):
        return "witness outside Z_S"
    return None


def verify_partition(
    d: int,
    k: int,
    B: int,
    S: PlaceSet | None = None,
    denominators: Iterable[int] = (1,),
    cap: int = 2_000_000,
) -> PartitionReport:
    """Classify every ``k``-tuple from the grid ``{a/t : |a/t| <= B, t in denominators}^d``."""
    S = S or PlaceSet()
    values = sorted({Fraction(a, t) for t in denominators for a in range(-B * t, B * t + 1)})
    vectors = list(itertools.product(values, repeat=d))
    total = len(vectors) ** k
    if total > cap:
        raise CapacityExceeded(f"{total} tuples exceed the cap {cap}")
    rep = PartitionReport()
    seen: dict = {}
    for vs in itertools.product(vectors, repeat=k):
        rep.total += 1
        cls = classify_tuple(vs, S)
        rep.by_rank[cls.rank] = rep.by_rank.get(cls.rank, 0) + 1
        err = _check_classification(cls, vs, S)
        if err:
            rep.failures += 1
            rep.examples.append({"tuple": [[fraction_str(x) for x in v] for v in vs], "error": err})
        key = cls.key()
        if key in seen and seen[key] != vs:
            rep.collisions += 1
        seen[key] = vs
    rep.classes = len({(c[0], c[1], c[2]) for c in seen})
    return rep


# --------------------------------------------------------------------------
# moment series


@dataclass
class SeriesResult:
    k: int
    d: int
    main_term: Fraction
    diagonal: Fraction
    correction: Fraction
    tail_bound: Optional[Fraction]
    H: Optional[int] = None
    M: Optional[int] = None
    certified: bool = True
    terms: int = 0

    @property
    def value(self) -> Fraction:
        return self.main_term + self.diagonal + self.correction

    @property
    def upper(self) -> Optional[Fraction]:
        return None if self.tail_bound is None else self.value + self.tail_bound

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "main_term": fraction_str(self.main_term),
            "diagonal": fraction_str(self.diagonal),
            "correction": fraction_str(self.correction),
            "value": fraction_str(self.value),
            "value_float": float(self.value),
            "tail_bound": None if self.tail_bound is None else fraction_str(self.tail_bound),
            "certified": self.certified,
            "H": self.H,
            "M": self.M,
            "terms": self.terms,
        }


def coprime_pairs(n: int):
    """Pairs ``(m, w)`` with ``m >= 1``, ``w != 0``, ``gcd(m, w) = 1`` and ``max(m, |w|) = n``."""
    for w in range(-n, n + 1):
        if w and math.gcd(n, w) == 1:
            yield n, w
    for m in range(1, n):
        if math.gcd(m, n) == 1:
            yield m, n
            yield m, -n


def enclosing_ball(A: Region) -> ProductRegion:
    """A centred ball product containing ``A``, with an exactly known volume."""
    pieces = A.pieces
    d = A.d
    R = max(pc.real.sup_bound() for pc in pieces)
    pad = []
    for p in A.primes:
        e = max(pc.factor(p).max_exponent() for pc in pieces)
        pad.append(PadicSet.ball(p, d, e))
    return ProductRegion(d, SupBall(d, R), tuple(pad))


def second_moment_tail(A: Region, d: int, M: int) -> Fraction:
    """Bound on the terms with ``max(q p, |w|) > M``.

    Each such term is at most ``mu(B)/n^d`` for an enclosing ball product
    ``B``, and there are at most ``4n`` of them at level ``n``.
    """
    if d < 3:
        raise ValueError("tail bound needs d >= 3")
    if A.is_empty:
        return Fraction(0)
    vol = enclosing_ball(A).volume()
    return 4 * vol / ((d - 2) * Fraction(M) ** (d - 2))


def moment_series(
    A: Region,
    k: int,
    d: int,
    S: PlaceSet,
    H: int | None = None,
    M: int = 64,
    include_diagonal: bool = False,
) -> SeriesResult:
    """Truncated mean of ``f~^k`` for ``f = 1_A`` (nonzero-vector version).

    ``k = 2`` sums the exact overlaps ``mu(A(q) & A(w/p))`` over
    ``max(q p, |w|) <= M`` and adds a certified tail.  ``k >= 3`` sums the
    reduced classes with all columns nonzero up to height ``H`` for ball
    products; that mode reports no certified tail.
    """
    if d < 2 or not 1 <= k <= d - 1:
        raise UnsupportedK(f"need 1 <= k <= d-1, got k={k}, d={d}")
    if A.d != d:
        raise ValueError("region dimension differs from d")
    if tuple(S.primes) != tuple(A.primes) and not A.is_empty:
        raise ValueError("region and place set disagree")
    vol = A.volume()
    diag = Fraction(int(A.contains((0,) * d))) if include_diagonal else Fraction(0)
    if k == 1:
        return SeriesResult(1, d, vol, diag, Fraction(0), Fraction(0))
    if A.is_empty:
        return SeriesResult(k, d, Fraction(0), Fraction(0), Fraction(0), Fraction(0), H, M)
    if k == 2:
        total = Fraction(0)
        terms = 0
        for n in range(1, M + 1):
            for m, w in coprime_pairs(n):
                q, pp = split_ns_ps(m, S)
                total += overlap_volume(A, q, Fraction(w, pp))
                terms += 1
        tail = second_moment_tail(A, d, M) if d >= 3 else None
        return SeriesResult(2, d, vol**2, diag, total, tail, None, M, tail is not None, terms)
    ball = _as_ball_product(A)
    if H is None:
        raise ValueError("k >= 3 needs a height H")
    total = Fraction(0)
    terms = 0
    for r in range(1, k):
        for q in range(1, H + 1):
            if split_ns_ps(q, S)[1] != 1:
                continue
            for cls in enumerate_reduced(r, k, q, H, S, nontrivial_only=True):
                N = count_NDq(cls, S=S)
                total += Fraction(N**d, q ** (d * r)) * class_integral(cls, ball, S)
                terms += 1
    main = vol**k
    return SeriesResult(k, d, main, diag, total, None, H, None, False, terms)


def _as_ball_product(A: Region) -> ProductRegion:
    pieces = A.pieces
    if len(pieces) != 1:
        raise NonBallRegion("k >= 3 mode needs a single ball product")
    pc = pieces[0]
    if not (isinstance(pc.real, SupAnnulus) and pc.real.inner == 0):
        raise NonBallRegion("real factor must be a centred sup ball")
    if not all(s.core is not None and not s.shells for s in pc.padic):
        raise NonBallRegion("p-adic factors must be balls")
    return pc


def class_integral(cls: ReducedMatrixClass, ball: ProductRegion, S: PlaceSet) -> Fraction:
    """``int prod_j 1_A((1/q) sum_i v_i D_ij) dv`` for a centred ball product ``A``.

    A sup-norm ball product factors over coordinates, so the integral is
    ``I^d`` with ``I`` a one-coordinate integral over ``Q_S^r``.
    """
    d = ball.d
    real = ball.real
    if real.scale_d != 1:
        raise NonBallRegion("real radius must be rational (scale 1)")
    R = real.outer
    cols = [[cls.D[i][j] / cls.q for i in range(cls.r)] for j in range(cls.k)]
    I = _polytope_volume(cols, R)
    cleared = cls.cleared()
    L = cls.clearing()
    eps = smith_diagonal(cleared)
    for s in ball.padic:
        p, b = s.p, s.core
        vL = _vp(L, p)
        deficit = sum(max(0, vL - _vp(e, p)) for e in eps)
        I *= Fraction(p) ** (b * cls.r) / Fraction(p) ** deficit
    return I**d


def _vp(n: int, p: int) -> int:
    n = abs(n)
    v = 0
    while n and n % p == 0:
        n //= p
        v += 1
    return v


def _polytope_volume(cols, R: Fraction) -> Fraction:
    """Volume of ``{x in R^r : |<x, c_j>| <= R for all j}`` for ``r`` in ``{1, 2}``."""
    r = len(cols[0])
    if r == 1:
        return 2 * R / max(abs(c[0]) for c in cols)
    if r == 2:
        return _polygon_area([(c[0], c[1]) for c in cols if any(c)], R)
    raise UnsupportedK("exact class integrals implemented for r <= 2")


def _polygon_area(normals, R: Fraction) -> Fraction:
    # vertices: pairwise intersections of the 2 * len(normals) lines that satisfy all constraints
    lines = []
    for a, b in normals:
        lines.append((a, b, R))
        lines.append((-a, -b, R))
    verts = set()
    for (a1, b1, c1), (a2, b2, c2) in itertools.combinations(lines, 2):
        det = a1 * b2 - a2 * b1
        if det == 0:
            continue
        x = (c1 * b2 - c2 * b1) / det
        y = (a1 * c2 - a2 * c1) / det
        if all(a * x + b * y <= c for a, b, c in lines):
            verts.add((x, y))
    if len(verts) < 3:
        raise ValueError("unbounded or degenerate polygon")
    cx = sum(v[0] for v in verts) / len(verts)
    cy = sum(v[1] for v in verts) / len(verts)
    ordered = sorted(verts, key=lambda v: math.atan2(float(v[1] - cy), float(v[0] - cx)))
    area = Fraction(0)
    for (x1, y1), (x2, y2) in zip(ordered, ordered[1:] + ordered[:1]):
        area += x1 * y2 - x2 * y1
    return abs(area) / 2


# --------------------------------------------------------------------------
# totient / zeta


def totients(n: int) -> list[int]:
    phi = list(range(n + 1))
    for i in range(2, n + 1):
        if phi[i] == i:
            for j in range(i, n + 1, i):
                phi[j] -= phi[j] // i
    return phi


@dataclass
class TotientZeta:
    d: int
    Q: int
    partial: Fraction
    target: mpmath.mpf
    tail_bound: Fraction

    @property
    def gap(self) -> mpmath.mpf:
        return self.target - mpmath.mpf(self.partial.numerator) / self.partial.denominator

    def within_bound(self) -> bool:
        bound = mpmath.mpf(self.tail_bound.numerator) / self.tail_bound.denominator
        return bool(0 <= self.gap <= bound)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "Q": self.Q,
            "partial": fraction_str(self.partial) if self.Q <= 50 else None,
            "partial_float": float(self.partial),
            "target": mpmath.nstr(self.target, 20),
            "gap": mpmath.nstr(self.gap, 10),
            "tail_bound": fraction_str(self.tail_bound),
            "within_bound": self.within_bound(),
        }


def totient_zeta(d: int, Q: int, dps: int = 30) -> TotientZeta:
    """``sum_{q <= Q} phi(q)/q^d`` exactly, against ``zeta(d-1)/zeta(d)``."""
    if d < 3:
        raise ValueError("need d >= 3")
    phi = totients(Q)
    # common denominator (Q!)^d would be wasteful; accumulate integer numerators over lcm^d
    L = lcm_all(range(1, Q + 1))
    num = sum(phi[q] * (L // q) ** d for q in range(1, Q + 1))
    partial = Fraction(num, L**d)
    with mpmath.workdps(dps):
        target = mpmath.zeta(d - 1) / mpmath.zeta(d)
    tail = Fraction(1, (d - 2) * Q ** (d - 2))
    return TotientZeta(d, Q, partial, target, tail)


def zeta_constant(d: int, dps: int = 30) -> mpmath.mpf:
    """``4 zeta(d-1)/zeta(d)``."""
    with mpmath.workdps(dps):
        return 4 * mpmath.zeta(d - 1) / mpmath.zeta(d)


def ball_second_moment(vol: Fraction, d: int, M: int) -> Fraction:
    """Closed form of the truncated correction for a centred ball product."""
    phi = totients(M)
    s = Fraction(2)
    for n in range(2, M + 1):
        s += Fraction(4 * phi[n], n**d)
    return vol * s
