"""Unimodular S-lattices ``g Z_S^d`` and counting in product regions.

An :class:`SLattice` stores ``g = (g_inf, g_p1, ...)``: an exact rational
real basis with determinant 1 and, for every finite prime, a matrix mod
``p^m`` invertible mod ``p``.  Lattice points are ``(g_inf z, g_p z, ...)``
for ``z in Z_S^d``; enumeration returns the coefficient vectors ``z``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping, Sequence

import numpy as np

from .linalg import frac_det, frac_inv, lll_reduce, matvec, smith_diagonal
from .qs_core import (
    CapacityExceeded,
    InsufficientPrecision,
    PlaceSet,
    as_fraction,
    fraction_str,
    split_ns_ps,
    unit_residue,
    valuation,
)
from .regions import PadicSet, ProductRegion, Region, UnionRegion

DEFAULT_CAP = 50_000_000
_CHUNK = 200_000


class UnsupportedDimension(ValueError):
    pass


class RankDeficient(ValueError):
    pass


@dataclass(frozen=True)
class PadicComponent:
    p: int
    m: int
    matrix: tuple

    def __post_init__(self):
        mod = self.p**self.m
        M = tuple(tuple(int(x) % mod for x in row) for row in self.matrix)
        object.__setattr__(self, "matrix", M)
        det = frac_det(M)
        if int(det) % self.p == 0:
            raise ValueError(f"p-adic component is not invertible mod {self.p}")

    @classmethod
    def identity(cls, p: int, d: int, m: int = 8) -> "PadicComponent":
        return cls(p, m, tuple(tuple(int(i == j) for j in range(d)) for i in range(d)))

    def apply(self, residues: Sequence[int]) -> tuple:
        mod = self.p**self.m
        return tuple(sum(a * x for a, x in zip(row, residues)) % mod for row in self.matrix)

    def reduce(self, m: int) -> "PadicComponent":
        if m > self.m:
            raise InsufficientPrecision(f"component known mod {self.p}^{self.m}, need {m}")
        return PadicComponent(self.p, m, self.matrix)


@dataclass(frozen=True)
class SLattice:
    d: int
    real_basis: tuple
    padic: tuple = ()  # tuple[PadicComponent], sorted by prime

    def __post_init__(self):
        B = tuple(tuple(as_fraction(x) for x in row) for row in self.real_basis)
        if len(B) != self.d or any(len(r) != self.d for r in B):
            raise ValueError("real basis must be d x d")
        if frac_det(B) not in (1, -1):
            raise ValueError("real basis must have determinant +-1")
        object.__setattr__(self, "real_basis", B)
        pad = tuple(sorted(self.padic, key=lambda c: c.p))
        if any(len(c.matrix) != self.d for c in pad):
            raise ValueError("p-adic component has wrong size")
        object.__setattr__(self, "padic", pad)
        object.__setattr__(self, "_inv", frac_inv(B))
        object.__setattr__(self, "_float", np.array([[float(x) for x in row] for row in B]))

    @classmethod
    def standard(cls, d: int, S: PlaceSet | None = None, m: int = 8) -> "SLattice":
        """``Z_S^d``."""
        S = S or PlaceSet()
        eye = tuple(tuple(int(i == j) for j in range(d)) for i in range(d))
        return cls(d, eye, tuple(PadicComponent.identity(p, d, m) for p in S.primes))

    @property
    def primes(self) -> tuple:
        return tuple(c.p for c in self.padic)

    def component(self, p: int) -> PadicComponent:
        for c in self.padic:
            if c.p == p:
                return c
        raise KeyError(p)

    def real_point(self, z) -> tuple:
        return matvec(self.real_basis, [Fraction(t) for t in z])

    def embed(self, z) -> dict:
        """Place-by-place description of ``g z``.

        The real coordinates are exact; at ``p`` the point is reported by its
        norm exponent ``j`` and the residue of its direction ``p^j g_p z``.
        """
        z = [Fraction(t) for t in z]
        out: dict = {"inf": self.real_point(z)}
        for c in self.padic:
            out[c.p] = _padic_profile(z, c)
        return out

    def transformed(self, U) -> "SLattice":
        """``U Lambda`` for a rational ``U`` with ``det U = +-1`` acting at infinity."""
        from .linalg import matmul

        return SLattice(self.d, tuple(tuple(r) for r in matmul(U, self.real_basis)), self.padic)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "real_basis": [[fraction_str(x) for x in row] for row in self.real_basis],
            "padic": [{"p": c.p, "m": c.m, "matrix": [list(r) for r in c.matrix]} for c in self.padic],
        }

    @classmethod
    def from_dict(cls, doc: Mapping, S: PlaceSet | None = None) -> "SLattice":
        d = int(doc["d"])
        basis = doc.get("real_basis")
        if basis is None:
            basis = [[int(i == j) for j in range(d)] for i in range(d)]
        pad = {int(c["p"]): PadicComponent(int(c["p"]), int(c.get("m", 8)), tuple(map(tuple, c["matrix"]))) for c in doc.get("padic", [])}
        if S is not None:
            for p in S.primes:
                pad.setdefault(p, PadicComponent.identity(p, d))
        return cls(d, tuple(tuple(Fraction(x) for x in row) for row in basis), tuple(pad.values()))


def _padic_profile(z, comp: PadicComponent):
    p = comp.p
    val = min((valuation(t, p) for t in z), default=math.inf)
    if val == math.inf:
        return (-math.inf, None)
    scale = Fraction(p) ** (-val)
    # direction of g_p z equals g_p (direction of z) since g_p is in GL_d(Z_p)
    res = tuple(unit_residue(t * scale, p, comp.m) for t in z)
    return (-val, comp.apply(res))


# --------------------------------------------------------------------------
# enumeration


def _grid_scale(region: ProductRegion) -> Fraction | None:
    c = Fraction(1)
    for s in region.padic:
        e = s.max_exponent()
        if e is None:
            return None
        c *= Fraction(s.p) ** (-e)
    return c


def _candidate_bounds(lat: SLattice, region: ProductRegion, c: Fraction) -> list[int]:
    R = region.real.sup_bound()
    return [math.floor(R * sum(abs(x) for x in row) / c) for row in lat._inv]


def _iter_boxes(bounds: Sequence[int]) -> Iterator[np.ndarray]:
    """Integer grid ``prod [-K_i, K_i]`` in chunks of rows."""
    d = len(bounds)
    if d == 1:
        yield np.arange(-bounds[0], bounds[0] + 1, dtype=np.int64)[:, None]
        return
    tail = [np.arange(-K, K + 1, dtype=np.int64) for K in bounds[1:]]
    tail_grid = np.stack(np.meshgrid(*tail, indexing="ij"), axis=-1).reshape(-1, d - 1)
    per = max(1, _CHUNK // max(1, len(tail_grid)))
    firsts = np.arange(-bounds[0], bounds[0] + 1, dtype=np.int64)
    for start in range(0, len(firsts), per):
        block = firsts[start : start + per]
        head = np.repeat(block, len(tail_grid))[:, None]
        yield np.hstack([head, np.tile(tail_grid, (len(block), 1))])


def _real_filter(lat: SLattice, region: ProductRegion, c: Fraction, Y: np.ndarray) -> np.ndarray:
    X = (Y * float(c)) @ lat._float.T
    inside, unc = region.real.classify(X)
    keep = inside & ~unc
    for i in np.nonzero(unc)[0]:
        z = [c * int(t) for t in Y[i]]
        keep[i] = region.real.contains(lat.real_point(z))
    return keep


def _padic_ok(lat: SLattice, region: ProductRegion, z) -> bool:
    for s in region.padic:
        comp = lat.component(s.p)
        if s.m > comp.m and not s.is_norm_only():
            raise InsufficientPrecision(f"region needs precision {s.m} at p={s.p}, lattice has {comp.m}")
        j, direction = _padic_profile(z, comp if s.is_norm_only() else comp.reduce(s.m))
        if not s.member(j, direction if direction is not None else ()):
            return False
    return True


def _padic_trivial(region: ProductRegion) -> bool:
    return all(s.core is not None and not s.shells for s in region.padic)


def _pieces(A: Region) -> tuple:
    return A.pieces


def _check_places(lat: SLattice, region: ProductRegion):
    if region.primes != lat.primes:
        raise ValueError(f"region primes {region.primes} differ from lattice primes {lat.primes}")
    if region.d != lat.d:
        raise ValueError("dimension mismatch")


def _scan_piece(lat: SLattice, region: ProductRegion, cap: int) -> Iterator[tuple[Fraction, np.ndarray]]:
    _check_places(lat, region)
    if region.is_empty:
        return
    c = _grid_scale(region)
    if c is None:
        return
    bounds = _candidate_bounds(lat, region, c)
    total = math.prod(2 * K + 1 for K in bounds)
    if total > cap:
        raise CapacityExceeded(f"{total} candidates exceed the cap {cap}")
    for Y in _iter_boxes(bounds):
        keep = _real_filter(lat, region, c, Y)
        yield c, Y[keep]


def enumerate_points(lat: SLattice, A: Region, cap: int = DEFAULT_CAP) -> list[tuple]:
    """Coefficient vectors ``z in Z_S^d`` with ``g z in A`` (exact, no duplicates)."""
    out = []
    for piece in _pieces(A):
        trivial = _padic_trivial(piece)
        for c, Y in _scan_piece(lat, piece, cap):
            for y in Y:
                z = tuple(c * int(t) for t in y)
                if trivial or _padic_ok(lat, piece, z):
                    out.append(z)
    return out


def count_points(lat: SLattice, A: Region, cap: int = DEFAULT_CAP) -> int:
    """``#(Lambda & A)`` including the origin when it lies in ``A``."""
    total = 0
    for piece in _pieces(A):
        trivial = _padic_trivial(piece)
        for c, Y in _scan_piece(lat, piece, cap):
            if trivial:
                total += len(Y)
            else:
                total += sum(1 for y in Y if _padic_ok(lat, piece, tuple(c * int(t) for t in y)))
    return total


def point_in(lat: SLattice, A: Region, z) -> bool:
    """Whether ``g z`` lies in ``A`` for an S-integral coefficient vector ``z``."""
    z = tuple(Fraction(t) for t in z)
    for piece in _pieces(A):
        _check_places(lat, piece)
        if piece.is_empty:
            continue
        if piece.real.contains(lat.real_point(z)) and _padic_ok(lat, piece, z):
            return True
    return False


def siegel_transform(A: Region, lat: SLattice, k: int = 1, include_zero: bool = False, cap: int = DEFAULT_CAP) -> int:
    """``(sum over lattice points of 1_A)^k``, with or without the origin."""
    if k < 1:
        raise ValueError("k must be positive")
    n = count_points(lat, A, cap)
    if not include_zero and A.contains((0,) * lat.d):
        n -= 1
    return n**k


# --------------------------------------------------------------------------
# alpha function


def _compound(B, j: int) -> list[list[Fraction]]:
    """``j``-th exterior power of ``B`` in the basis ``e_I``, ``I`` increasing."""
    d = len(B)
    idx = list(itertools.combinations(range(d), j))
    return [[frac_det([[B[r][c] for c in J] for r in I]) for J in idx] for I in idx], idx


def _is_decomposable(w, idx, d: int, j: int) -> bool:
    if j in (1, d - 1) or j == d:
        return True
    if d == 4 and j == 2:
        pos = {I: i for i, I in enumerate(idx)}
        a = lambda s, t: w[pos[(s, t)]]  # noqa: E731
        return a(0, 1) * a(2, 3) - a(0, 2) * a(1, 3) + a(0, 3) * a(1, 2) == 0
    raise UnsupportedDimension(f"decomposability test for d={d}, j={j}")


def _min_sup(M, decomposable) -> Fraction:
    """``min ||M w||_sup`` over nonzero integer ``w`` passing ``decomposable``."""
    n = len(M)
    cols = [[M[r][c] for r in range(n)] for c in range(n)]
    red = lll_reduce(cols)  # rows = reduced basis vectors
    Minv = frac_inv(M)
    U = [[sum(Minv[i][k] * v[k] for k in range(n)) for i in range(n)] for v in red]  # integer coords of each
    Bred = [list(col) for col in zip(*red)]
    best = None
    for v, u in zip(red, U):
        if decomposable([int(x) for x in u]):
            s = max(abs(x) for x in v)
            best = s if best is None else min(best, s)
    if best is None:
        best = max(max(abs(x) for x in v) for v in red) * n * 4
    Binv = frac_inv(Bred)
    while True:
        bounds = [math.floor(best * sum(abs(x) for x in row)) for row in Binv]
        total = math.prod(2 * K + 1 for K in bounds)
        if total > DEFAULT_CAP:
            raise CapacityExceeded("short-vector box too large")
        Bf = np.array([[float(x) for x in row] for row in Bred])
        found = None
        for Y in _iter_boxes(bounds):
            X = Y @ Bf.T
            nrm = np.max(np.abs(X), axis=1)
            cand = np.nonzero((nrm <= float(best) * (1 + 1e-9)) & np.any(Y != 0, axis=1))[0]
            for i in cand:
                y = [int(t) for t in Y[i]]
                w = [sum(int(round(U[k][r])) * y[k] for k in range(n)) for r in range(n)]
                if not decomposable(w):
                    continue
                s = max(abs(sum(Bred[r][k] * y[k] for k in range(n))) for r in range(n))
                if found is None or s < found:
                    found = s
        if found is not None and found <= best:
            return found
        best *= 2


def alpha_S(lat: SLattice) -> Fraction:
    """``max_j 1 / min ||w||`` over decomposable ``w`` in the ``j``-th exterior power.

    Finite-place parts lie in ``GL_d(Z_p)``, so only the real basis matters.
    """
    d = lat.d
    if d > 4:
        raise UnsupportedDimension("exact alpha needs d <= 4")
    best = Fraction(1)
    for j in range(1, d):
        M, idx = _compound(lat.real_basis, j)
        lam = _min_sup(M, lambda w, idx=idx, j=j: _is_decomposable(w, idx, d, j))
        best = max(best, 1 / lam)
    return best


# --------------------------------------------------------------------------
# covolumes


@dataclass(frozen=True)
class SublatticeSpec:
    """Row generators in ``Z_S^n`` of a sublattice of ``Z_S^n``."""

    n: int
    generators: tuple = field(default_factory=tuple)

    def __post_init__(self):
        gens = tuple(tuple(as_fraction(x) for x in g) for g in self.generators)
        if any(len(g) != self.n for g in gens):
            raise ValueError("generator length differs from n")
        object.__setattr__(self, "generators", gens)


def covolume(spec: SublatticeSpec, S: PlaceSet) -> Fraction:
    """Index of the ``Z_S``-span of the generators in ``Z_S^n``."""
    rows = []
    for g in spec.generators:
        den = math.lcm(*(x.denominator for x in g)) if g else 1
        if split_ns_ps(den, S)[0] != 1:
            raise ValueError(f"generator {g} is not in Z_S^n")
        rows.append([int(x * den) for x in g])
    diag = smith_diagonal(rows) if rows else []
    if len(diag) < spec.n:
        raise RankDeficient(f"rank {len(diag)} < {spec.n}")
    return Fraction(math.prod(split_ns_ps(e, S)[0] for e in diag))

