"""Bounded product test sets in ``Q_S^d``.

A :class:`ProductRegion` is ``A_inf x prod_p A_p``; a :class:`UnionRegion`
is a finite disjoint union of those.  Every volume is an exact rational.

Real factors are centred sets in the sup norm.  Each carries a dilation
``lambda`` stored through ``scale_d = lambda^d``, which keeps volumes
rational even when ``lambda`` itself is irrational (dilates with
``|T|^d = N`` need that).

A p-adic factor (:class:`PadicSet`) is described by the norm shells it
meets: a core ball ``{||v||_p <= p^core}`` plus finitely many shells
``{||v||_p = p^j}`` restricted to a set of primitive directions modulo
``p^m``.  The direction of ``v`` with ``||v||_p = p^j`` is ``p^j v``, a
vector in ``Z_p^d - pZ_p^d``.  Balls, shells, residue-refined balls and
star-shaped sets all fit this description.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Optional

import numpy as np

from .qs_core import (
    INF,
    PlaceSet,
    as_fraction,
    exact_root,
    fraction_str,
    int_valuation,
    nth_root_bounds,
    unit_residue,
    vec_valuation,
)

_TOL = 1e-9


class NumericFallback(RuntimeError):
    """Raised when an exact intersection volume is not available."""


def _pow_d(x: Fraction, d: int) -> Fraction:
    return Fraction(x) ** d


# --------------------------------------------------------------------------
# real shapes


@dataclass(frozen=True)
class RealShape:
    d: int
    scale_d: Fraction = Fraction(1)

    def scaled(self, factor_d) -> "RealShape":
        """Dilate by ``lambda`` where ``lambda^d = factor_d``."""
        return replace(self, scale_d=self.scale_d * as_fraction(factor_d))

    def preimage(self, c) -> "RealShape":
        """``{x : c x in self}``."""
        c = abs(as_fraction(c))
        return self.scaled(1 / c**self.d)

    def lam_bounds(self) -> tuple[Fraction, Fraction]:
        return nth_root_bounds(self.scale_d, self.d)

    def volume(self) -> Fraction:
        raise NotImplementedError

    def contains(self, x) -> bool:
        raise NotImplementedError

    def sup_bound(self) -> Fraction:
        raise NotImplementedError

    def classify(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Float membership: ``(inside, uncertain)`` boolean arrays."""
        raise NotImplementedError

    def intersect_volume(self, other: "RealShape") -> Fraction:
        raise NumericFallback(f"no exact intersection for {type(self).__name__} and {type(other).__name__}")

    def to_dict(self) -> dict:
        raise NotImplementedError


def _sup_abs(x) -> Fraction:
    return max((abs(Fraction(t)) for t in x), default=Fraction(0))


@dataclass(frozen=True)
class SupAnnulus(RealShape):
    """``{inner*lam < ||x|| <= outer*lam}``; ``inner = 0`` gives the closed ball."""

    inner: Fraction = Fraction(0)
    outer: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "inner", as_fraction(self.inner))
        object.__setattr__(self, "outer", as_fraction(self.outer))
        object.__setattr__(self, "scale_d", as_fraction(self.scale_d))
        if self.inner < 0 or self.outer <= 0 or self.inner >= self.outer:
            raise ValueError("need 0 <= inner < outer")
        if self.scale_d <= 0:
            raise ValueError("scale must be positive")

    def _outer_d(self) -> Fraction:
        return self.outer**self.d * self.scale_d

    def _inner_d(self) -> Fraction:
        return self.inner**self.d * self.scale_d

    def volume(self) -> Fraction:
        return 2**self.d * (self._outer_d() - self._inner_d())

    def contains(self, x) -> bool:
        n = _sup_abs(x) ** self.d
        if n > self._outer_d():
            return False
        return self.inner == 0 or n > self._inner_d()

    def sup_bound(self) -> Fraction:
        return self.outer * self.lam_bounds()[1]

    def classify(self, X):
        lam = float(self.scale_d) ** (1.0 / self.d)
        n = np.max(np.abs(X), axis=1) if X.size else np.zeros(len(X))
        ro = float(self.outer) * lam
        inside = n <= ro
        unc = np.abs(n - ro) <= _TOL * (1 + ro)
        if self.inner > 0:
            ri = float(self.inner) * lam
            inside &= n > ri
            unc |= np.abs(n - ri) <= _TOL * (1 + ri)
        return inside, unc

    def intersect_volume(self, other):
        if not isinstance(other, SupAnnulus) or other.d != self.d:
            return super().intersect_volume(other)
        hi = min(self._outer_d(), other._outer_d())
        lo = max(self._inner_d(), other._inner_d())
        return 2**self.d * max(Fraction(0), hi - lo)

    def to_dict(self):
        if self.inner == 0:
            out = {"type": "ball", "radius": fraction_str(self.outer)}
        else:
            out = {"type": "annulus", "inner": fraction_str(self.inner), "outer": fraction_str(self.outer)}
        if self.scale_d != 1:
            out["scale_d"] = fraction_str(self.scale_d)
        return out


def SupBall(d: int, radius=1, scale_d=1) -> SupAnnulus:
    return SupAnnulus(d=d, scale_d=Fraction(scale_d), inner=Fraction(0), outer=Fraction(radius))


def Annulus(d: int, inner, outer, scale_d=1) -> SupAnnulus:
    return SupAnnulus(d=d, scale_d=Fraction(scale_d), inner=Fraction(inner), outer=Fraction(outer))


@dataclass(frozen=True)
class Box(RealShape):
    """``{|x_i| <= half_i * lam}``."""

    half: tuple = ()

    def __post_init__(self):
        h = tuple(as_fraction(t) for t in self.half)
        if len(h) != self.d or min(h) <= 0:
            raise ValueError("box needs d positive half-widths")
        object.__setattr__(self, "half", h)
        object.__setattr__(self, "scale_d", as_fraction(self.scale_d))

    def volume(self):
        return math.prod(2 * h for h in self.half) * self.scale_d

    def contains(self, x):
        return all(abs(Fraction(t)) ** self.d <= h**self.d * self.scale_d for t, h in zip(x, self.half))

    def sup_bound(self):
        return max(self.half) * self.lam_bounds()[1]

    def classify(self, X):
        lam = float(self.scale_d) ** (1.0 / self.d)
        H = np.array([float(h) for h in self.half]) * lam
        A = np.abs(X)
        inside = np.all(A <= H, axis=1)
        unc = np.any(np.abs(A - H) <= _TOL * (1 + H), axis=1)
        return inside, unc

    def intersect_volume(self, other):
        if not isinstance(other, Box) or other.d != self.d:
            return super().intersect_volume(other)
        if self.scale_d == other.scale_d:
            return math.prod(2 * min(a, b) for a, b in zip(self.half, other.half)) * self.scale_d
        picks = [h**self.d * self.scale_d <= g**self.d * other.scale_d for h, g in zip(self.half, other.half)]
        if all(picks):
            return self.volume()
        if not any(picks):
            return other.volume()
        raise NumericFallback("boxes with mixed irrational scalings")

    def to_dict(self):
        out = {"type": "box", "half": [fraction_str(h) for h in self.half]}
        if self.scale_d != 1:
            out["scale_d"] = fraction_str(self.scale_d)
        return out


@dataclass(frozen=True)
class StarShaped(RealShape):
    """Star body with a radial function constant on facet cells.

    The unit sphere of the sup norm is cut into ``2d`` facets
    ``{x_axis = sign}``, each split into a ``grid^(d-1)`` array of cells in
    the remaining coordinates.  ``rho`` maps ``(axis, sign, cell)`` to a
    positive radius; missing keys use ``default``.  The set is
    ``{x : ||x|| <= lam * rho(cell of x/||x||)}``.
    """

    grid: int = 1
    rho: Mapping = field(default_factory=dict)
    default: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "scale_d", as_fraction(self.scale_d))
        object.__setattr__(self, "default", as_fraction(self.default))
        object.__setattr__(self, "rho", {k: as_fraction(v) for k, v in dict(self.rho).items()})
        if self.grid < 1 or self.default <= 0 or any(v <= 0 for v in self.rho.values()):
            raise ValueError("star radial function must be positive")

    def __hash__(self):
        return hash((self.d, self.scale_d, self.grid, tuple(sorted(self.rho.items())), self.default))

    def cells(self):
        for axis in range(self.d):
            for sign in (1, -1):
                for cell in itertools.product(range(self.grid), repeat=self.d - 1):
                    yield (axis, sign, cell)

    def radius(self, key) -> Fraction:
        return self.rho.get(key, self.default)

    @classmethod
    def from_function(cls, d: int, grid: int, fn, scale_d=1) -> "StarShaped":
        """Sample a positive radial function at the cell centres."""
        rho = {}
        tmp = cls(d=d, grid=grid)
        for axis, sign, cell in tmp.cells():
            centre = []
            it = iter(cell)
            for i in range(d):
                if i == axis:
                    centre.append(Fraction(sign))
                else:
                    c = next(it)
                    centre.append(Fraction(2 * c + 1, grid) - 1)
            rho[(axis, sign, cell)] = as_fraction(fn(tuple(centre)))
        return cls(d=d, scale_d=Fraction(scale_d), grid=grid, rho=rho)

    def _cell_weight(self) -> Fraction:
        return Fraction(2 ** (self.d - 1), self.d * self.grid ** (self.d - 1))

    def volume(self):
        return self.scale_d * self._cell_weight() * sum(self.radius(k) ** self.d for k in self.cells())

    def normalized(self) -> "StarShaped":
        """Copy rescaled to unit volume."""
        return replace(self, scale_d=self.scale_d / self.volume())

    def cell_of(self, x) -> tuple:
        x = [Fraction(t) for t in x]
        a = [abs(t) for t in x]
        m = max(a)
        axis = a.index(m)
        sign = 1 if x[axis] > 0 else -1
        cell = []
        for i, t in enumerate(x):
            if i == axis:
                continue
            idx = math.floor((t / m + 1) * self.grid / 2)
            cell.append(min(max(idx, 0), self.grid - 1))
        return (axis, sign, tuple(cell))

    def contains(self, x):
        n = _sup_abs(x)
        if n == 0:
            return True
        return n**self.d <= self.radius(self.cell_of(x)) ** self.d * self.scale_d

    def sup_bound(self):
        rmax = max([self.default] + list(self.rho.values()))
        return rmax * self.lam_bounds()[1]

    def classify(self, X):
        n_pts = len(X)
        lam = float(self.scale_d) ** (1.0 / self.d)
        A = np.abs(X)
        axis = np.argmax(A, axis=1) if n_pts else np.zeros(0, dtype=int)
        m = A[np.arange(n_pts), axis] if n_pts else np.zeros(0)
        srt = np.sort(A, axis=1) if n_pts else np.zeros((0, self.d))
        unc = np.zeros(n_pts, dtype=bool)
        if self.d > 1 and n_pts:
            unc |= np.abs(srt[:, -1] - srt[:, -2]) <= _TOL * (1 + m)
        inside = np.zeros(n_pts, dtype=bool)
        zero = m == 0
        inside[zero] = True
        safe_m = np.where(zero, 1.0, m)
        sign = np.where(X[np.arange(n_pts), axis] > 0, 1, -1) if n_pts else np.zeros(0, dtype=int)
        radii = np.empty(n_pts)
        cache: dict = {}
        for i in range(n_pts):
            if zero[i]:
                radii[i] = np.inf
                continue
            ax = int(axis[i])
            cell = []
            for j in range(self.d):
                if j == ax:
                    continue
                t = (X[i, j] / safe_m[i] + 1) * self.grid / 2
                idx = math.floor(t)
                if abs(t - round(t)) <= _TOL * (1 + self.grid):
                    unc[i] = True
                cell.append(min(max(idx, 0), self.grid - 1))
            key = (ax, int(sign[i]), tuple(cell))
            if key not in cache:
                cache[key] = float(self.radius(key)) * lam
            radii[i] = cache[key]
        inside |= m <= radii
        unc |= np.abs(m - radii) <= _TOL * (1 + np.where(np.isfinite(radii), radii, 0))
        return inside, unc & ~zero

    def intersect_volume(self, other):
        if not isinstance(other, StarShaped) or other.grid != self.grid or other.d != self.d:
            return super().intersect_volume(other)
        total = Fraction(0)
        for k in self.cells():
            total += min(self.radius(k) ** self.d * self.scale_d, other.radius(k) ** self.d * other.scale_d)
        return total * self._cell_weight()

    def to_dict(self):
        out = {
            "type": "star",
            "grid": self.grid,
            "default": fraction_str(self.default),
            "rho": [[k[0], k[1], list(k[2]), fraction_str(v)] for k, v in sorted(self.rho.items())],
        }
        if self.scale_d != 1:
            out["scale_d"] = fraction_str(self.scale_d)
        return out


@dataclass(frozen=True)
class LinearImage(RealShape):
    """``L * base`` for an invertible rational matrix ``L``."""

    base: RealShape = None
    matrix: tuple = ()

    def __post_init__(self):
        M = tuple(tuple(as_fraction(t) for t in row) for row in self.matrix)
        object.__setattr__(self, "matrix", M)
        from .linalg import frac_det, frac_inv

        det = frac_det(M)
        if det == 0:
            raise ValueError("singular matrix")
        object.__setattr__(self, "_inv", frac_inv(M))
        object.__setattr__(self, "_det", abs(det))
        object.__setattr__(self, "d", self.base.d)
        object.__setattr__(self, "scale_d", Fraction(1))

    def __hash__(self):
        return hash((self.base, self.matrix))

    def scaled(self, factor_d):
        return replace(self, base=self.base.scaled(factor_d))

    def _pull(self, x):
        return tuple(sum(a * Fraction(b) for a, b in zip(row, x)) for row in self._inv)

    def volume(self):
        return self._det * self.base.volume()

    def contains(self, x):
        return self.base.contains(self._pull(x))

    def sup_bound(self):
        op = max(sum(abs(a) for a in row) for row in self.matrix)
        return op * self.base.sup_bound()

    def classify(self, X):
        inv = np.array([[float(a) for a in row] for row in self._inv])
        inside, unc = self.base.classify(X @ inv.T)
        return inside, unc

    def intersect_volume(self, other):
        if isinstance(other, LinearImage) and other.matrix == self.matrix:
            return self._det * self.base.intersect_volume(other.base)
        return super().intersect_volume(other)

    def to_dict(self):
        return {
            "type": "linear",
            "matrix": [[fraction_str(a) for a in row] for row in self.matrix],
            "base": self.base.to_dict(),
        }


# --------------------------------------------------------------------------
# p-adic sets


def _primitive_residues(p: int, d: int, m: int):
    mod = p**m
    for r in itertools.product(range(mod), repeat=d):
        if any(t % p for t in r):
            yield r


def _count_primitive(p: int, d: int, m: int) -> int:
    return p ** (m * d) - p ** ((m - 1) * d)


@dataclass(frozen=True)
class PadicSet:
    """Subset of ``Q_p^d`` given by a core ball and direction-refined shells.

    ``core`` is ``None`` when the set avoids a neighbourhood of 0.
    ``shells`` maps a norm exponent ``j`` to ``None`` (all directions) or a
    frozenset of primitive residues mod ``p^m``.
    """

    p: int
    d: int
    core: Optional[int] = 0
    shells: Mapping = field(default_factory=dict)
    m: int = 1

    def __post_init__(self):
        sh = {}
        for j, R in dict(self.shells).items():
            j = int(j)
            if self.core is not None and j <= self.core:
                continue
            if R is not None:
                R = frozenset(tuple(int(t) % self.p**self.m for t in r) for r in R)
                if not R:
                    continue
                if len(R) == _count_primitive(self.p, self.d, self.m):
                    R = None
            sh[j] = R
        object.__setattr__(self, "shells", sh)
        if self.m < 1:
            raise ValueError("precision m must be >= 1")

    def __hash__(self):
        return hash((self.p, self.d, self.core, self.m, tuple(sorted(self.shells.items(), key=lambda t: t[0]))))

    # constructors --------------------------------------------------------
    @classmethod
    def ball(cls, p, d, b=0) -> "PadicSet":
        """``p^(-b) Z_p^d``, the ball of radius ``p^b``."""
        return cls(p, d, core=int(b))

    @classmethod
    def shell(cls, p, d, j) -> "PadicSet":
        """``{||v||_p = p^j}``."""
        return cls(p, d, core=None, shells={int(j): None})

    @classmethod
    def annulus(cls, p, d, lo, hi) -> "PadicSet":
        """``{p^lo < ||v||_p <= p^hi}``."""
        return cls(p, d, core=None, shells={j: None for j in range(int(lo) + 1, int(hi) + 1)})

    @classmethod
    def refined_ball(cls, p, d, b, m, residues) -> "PadicSet":
        """``{v in p^(-b) Z_p^d : p^b v mod p^m in residues}``."""
        mod = p**m
        shells: dict = {}
        has_zero = False
        for r in residues:
            r = tuple(int(t) % mod for t in r)
            if not any(r):
                has_zero = True
                continue
            k = min(int_valuation(t, p) if t else m for t in r)
            base = tuple(t // p**k for t in r)
            # direction known mod p^(m-k); lift to mod p^m
            for lift in itertools.product(range(p**k), repeat=d):
                shells.setdefault(b - k, set()).add(tuple((t + p ** (m - k) * s) % mod for t, s in zip(base, lift)))
        core = b - m if has_zero else None
        return cls(p, d, core=core, shells={j: frozenset(R) for j, R in shells.items()}, m=m)

    @classmethod
    def star(cls, p, d, m, rho_exp: Mapping, default: int = 0) -> "PadicSet":
        """``{v : ||v||_p <= p^(rho(direction))}`` with ``rho`` on residues mod ``p^m``."""
        table = {tuple(int(t) % p**m for t in k): int(v) for k, v in rho_exp.items()}
        full = {r: table.get(r, default) for r in _primitive_residues(p, d, m)}
        lo, hi = min(full.values()), max(full.values())
        shells = {j: frozenset(r for r, e in full.items() if e >= j) for j in range(lo + 1, hi + 1)}
        return cls(p, d, core=lo, shells=shells, m=m)

    # queries -------------------------------------------------------------
    @property
    def is_empty(self) -> bool:
        return self.core is None and not self.shells

    def max_exponent(self) -> Optional[int]:
        js = list(self.shells)
        if self.core is not None:
            js.append(self.core)
        return max(js) if js else None

    def residues_at(self, j: int):
        """``None`` (all directions), or a frozenset (possibly empty)."""
        if self.core is not None and j <= self.core:
            return None
        return self.shells.get(j, frozenset())

    def is_norm_only(self) -> bool:
        return all(R is None for R in self.shells.values())

    def volume(self) -> Fraction:
        p, d, m = self.p, self.d, self.m
        vol = Fraction(p) ** (self.core * d) if self.core is not None else Fraction(0)
        full = _count_primitive(p, d, m)
        for j, R in self.shells.items():
            cnt = full if R is None else len(R)
            vol += Fraction(p) ** (j * d) * Fraction(cnt, p ** (m * d))
        return vol

    def member(self, j, direction) -> bool:
        """Membership of a point with norm ``p^j`` and the given direction residue."""
        if j == -math.inf:
            return self.core is not None
        R = self.residues_at(j)
        if R is None:
            return True
        if not R:
            return False
        mod = self.p**self.m
        return tuple(int(t) % mod for t in direction) in R

    def contains(self, v) -> bool:
        v = tuple(Fraction(t) for t in v)
        val = vec_valuation(v, self.p)
        if val == math.inf:
            return self.core is not None
        j = -val
        R = self.residues_at(j)
        if R is None:
            return True
        if not R:
            return False
        scale = Fraction(self.p) ** j
        return tuple(unit_residue(t * scale, self.p, self.m) for t in v) in R

    # transformations -----------------------------------------------------
    def preimage(self, c) -> "PadicSet":
        """``{v : c v in self}`` for a nonzero rational ``c``."""
        c = as_fraction(c)
        if c == 0:
            raise ValueError("c must be nonzero")
        e = int_valuation(c.numerator, self.p) - int_valuation(c.denominator, self.p)
        u = c / Fraction(self.p) ** e
        mod = self.p**self.m
        uinv = pow(unit_residue(u, self.p, self.m), -1, mod)
        shells = {}
        for j, R in self.shells.items():
            shells[j + e] = None if R is None else frozenset(tuple(t * uinv % mod for t in r) for r in R)
        core = None if self.core is None else self.core + e
        return PadicSet(self.p, self.d, core=core, shells=shells, m=self.m)

    def dilate(self, t: int) -> "PadicSet":
        """``{v : p^t v in self}``: radius ``p^t`` times larger."""
        return self.preimage(Fraction(self.p) ** int(t))

    def with_precision(self, m: int) -> "PadicSet":
        if m == self.m:
            return self
        if m < self.m:
            raise ValueError("cannot lower precision")
        p, d = self.p, self.d
        step = p**self.m
        mod = p**m
        shells = {}
        for j, R in self.shells.items():
            if R is None:
                shells[j] = None
            else:
                shells[j] = frozenset(
                    tuple((t + step * s) % mod for t, s in zip(r, lift))
                    for r in R
                    for lift in itertools.product(range(p ** (m - self.m)), repeat=d)
                )
        return PadicSet(p, d, core=self.core, shells=shells, m=m)

    def _combine(self, other: "PadicSet", op: str) -> "PadicSet":
        if (other.p, other.d) != (self.p, self.d):
            raise ValueError("incompatible p-adic sets")
        m = max(self.m, other.m)
        a, b = self.with_precision(m), other.with_precision(m)
        if op == "and":
            if a.core is None or b.core is None:
                core = None
            else:
                core = min(a.core, b.core)
        else:  # "minus": a - b
            if a.core is None:
                core = None
            elif b.core is not None:
                core = None
            else:
                low_b = min(b.shells) if b.shells else math.inf
                core = a.core if a.core < low_b else low_b - 1
        marks = list(a.shells) + list(b.shells) + [c for c in (a.core, b.core) if c is not None]
        js = range(min(marks), max(marks) + 1) if marks else range(0)
        full = None
        shells = {}
        for j in sorted(js):
            if core is not None and j <= core:
                continue
            ra, rb = a.residues_at(j), b.residues_at(j)
            if op == "and":
                if ra is None:
                    res = rb
                elif rb is None:
                    res = ra
                else:
                    res = ra & rb
            else:
                if rb is None:
                    res = frozenset()
                elif ra is None:
                    if full is None:
                        full = frozenset(_primitive_residues(self.p, self.d, m))
                    res = full - rb
                else:
                    res = ra - rb
            if res is None or res:
                shells[j] = res
        return PadicSet(self.p, self.d, core=core, shells=shells, m=m)

    def intersect(self, other: "PadicSet") -> "PadicSet":
        return self._combine(other, "and")

    def minus(self, other: "PadicSet") -> "PadicSet":
        return self._combine(other, "minus")

    def to_dict(self) -> dict:
        if self.is_norm_only() and not self.shells and self.core is not None:
            return {"p": self.p, "b": self.core}
        return {
            "p": self.p,
            "core": self.core,
            "m": self.m,
            "shells": {
                str(j): (None if R is None else sorted(list(r) for r in R)) for j, R in sorted(self.shells.items())
            },
        }


# --------------------------------------------------------------------------
# product regions and unions


@dataclass(frozen=True)
class RadiusVector:
    """``T = (T_inf, T_p1, ...)`` with ``T_p = p^(t_p)``.

    ``T_inf`` is given through ``inf_value`` and ``inf_root``: the real
    radius is ``inf_value^(1/inf_root)``.  Dilation in dimension ``d``
    needs ``inf_root | d``.
    """

    inf_value: Fraction = Fraction(1)
    t: tuple = ()
    inf_root: int = 1

    def __post_init__(self):
        object.__setattr__(self, "inf_value", as_fraction(self.inf_value))
        object.__setattr__(self, "t", tuple(sorted((int(p), int(e)) for p, e in dict(self.t).items())))
        if self.inf_value <= 0:
            raise ValueError("T_inf must be positive")

    @classmethod
    def from_pow(cls, d: int, inf_pow_d, t=()) -> "RadiusVector":
        """Radius vector whose real component satisfies ``T_inf^d = inf_pow_d``."""
        return cls(Fraction(inf_pow_d), dict(t), d)

    def t_of(self, p: int) -> int:
        return dict(self.t).get(p, 0)

    def inf_pow(self, d: int) -> Fraction:
        if d % self.inf_root:
            raise ValueError("T_inf^d is not rational for this radius vector")
        return self.inf_value ** (d // self.inf_root)

    def abs_pow(self, d: int) -> Fraction:
        """``|T|^d = (T_inf * prod T_p)^d``."""
        out = self.inf_pow(d)
        for p, e in self.t:
            out *= Fraction(p) ** (e * d)
        return out

    def __le__(self, other: "RadiusVector") -> bool:
        # componentwise partial order; inf parts compared through a common power
        k = self.inf_root * other.inf_root
        if self.inf_pow(k) > other.inf_pow(k):
            return False
        ps = {p for p, _ in self.t} | {p for p, _ in other.t}
        return all(self.t_of(p) <= other.t_of(p) for p in ps)


@dataclass(frozen=True)
class ProductRegion:
    d: int
    real: RealShape
    padic: tuple = ()  # tuple[PadicSet, ...] sorted by prime

    def __post_init__(self):
        pad = tuple(sorted(self.padic, key=lambda s: s.p))
        if len({s.p for s in pad}) != len(pad):
            raise ValueError("one p-adic factor per prime")
        if self.real.d != self.d or any(s.d != self.d for s in pad):
            raise ValueError("dimension mismatch")
        object.__setattr__(self, "padic", pad)

    @classmethod
    def make(cls, real: RealShape, S: PlaceSet | None = None, padic: Iterable[PadicSet] = ()) -> "ProductRegion":
        """Fill missing S-primes with the unit ball ``Z_p^d``."""
        pad = {s.p: s for s in padic}
        if S is not None:
            for p in S.primes:
                pad.setdefault(p, PadicSet.ball(p, real.d, 0))
            extra = set(pad) - set(S.primes)
            if extra:
                raise ValueError(f"p-adic factors {sorted(extra)} not in S={S}")
        return cls(real.d, real, tuple(pad.values()))

    @property
    def primes(self) -> tuple:
        return tuple(s.p for s in self.padic)

    def factor(self, p: int) -> PadicSet:
        for s in self.padic:
            if s.p == p:
                return s
        raise KeyError(p)

    @property
    def pieces(self) -> tuple:
        return (self,)

    @property
    def is_empty(self) -> bool:
        return any(s.is_empty for s in self.padic)

    def volume(self) -> Fraction:
        if self.is_empty:
            return Fraction(0)
        return self.real.volume() * math.prod((s.volume() for s in self.padic), start=Fraction(1))

    def contains(self, v) -> bool:
        v = tuple(Fraction(t) for t in v)
        if len(v) != self.d:
            raise ValueError("dimension mismatch")
        return self.real.contains(v) and all(s.contains(v) for s in self.padic)

    def dilate(self, T: RadiusVector) -> "ProductRegion":
        real = self.real.scaled(T.inf_pow(self.d))
        return ProductRegion(self.d, real, tuple(s.dilate(T.t_of(s.p)) for s in self.padic))

    def rational_preimage(self, c) -> "ProductRegion":
        """``A(c) = {v : c v in A}``."""
        c = as_fraction(c)
        if c == 0:
            raise ValueError("c must be nonzero")
        return ProductRegion(self.d, self.real.preimage(c), tuple(s.preimage(c) for s in self.padic))

    def scale_diag(self, c) -> "ProductRegion":
        """``c * A`` for a rational ``c`` acting diagonally."""
        return self.rational_preimage(1 / as_fraction(c))

    def intersect_volume(self, other: "ProductRegion") -> Fraction:
        if self.primes != other.primes:
            raise ValueError("regions over different place sets")
        vol = self.real.intersect_volume(other.real)
        for a, b in zip(self.padic, other.padic):
            if vol == 0:
                return vol
            vol *= a.intersect(b).volume()
        return vol

    def to_dict(self) -> dict:
        return {"d": self.d, "real": self.real.to_dict(), "padic": [s.to_dict() for s in self.padic]}


@dataclass(frozen=True)
class UnionRegion:
    """Disjoint union of product regions (disjointness is the caller's promise)."""

    d: int
    pieces: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(p for p in self.pieces if not p.is_empty))
        if any(p.d != self.d for p in self.pieces):
            raise ValueError("dimension mismatch")
        if len({p.primes for p in self.pieces}) > 1:
            raise ValueError("pieces over different place sets")

    @property
    def primes(self) -> tuple:
        return self.pieces[0].primes if self.pieces else ()

    @property
    def is_empty(self) -> bool:
        return not self.pieces

    def volume(self) -> Fraction:
        return sum((p.volume() for p in self.pieces), Fraction(0))

    def contains(self, v) -> bool:
        return any(p.contains(v) for p in self.pieces)

    def dilate(self, T: RadiusVector) -> "UnionRegion":
        return UnionRegion(self.d, tuple(p.dilate(T) for p in self.pieces))

    def rational_preimage(self, c) -> "UnionRegion":
        return UnionRegion(self.d, tuple(p.rational_preimage(c) for p in self.pieces))

    def scale_diag(self, c) -> "UnionRegion":
        return UnionRegion(self.d, tuple(p.scale_diag(c) for p in self.pieces))

    def to_dict(self) -> dict:
        return {"d": self.d, "pieces": [p.to_dict() for p in self.pieces]}


Region = ProductRegion | UnionRegion


def empty_region(d: int) -> UnionRegion:
    return UnionRegion(d, ())


def volume(A: Region) -> Fraction:
    return A.volume()


def contains(A: Region, v) -> bool:
    return A.contains(v)


def dilate(A: Region, T: RadiusVector) -> Region:
    return A.dilate(T)


def rational_preimage(A: Region, c) -> Region:
    return A.rational_preimage(c)


def overlap_volume(A: Region, c1, c2) -> Fraction:
    """``mu(A(c1) & A(c2))``, exact, summed over disjoint pieces."""
    P1 = A.rational_preimage(c1).pieces
    P2 = A.rational_preimage(c2).pieces
    return sum((a.intersect_volume(b) for a in P1 for b in P2), Fraction(0))


def difference(big: ProductRegion, small: ProductRegion) -> UnionRegion:
    """``big - small`` for nested products ``small <= big`` as a disjoint union.

    Uses ``X2 x Y2 - X1 x Y1 = (X2 - X1) x Y2  U  X1 x (Y2 - Y1)`` one place
    at a time; the real difference is only available for nested balls and
    annuli of the same base (difference of two balls is an annulus).
    """
    if big.primes != small.primes or big.d != small.d:
        raise ValueError("incompatible regions")
    pieces = []
    real_diff = _real_difference(big.real, small.real)
    if real_diff is not None:
        pieces.append(ProductRegion(big.d, real_diff, big.padic))
    # remaining: points with real part in small.real, outside small at some prime
    for i, (b, s) in enumerate(zip(big.padic, small.padic)):
        diff = b.minus(s)
        if diff.is_empty:
            continue
        pad = small.padic[:i] + (diff,) + big.padic[i + 1 :]
        pieces.append(ProductRegion(big.d, small.real, pad))
    return UnionRegion(big.d, tuple(pieces))


def _real_difference(big: RealShape, small: RealShape) -> Optional[RealShape]:
    if big == small:
        return None
    if isinstance(big, SupAnnulus) and isinstance(small, SupAnnulus) and big.inner == 0 and small.inner == 0:
        ro = big.outer**big.d * big.scale_d
        ri = small.outer**small.d * small.scale_d
        if ri > ro:
            raise ValueError("regions are not nested")
        if ri == ro:
            return None
        # annulus with base (inner, outer) = (r_s, r_b) under a common scale
        return SupAnnulus(d=big.d, scale_d=big.scale_d, inner=small.outer * _ratio_root(small, big), outer=big.outer)
    raise NumericFallback("real difference only for centred sup balls")


def _ratio_root(small: SupAnnulus, big: SupAnnulus) -> Fraction:
    r = exact_root(small.scale_d / big.scale_d, big.d)
    if r is None:
        raise NumericFallback("difference of balls with non-rational radius ratio")
    return r


# --------------------------------------------------------------------------
# JSON-like documents


def _real_from_dict(doc: Mapping, d: int) -> RealShape:
    kind = doc.get("type", "ball")
    scale_d = Fraction(doc.get("scale_d", 1))
    if kind == "ball":
        return SupBall(d, Fraction(doc.get("radius", 1)), scale_d)
    if kind == "annulus":
        return Annulus(d, Fraction(doc["inner"]), Fraction(doc["outer"]), scale_d)
    if kind == "box":
        half = doc["half"]
        if not isinstance(half, list):
            half = [half] * d
        return Box(d=d, scale_d=scale_d, half=tuple(Fraction(h) for h in half))
    if kind == "star":
        rho = {(int(a), int(s), tuple(int(c) for c in cell)): Fraction(v) for a, s, cell, v in doc.get("rho", [])}
        return StarShaped(d=d, scale_d=scale_d, grid=int(doc.get("grid", 1)), rho=rho, default=Fraction(doc.get("default", 1)))
    if kind == "linear":
        return LinearImage(d=d, base=_real_from_dict(doc["base"], d), matrix=tuple(tuple(r) for r in doc["matrix"]))
    raise ValueError(f"unknown real shape {kind!r}")


def _padic_from_dict(doc: Mapping, d: int) -> PadicSet:
    p = int(doc["p"])
    if "shells" in doc:
        shells = {int(j): (None if R is None else frozenset(tuple(r) for r in R)) for j, R in doc["shells"].items()}
        return PadicSet(p, d, core=doc.get("core"), shells=shells, m=int(doc.get("m", 1)))
    if "shell" in doc:
        return PadicSet.shell(p, d, int(doc["shell"]))
    if "star" in doc:
        st = doc["star"]
        rho = {tuple(int(t) for t in k.split(",")): int(v) for k, v in st.get("rho", {}).items()}
        return PadicSet.star(p, d, int(st.get("m", 1)), rho, int(st.get("default", 0)))
    b = int(doc.get("b", 0))
    if "residues" in doc:
        return PadicSet.refined_ball(p, d, b, int(doc.get("m", 1)), [tuple(r) for r in doc["residues"]])
    return PadicSet.ball(p, d, b)


def region_from_dict(doc: Mapping, d: int | None = None, S: PlaceSet | None = None) -> Region:
    """Load a region document ``{d, real: {...}, padic: [{p, b, residues?, m?}]}``.

    ``{"d": .., "pieces": [...]}`` loads a disjoint union.  Primes of ``S``
    missing from the document get the unit ball.
    """
    d = int(doc.get("d", d if d is not None else 0))
    if d < 1:
        raise ValueError("region needs a dimension")
    if "pieces" in doc:
        return UnionRegion(d, tuple(region_from_dict(pc, d, S) for pc in doc["pieces"]))
    if doc.get("empty"):
        return empty_region(d)
    real = _real_from_dict(doc.get("real", {"type": "ball"}), d)
    padic = [_padic_from_dict(pd, d) for pd in doc.get("padic", [])]
    return ProductRegion.make(real, S, padic)
