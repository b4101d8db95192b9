"""Exact rational arithmetic with p-adic valuations over a finite place set.

Scalars are :class:`fractions.Fraction` instances (already canonical:
``gcd(num, den) == 1`` and ``den > 0``).  Vectors are tuples of fractions,
viewed diagonally inside ``Q_S^d``.  The real place is written ``INF``.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

INF = math.inf

Place = Union[int, float]
SRational = Fraction
SVector = tuple  # tuple[Fraction, ...]


class InsufficientPrecision(ValueError):
    """A predicate cannot be decided at the available p-adic precision."""


class CapacityExceeded(RuntimeError):
    """An enumeration would exceed its configured candidate cap."""


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class PlaceSet:
    """The place set ``S = {inf} U {p_1 < ... < p_s}``."""

    primes: tuple = ()

    def __post_init__(self):
        ps = tuple(int(p) for p in self.primes)
        if list(ps) != sorted(set(ps)):
            raise ValueError(f"primes must be distinct and increasing: {ps}")
        for p in ps:
            if not is_prime(p):
                raise ValueError(f"{p} is not a prime")
        object.__setattr__(self, "primes", ps)

    @classmethod
    def parse(cls, text: str | Sequence[int] | None) -> "PlaceSet":
        """Parse ``"inf,3,5"``, ``"3,5"``, ``""`` or a sequence of primes."""
        if text is None:
            return cls(())
        if isinstance(text, str):
            items = [t.strip().lower() for t in text.replace(";", ",").split(",")]
            ps = sorted(int(t) for t in items if t and t not in ("inf", "oo", "infinity"))
            return cls(tuple(ps))
        return cls(tuple(sorted(int(p) for p in text)))

    @property
    def places(self) -> tuple:
        return (INF,) + self.primes

    @property
    def is_real(self) -> bool:
        return not self.primes

    @property
    def all_odd(self) -> bool:
        return all(p % 2 == 1 for p in self.primes)

    def prime_product(self) -> int:
        return math.prod(self.primes)

    def __str__(self) -> str:
        return "{" + ",".join(["inf"] + [str(p) for p in self.primes]) + "}"


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        # exact binary value; callers wanting decimal semantics pass strings
        return Fraction(x)
    if isinstance(x, numbers.Integral):
        # numpy integers would otherwise leak fixed-width arithmetic into fractions
        return Fraction(int(x))
    return Fraction(x)


def vec(*entries) -> SVector:
    """Build an exact vector from ints, fractions or ``"p/q"`` strings."""
    if len(entries) == 1 and not isinstance(entries[0], (int, Fraction, str)):
        entries = tuple(entries[0])
    return tuple(Fraction(e) for e in entries)


def int_valuation(n: int, p: int) -> int:
    if n == 0:
        raise ValueError("valuation of 0 is infinite")
    n = abs(n)
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def valuation(x, p: Place) -> int | float:
    """``v_p(x)`` for a finite prime ``p``; ``+inf`` at zero.

    For ``p = INF`` there is no valuation; use :func:`abs_at`.
    """
    if p == INF:
        raise ValueError("the real place has no valuation")
    x = as_fraction(x)
    if x == 0:
        return math.inf
    return int_valuation(x.numerator, p) - int_valuation(x.denominator, p)


def abs_at(x, p: Place) -> Fraction:
    """``|x|_p`` (``p = INF`` gives the usual absolute value)."""
    x = as_fraction(x)
    if p == INF:
        return abs(x)
    if x == 0:
        return Fraction(0)
    return Fraction(p) ** (-valuation(x, p))


def vec_valuation(v: Iterable, p: int) -> int | float:
    """``min_i v_p(v_i)``, so that ``||v||_p = p^(-vec_valuation)``."""
    return min((valuation(x, p) for x in v), default=math.inf)


def norm_at(v: Iterable, p: Place) -> Fraction:
    """Sup norm of ``v`` at the place ``p``."""
    return max((abs_at(x, p) for x in v), default=Fraction(0))


def snorm(v: Iterable, S: PlaceSet) -> Fraction:
    """``||v||_S = max_{p in S} ||v||_p`` with the sup norm at infinity."""
    v = tuple(v)
    return max(norm_at(v, p) for p in S.places)


def split_ns_ps(n: int, S: PlaceSet) -> tuple[int, int]:
    """Write ``n = q * pp`` with ``q`` coprime to the S-primes and ``pp`` in P_S."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    pp = 1
    for p in S.primes:
        while n % p == 0:
            n //= p
            pp *= p
    return n, pp


def in_ns(q: int, S: PlaceSet) -> bool:
    return q >= 1 and split_ns_ps(q, S)[1] == 1


def in_ps(n: int, S: PlaceSet) -> bool:
    return n >= 1 and split_ns_ps(n, S)[0] == 1


def in_zs(x, S: PlaceSet) -> bool:
    """Membership in ``Z_S``: the denominator has only S-prime factors."""
    return in_ps(as_fraction(x).denominator, S)


def ps_elements(S: PlaceSet, bound: int) -> list[int]:
    """All elements of P_S not exceeding ``bound``, sorted."""
    out = [1]
    for p in S.primes:
        grown = []
        for base in out:
            x = base
            while x <= bound:
                grown.append(x)
                x *= p
        out = grown
    return sorted(x for x in out if x <= bound)


def unit_residue(x, p: int, m: int) -> int:
    """Residue of a p-adic integer ``x`` (a rational) modulo ``p^m``."""
    x = as_fraction(x)
    if x.denominator % p == 0:
        raise InsufficientPrecision(f"{x} is not a {p}-adic integer")
    mod = p**m
    return x.numerator * pow(x.denominator, -1, mod) % mod


@dataclass(frozen=True)
class TruncatedPadic:
    """A p-adic integer known modulo ``p^m``."""

    p: int
    m: int
    residue: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("precision must be >= 1")
        object.__setattr__(self, "residue", self.residue % self.p**self.m)

    @classmethod
    def from_rational(cls, x, p: int, m: int) -> "TruncatedPadic":
        return cls(p, m, unit_residue(x, p, m))

    @property
    def modulus(self) -> int:
        return self.p**self.m

    def is_unit(self) -> bool:
        return self.residue % self.p != 0

    def valuation(self) -> int:
        """Valuation, decided only when the residue is nonzero."""
        if self.residue == 0:
            raise InsufficientPrecision(f"residue 0 mod {self.p}^{self.m}")
        return int_valuation(self.residue, self.p)

    def _check(self, other: "TruncatedPadic") -> int:
        if other.p != self.p:
            raise ValueError("different primes")
        return min(self.m, other.m)

    def __add__(self, other: "TruncatedPadic") -> "TruncatedPadic":
        m = self._check(other)
        return TruncatedPadic(self.p, m, self.residue + other.residue)

    def __mul__(self, other: "TruncatedPadic") -> "TruncatedPadic":
        m = self._check(other)
        return TruncatedPadic(self.p, m, self.residue * other.residue)

    def __neg__(self) -> "TruncatedPadic":
        return TruncatedPadic(self.p, self.m, -self.residue)


def fraction_str(x) -> str:
    x = as_fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def nth_root_bounds(x: Fraction, n: int) -> tuple[Fraction, Fraction]:
    """Rational ``lo <= x^(1/n) <= hi`` with relative gap about ``2^-40``."""
    if x < 0:
        raise ValueError("negative radicand")
    if x == 0:
        return Fraction(0), Fraction(0)
    scale = 2**40
    # floor/ceil of scale * x^(1/n) via integer roots of scale^n * x
    num = x.numerator * scale**n
    den = x.denominator
    lo = _iroot(num // den, n)
    hi = lo if lo**n * den == num else lo + 1
    if hi**n * den < num:
        hi += 1
    return Fraction(lo, scale), Fraction(hi, scale)


def exact_root(x, n: int) -> Fraction | None:
    """``x^(1/n)`` when it is rational, else ``None``."""
    x = as_fraction(x)
    if x < 0:
        return None
    a, b = _iroot(x.numerator, n), _iroot(x.denominator, n)
    if a**n == x.numerator and b**n == x.denominator:
        return Fraction(a, b)
    return None


def _iroot(a: int, n: int) -> int:
    """Largest integer r with r^n <= a."""
    if a < 0:
        raise ValueError("negative")
    if a < 2:
        return a
    r = int(round(a ** (1.0 / n))) if a < 2**1000 else 1 << (a.bit_length() // n + 1)
    # Newton correction in integers
    while True:
        if r <= 0:
            r = 1
        nxt = ((n - 1) * r + a // r ** (n - 1)) // n
        if abs(nxt - r) <= 1:
            r = max(r, nxt)
            break
        r = nxt
    while r**n > a:
        r -= 1
    while (r + 1) ** n <= a:
        r += 1
    return r
