"""Numerical experiments built on the exact counting and moment code.

* :func:`variance_family` -- regions whose second-moment correction grows
  like the square of the volume.
* :func:`oppenheim_scan` / :func:`oppenheim_haar` -- counts of lattice
  points where an indefinite form takes values in a bounded set, against
  the volume of the same region.
* :func:`epsilon_min_search` -- smallest S-integral vector with a form
  value close to a target.
* :func:`gauss_star_scan` -- lattice counts in dilates of a star body.
* :func:`dyadic_stats` -- squared count remainders over dyadic blocks.
* :func:`sandwich_check` and :func:`difference_correction_check` --
  property checks on nested regions.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

import mpmath
import numpy as np

from .lattices import DEFAULT_CAP, SLattice, count_points, enumerate_points, point_in
from .linalg import frac_det, lcm_all, matmul, transpose
from .qs_core import INF, CapacityExceeded, PlaceSet, abs_at, as_fraction, fraction_str, norm_at, valuation
from .regions import (
    PadicSet,
    ProductRegion,
    RadiusVector,
    Region,
    StarShaped,
    SupBall,
    UnionRegion,
    difference,
    overlap_volume,
)
from .rogers import moment_series, zeta_constant
from .sampling import SamplerConfig, batch_rng, sample_lattice, sample_real_lattice, worker_count


def _map(fn: Callable, jobs: Sequence, workers: int | None) -> list:
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def fit_loglog(xs: Sequence[float], ys: Sequence[float], top_fraction: float = 0.5) -> Optional[float]:
    """Least-squares slope of ``log y`` against ``log x`` on the last part of the data.

    Points with ``y <= 0`` are dropped; ``None`` when fewer than two remain.
    """
    n = len(xs)
    start = min(n - 1, int(math.floor(n * (1 - top_fraction)))) if n else 0
    pts = [(math.log(x), math.log(y)) for x, y in list(zip(xs, ys))[start:] if x > 0 and y > 0]
    if len(pts) < 2 or len({p[0] for p in pts}) < 2:
        return None
    X, Y = np.array(pts).T
    return float(np.polyfit(X, Y, 1)[0])


# --------------------------------------------------------------------------
# variance blow-up family


def blowup_region(p: int, d: int, k: int) -> UnionRegion:
    """``{v : ||v_inf|| ||v_p|| <= 1, ||v_inf|| <= p^k, ||v_p|| <= p^k}`` in ``Q_{inf,p}^d``.

    Split by the p-adic norm: ``2k`` shells ``||v_p|| = p^j`` for
    ``-k < j <= k`` carrying the real ball of radius ``p^-j``, plus the
    core ``||v_p|| <= p^-k`` carrying the ball of radius ``p^k``.
    """
    if k < 1 or d < 1:
        raise ValueError("need k >= 1 and d >= 1")
    P = Fraction(p)
    pieces = [ProductRegion(d, SupBall(d, P ** (-j)), (PadicSet.shell(p, d, j),)) for j in range(-k + 1, k + 1)]
    pieces.append(ProductRegion(d, SupBall(d, P**k), (PadicSet.ball(p, d, -k),)))
    return UnionRegion(d, tuple(pieces))


def blowup_volume(p: int, d: int, k: int) -> Fraction:
    B = Fraction(2**d)
    return 2 * k * B * (1 - Fraction(1, p**d)) + B


def blowup_overlap(p: int, d: int, k: int, q: int, m: int) -> Fraction:
    """Closed form of ``mu(A_k(q) & A_k(w/p^m))`` for ``0 <= m <= 2k``."""
    B = Fraction(2**d)
    return (blowup_volume(p, d, k) - m * (1 - Fraction(1, p**d)) * B) / Fraction(q) ** d


def _admissible_w(q: int, p: int) -> list[int]:
    return [w for w in range(1, q) if math.gcd(w, q) == 1 and w % p]


@dataclass
class VarianceRow:
    k: int
    volume: Fraction
    lower_bound: Fraction
    ratio: Fraction
    overlaps_checked: int = 0
    overlap_mismatches: int = 0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "volume": fraction_str(self.volume),
            "lower_bound_float": float(self.lower_bound),
            "ratio_float": float(self.ratio),
            "correction_over_volume_float": float(self.lower_bound / self.volume),
            "overlaps_checked": self.overlaps_checked,
            "overlap_mismatches": self.overlap_mismatches,
        }


@dataclass
class VarianceFamily:
    p: int
    d: int
    Q: int
    rows: list
    limit: Fraction

    @property
    def min_ratio(self) -> Fraction:
        return min(r.ratio for r in self.rows)

    @property
    def passed(self) -> bool:
        return (
            self.min_ratio > 0
            and all(r.volume == blowup_volume(self.p, self.d, r.k) for r in self.rows)
            and all(r.overlap_mismatches == 0 for r in self.rows)
        )

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "d": self.d,
            "Q": self.Q,
            "rows": [r.to_dict() for r in self.rows],
            "min_ratio_float": float(self.min_ratio),
            "limit_float": float(self.limit),
            "passed": self.passed,
        }


def variance_family(p: int, d: int, k_max: int, Q: int = 200, verify_Q: int = 0) -> VarianceFamily:
    """Exact volumes and correction lower bounds for ``A_1 .. A_kmax``.

    Only the pairs ``(q, w/p^m)`` with ``q`` prime to ``p``, ``2 <= q <= Q``,
    ``1 <= w < q`` and ``0 <= m <= 2k`` are kept; every dropped term is
    nonnegative, so the sums are lower bounds for the full correction.
    With ``verify_Q > 0`` each closed-form overlap with ``q <= verify_Q`` is
    compared with :func:`~srogers.regions.overlap_volume`.
    """
    if d < 3:
        raise ValueError("need d >= 3")
    if p < 2 or p % 2 == 0:
        raise ValueError("p must be an odd prime")
    B = Fraction(2**d)
    X = (1 - Fraction(1, p**d)) * B
    qs = [q for q in range(2, Q + 1) if q % p]
    L = lcm_all(qs) if qs else 1
    sigma = Fraction(sum(len(_admissible_w(q, p)) * (L // q) ** d for q in qs), L**d)
    rows = []
    for k in range(1, k_max + 1):
        mu = blowup_volume(p, d, k)
        lb = ((2 * k + 1) * mu - k * (2 * k + 1) * X) * sigma
        row = VarianceRow(k, mu, lb, lb / mu**2)
        if verify_Q:
            A = blowup_region(p, d, k)
            row.volume = A.volume()
            for q in (q for q in range(2, verify_Q + 1) if q % p):
                for w in _admissible_w(q, p):
                    for m in range(2 * k + 1):
                        row.overlaps_checked += 1
                        if overlap_volume(A, q, Fraction(w, p**m)) != blowup_overlap(p, d, k, q, m):
                            row.overlap_mismatches += 1
        rows.append(row)
    return VarianceFamily(p, d, Q, rows, sigma / (2 * X))


# --------------------------------------------------------------------------
# quadratic forms


def _sym_matrix(M, name: str) -> tuple:
    A = tuple(tuple(as_fraction(x) for x in row) for row in M)
    d = len(A)
    if any(len(r) != d for r in A):
        raise ValueError(f"{name} form matrix must be square")
    if any(A[i][j] != A[j][i] for i in range(d) for j in range(d)):
        raise ValueError(f"{name} form matrix must be symmetric")
    if frac_det(A) == 0:
        raise ValueError(f"{name} form is degenerate")
    return A


@dataclass(frozen=True)
class QuadraticFormS:
    """One symmetric matrix per place of ``S``; ``q_p(v) = v^T Q_p v``."""

    real: tuple
    padic: tuple = ()  # ((p, matrix), ...)

    def __post_init__(self):
        object.__setattr__(self, "real", _sym_matrix(self.real, "real"))
        pad = tuple(sorted((int(p), _sym_matrix(M, f"{p}-adic")) for p, M in dict(self.padic).items()))
        for p, M in pad:
            if len(M) != self.d:
                raise ValueError("forms at different places have different sizes")
            for row in M:
                for x in row:
                    if x.denominator % p == 0:
                        raise ValueError(f"{p}-adic form entries must be {p}-adic integers")
        object.__setattr__(self, "padic", pad)

    @classmethod
    def diagonal_embedding(cls, M, S: PlaceSet | None = None) -> "QuadraticFormS":
        """The same rational form at every place of ``S``."""
        S = S or PlaceSet()
        return cls(M, tuple((p, M) for p in S.primes))

    @classmethod
    def from_dict(cls, doc: Mapping, S: PlaceSet | None = None) -> "QuadraticFormS":
        real = [[Fraction(x) for x in row] for row in doc["matrix"]]
        pad = {int(p): [[Fraction(x) for x in row] for row in M] for p, M in doc.get("padic", {}).items()}
        for p in (S.primes if S else ()):
            pad.setdefault(p, real)
        return cls(real, tuple(pad.items()))

    @property
    def d(self) -> int:
        return len(self.real)

    @property
    def primes(self) -> tuple:
        return tuple(p for p, _ in self.padic)

    def matrix_at(self, p) -> tuple:
        if p == INF:
            return self.real
        return dict(self.padic)[p]

    def composed(self, g) -> "QuadraticFormS":
        """``v -> q_inf(g v)`` at the real place; finite places unchanged."""
        gt = transpose(g)
        return QuadraticFormS(tuple(map(tuple, matmul(matmul(gt, self.real), g))), self.padic)

    def signature(self) -> tuple[int, int]:
        ev = np.linalg.eigvalsh(np.array(self.real, dtype=float))
        return int((ev > 0).sum()), int((ev < 0).sum())

    @property
    def is_isotropic_real(self) -> bool:
        pos, neg = self.signature()
        return pos > 0 and neg > 0

    def value(self, v, p=INF) -> Fraction:
        M = self.matrix_at(p)
        v = [as_fraction(t) for t in v]
        return sum(v[i] * M[i][j] * v[j] for i in range(self.d) for j in range(self.d))

    def s_gap(self, v, xi, S: PlaceSet) -> Fraction:
        """``|q(v) - xi|_S = max_p |q_p(v) - xi|_p``."""
        xi = as_fraction(xi)
        return max(abs_at(self.value(v, p) - xi, p) for p in S.places)

    def to_dict(self) -> dict:
        out = {"matrix": [[fraction_str(x) for x in row] for row in self.real]}
        if self.padic:
            out["padic"] = {str(p): [[fraction_str(x) for x in row] for row in M] for p, M in self.padic}
        return out


@dataclass(frozen=True)
class SInterval:
    """Open real interval ``(lo, hi)`` times p-adic balls ``p^e Z_p``.

    Primes of the form that are missing from ``padic`` use ``e = 0``.
    """

    lo: Fraction
    hi: Fraction
    padic: tuple = ()  # ((p, e), ...)

    def __post_init__(self):
        object.__setattr__(self, "lo", as_fraction(self.lo))
        object.__setattr__(self, "hi", as_fraction(self.hi))
        object.__setattr__(self, "padic", tuple(sorted((int(p), int(e)) for p, e in dict(self.padic).items())))

    @property
    def is_empty(self) -> bool:
        return self.lo >= self.hi

    def exponent(self, p: int) -> int:
        return dict(self.padic).get(p, 0)

    def to_dict(self) -> dict:
        out = {"lo": fraction_str(self.lo), "hi": fraction_str(self.hi)}
        if self.padic:
            out["padic"] = {str(p): e for p, e in self.padic}
        return out


def _strict_bound(T: RadiusVector, c: Fraction) -> int:
    """Largest integer ``K`` with ``K c < T_inf``."""
    r = T.inf_root
    K = max(0, int(float(T.inf_value) ** (1.0 / r) / float(c)) + 1)
    while K > 0 and (K * c) ** r >= T.inf_value:
        K -= 1
    while ((K + 1) * c) ** r < T.inf_value:
        K += 1
    return K


def _grid_for(T: RadiusVector, primes: Sequence[int]) -> tuple[Fraction, dict]:
    # ||v||_p < p^t  <=>  ||v||_p <= p^(t-1), so v lies in p^-(t-1) Z_p^d
    s = {p: T.t_of(p) - 1 for p in primes}
    c = Fraction(1)
    for p, e in s.items():
        c *= Fraction(p) ** (-e)
    return c, s


def _int_form(M) -> tuple[np.ndarray, int]:
    D = lcm_all(x.denominator for row in M for x in row)
    A = [[int(x * D) for x in row] for row in M]
    return np.array(A, dtype=object if max(abs(a) for row in A for a in row) > 2**20 else np.int64), D


def _box_rows(K: int, d: int, first: int) -> np.ndarray:
    tail = np.arange(-K, K + 1, dtype=np.int64)
    grid = np.stack(np.meshgrid(*([tail] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    return np.hstack([np.full((len(grid), 1), first, dtype=np.int64), grid])


def count_form_points(form: QuadraticFormS, I: SInterval, T: RadiusVector, cap: int = DEFAULT_CAP) -> int:
    """``#{v in Z_S^d : q(v) in I, ||v||_p < T_p for p in S}`` (origin included)."""
    if I.is_empty:
        return 0
    d = form.d
    c, s = _grid_for(T, form.primes)
    K = _strict_bound(T, c)
    if (2 * K + 1) ** d > cap:
        raise CapacityExceeded(f"{(2 * K + 1) ** d} candidates exceed the cap {cap}")
    Qf = np.array(form.real, dtype=float)
    c2 = float(c) ** 2
    lo, hi = float(I.lo), float(I.hi)
    tol = 1e-12 * d * d * float(np.abs(Qf).max()) * (K * float(c)) ** 2 + 1e-300
    conds = []
    for p, M in form.padic:
        Ai, D = _int_form(M)
        need = I.exponent(p) + 2 * s[p] + valuation(D, p)
        if need > 0:
            conds.append((Ai, p**need))
    total = 0
    for x0 in range(-K, K + 1):
        Z = _box_rows(K, d, x0)
        vals = np.einsum("ij,jk,ik->i", Z.astype(float), Qf, Z.astype(float)) * c2
        keep = (vals > lo) & (vals < hi)
        unc = (np.abs(vals - lo) <= tol) | (np.abs(vals - hi) <= tol)
        for i in np.nonzero(unc)[0]:
            val = form.value([c * int(t) for t in Z[i]])
            keep[i] = I.lo < val < I.hi
        for Ai, mod in conds:
            Zi = Z[keep].astype(Ai.dtype)
            ok = np.array([int(v) % mod == 0 for v in np.einsum("ij,jk,ik->i", Zi, Ai, Zi)], dtype=bool)
            idx = np.nonzero(keep)[0]
            keep[idx[~ok]] = False
        total += int(keep.sum())
    return total


def _slice_measure(a: float, b: np.ndarray, c: np.ndarray, h: float, T: float) -> np.ndarray:
    """Length of ``{z in (-T, T) : a z^2 + b z + c < h}`` for ``a != 0``."""
    disc = b * b - 4 * a * (c - h)
    ok = disc > 0
    s = np.sqrt(np.where(ok, disc, 0.0))
    r1 = (-b - s) / (2 * a)
    r2 = (-b + s) / (2 * a)
    inside = np.clip(np.minimum(np.maximum(r1, r2), T) - np.maximum(np.minimum(r1, r2), -T), 0.0, None)
    if a > 0:
        return np.where(ok, inside, 0.0)
    return np.where(ok, 2 * T - inside, 2 * T)


def real_form_volume(
    Q, lo: float, hi: float, T: float, rng: np.random.Generator, rel_err: float = 0.01, batch: int = 1 << 17, max_samples: int = 1 << 23
) -> tuple[float, float]:
    """Monte-Carlo volume of ``{x : ||x||_inf < T, lo < x^T Q x < hi}``.

    One coordinate with a nonzero diagonal entry is integrated exactly; the
    others are sampled uniformly.  Sampling stops once the relative
    standard error falls below ``rel_err`` or ``max_samples`` is reached.
    """
    Qf = np.array(Q, dtype=float)
    d = len(Qf)
    diag = [i for i in range(d) if Qf[i, i] != 0]
    if not diag:
        raise ValueError("form needs a nonzero diagonal entry for slice integration")
    i = diag[-1]
    rest = [j for j in range(d) if j != i]
    a = Qf[i, i]
    Qrr = Qf[np.ix_(rest, rest)]
    qi = Qf[i, rest]
    box = (2 * T) ** (d - 1)
    total = total_sq = 0.0
    n = 0
    while True:
        Y = rng.uniform(-T, T, size=(batch, d - 1))
        b = 2 * Y @ qi
        c = np.einsum("ij,jk,ik->i", Y, Qrr, Y)
        vals = (_slice_measure(a, b, c, hi, T) - _slice_measure(a, b, c, lo, T)) * box
        total += vals.sum()
        total_sq += (vals * vals).sum()
        n += batch
        mean = total / n
        var = max(total_sq / n - mean * mean, 0.0)
        err = math.sqrt(var / n)
        if (mean > 0 and err <= rel_err * mean) or n >= max_samples:
            return mean, err


def padic_form_volume(M, p: int, e: int, s: int, cap: int = 10**7) -> Fraction:
    """``vol{v in Q_p^d : ||v||_p <= p^s, q(v) in p^e Z_p}`` exactly.

    With ``v = p^-s z`` the condition only depends on ``z`` modulo ``p^K``.
    """
    Ai, D = _int_form(M)
    d = len(M)
    K = e + 2 * s + valuation(D, p)
    scale = Fraction(p) ** (d * s)
    if K <= 0:
        return scale
    mod = p**K
    if mod**d > cap:
        raise CapacityExceeded(f"{mod ** d} residues exceed the cap {cap}")
    hits = 0
    for z in itertools.product(range(mod), repeat=d):
        val = sum(int(Ai[i][j]) * z[i] * z[j] for i in range(d) for j in range(d))
        hits += val % mod == 0
    return scale * Fraction(hits, mod**d)


@dataclass
class ScanRecord:
    T: RadiusVector
    T_abs: float
    N: int
    V: float
    V_err: float
    d: int

    @property
    def residual(self) -> float:
        return self.N - self.V

    @property
    def normalized(self) -> float:
        return self.residual / self.T_abs ** (self.d - 2)

    @property
    def ratio(self) -> float:
        return self.N / self.V if self.V > 0 else (1.0 if self.N == 0 else math.inf)

    def row(self) -> dict:
        return {
            "T_inf": float(self.T.inf_value) ** (1.0 / self.T.inf_root),
            "t": ";".join(f"{p}:{e}" for p, e in self.T.t),
            "T_abs": self.T_abs,
            "N_T": self.N,
            "V_T": self.V,
            "V_err": self.V_err,
            "residual": self.residual,
            "normalized_residual": self.normalized,
            "ratio": self.ratio,
        }


@dataclass
class OppenheimScan:
    form: QuadraticFormS
    interval: SInterval
    records: list
    slope: Optional[float]

    def to_dict(self) -> dict:
        top = self.records[-1] if self.records else None
        return {
            "form": self.form.to_dict(),
            "interval": self.interval.to_dict(),
            "records": [r.row() for r in self.records],
            "slope": self.slope,
            "top_ratio": None if top is None else top.ratio,
        }


def _abs_T(T: RadiusVector) -> float:
    return float(T.inf_value) ** (1.0 / T.inf_root) * math.prod(p**e for p, e in T.t)


def form_volume(form: QuadraticFormS, I: SInterval, T: RadiusVector, rng: np.random.Generator, rel_err: float = 0.01) -> tuple[float, float]:
    """``V_T`` as (estimate, standard error); the finite places are exact."""
    if I.is_empty:
        return 0.0, 0.0
    T_inf = float(T.inf_value) ** (1.0 / T.inf_root)
    v, err = real_form_volume(form.real, float(I.lo), float(I.hi), T_inf, rng, rel_err)
    for p, M in form.padic:
        f = float(padic_form_volume(M, p, I.exponent(p), T.t_of(p) - 1))
        v, err = v * f, err * f
    return v, err


def oppenheim_scan(
    form: QuadraticFormS,
    I: SInterval,
    grid: Sequence[RadiusVector],
    seed: int = 0,
    rel_err: float = 0.01,
    cap: int = DEFAULT_CAP,
    fit_fraction: float = 0.5,
) -> OppenheimScan:
    """``N_T`` and ``V_T`` along a grid of radius vectors.

    Grid point ``i`` draws its Monte-Carlo stream from ``(seed, i)``.  The
    slope is fitted to ``log |N_T - V_T|`` against ``log |T|``.
    """
    if form.d < 3:
        raise ValueError("need d >= 3")
    if not form.is_isotropic_real:
        raise ValueError("the real form must be indefinite")
    records = []
    for i, T in enumerate(grid):
        N = count_form_points(form, I, T, cap)
        V, err = form_volume(form, I, T, batch_rng(seed, i), rel_err)
        records.append(ScanRecord(T, _abs_T(T), N, V, err, form.d))
    slope = fit_loglog([r.T_abs for r in records], [abs(r.residual) for r in records], fit_fraction)
    return OppenheimScan(form, I, records, slope)


@dataclass
class HaarOppenheim:
    T: RadiusVector
    ratios: list
    N_total: int
    V_total: float
    band: tuple = (0.9, 1.1)

    @property
    def aggregate_ratio(self) -> float:
        return self.N_total / self.V_total

    @property
    def pass_rate(self) -> float:
        lo, hi = self.band
        return sum(lo <= r <= hi for r in self.ratios) / len(self.ratios)

    @property
    def passed(self) -> bool:
        lo, hi = self.band
        return lo <= self.aggregate_ratio <= hi

    def to_dict(self) -> dict:
        return {
            "T_abs": _abs_T(self.T),
            "samples": len(self.ratios),
            "ratios": self.ratios,
            "aggregate_ratio": self.aggregate_ratio,
            "pass_rate": self.pass_rate,
            "band": list(self.band),
            "verdict": "pass" if self.passed else "fail",
        }


def _haar_job(args):
    matrix, I, T, seed, i, rel_err, cap = args
    rng = batch_rng(seed, i)
    g = sample_real_lattice(len(matrix), rng).basis
    form = QuadraticFormS(matrix).composed(g)
    N = count_form_points(form, I, T, cap)
    V, _ = form_volume(form, I, T, rng, rel_err)
    return N, V


def oppenheim_haar(
    matrix,
    I: SInterval,
    T: RadiusVector,
    n_forms: int,
    seed: int = 0,
    rel_err: float = 0.01,
    band: tuple = (0.9, 1.1),
    cap: int = DEFAULT_CAP,
    workers: int | None = None,
) -> HaarOppenheim:
    """``N_T/V_T`` for ``q_0 o g`` over Haar-random ``g`` (real place only).

    Reports each sample's ratio and the pooled ratio ``sum N / sum V``.
    """
    jobs = [(matrix, I, T, seed, i, rel_err, cap) for i in range(n_forms)]
    out = _map(_haar_job, jobs, workers)
    return HaarOppenheim(
        T,
        [N / V if V > 0 else math.inf for N, V in out],
        sum(N for N, _ in out),
        sum(V for _, V in out),
        tuple(band),
    )


# --------------------------------------------------------------------------
# small values


class SearchBudgetExceeded(RuntimeError):
    """No vector within the norm budget reaches the requested accuracy."""


@dataclass
class EpsRecord:
    eps: Fraction
    v: Optional[tuple]
    norm: Optional[Fraction]
    gap: Optional[Fraction]

    @property
    def status(self) -> str:
        return "found" if self.v is not None else "budget_exceeded"

    def row(self) -> dict:
        return {
            "eps": float(self.eps),
            "status": self.status,
            "v": "" if self.v is None else " ".join(fraction_str(t) for t in self.v),
            "norm": None if self.norm is None else float(self.norm),
            "gap": None if self.gap is None else float(self.gap),
        }


@dataclass
class EpsSearch:
    d: int
    records: list
    slope: Optional[float]

    @property
    def expected_slope(self) -> float:
        return -1.0 / (self.d - 2)

    def to_dict(self) -> dict:
        return {
            "records": [r.row() for r in self.records],
            "slope": self.slope,
            "expected_slope": self.expected_slope,
            "budget_exceeded": sum(r.v is None for r in self.records),
        }


def _shell(r: int, d: int) -> np.ndarray:
    """Integer vectors with sup norm exactly ``r`` (lexicographic order)."""
    rng_ = np.arange(-r, r + 1, dtype=np.int64)
    Z = np.stack(np.meshgrid(*([rng_] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return Z[np.abs(Z).max(axis=1) == r]


def _candidates_S(S: PlaceSet, d: int, R: int):
    """All nonzero ``v in Z_S^d`` with ``||v||_S <= R``."""
    dens = [1]
    for p in S.primes:
        dens = [m * p**a for m in dens for a in range(0, int(math.log(R, p)) + 1 if R >= p else 1)]
    seen = set()
    for m in sorted(dens):
        K = R * m
        for z in itertools.product(range(-K, K + 1), repeat=d):
            if not any(z):
                continue
            v = tuple(Fraction(t, m) for t in z)
            if v in seen:
                continue
            seen.add(v)
            n = max(norm_at(v, p) for p in S.places)
            if n <= R:
                yield n, v


def epsilon_min_search(
    form: QuadraticFormS,
    xi,
    eps_grid: Sequence,
    S: PlaceSet | None = None,
    max_norm: int = 60,
    fit_fraction: float = 0.5,
    strict: bool = False,
) -> EpsSearch:
    """For each ``eps`` the nonzero ``v in Z_S^d`` of least ``||v||_S`` with ``|q(v) - xi|_S < eps``.

    Ties in norm go to the smallest gap, then to the first vector in
    lexicographic order.  Values of ``eps`` not reached within ``max_norm``
    are reported with ``v = None`` (or raise with ``strict=True``).
    """
    S = S or PlaceSet()
    if tuple(S.primes) != form.primes:
        raise ValueError("form and place set disagree")
    xi = as_fraction(xi)
    eps = sorted((as_fraction(e) for e in eps_grid), reverse=True)
    if any(e <= 0 for e in eps):
        raise ValueError("eps must be positive")
    found: dict = {}
    pending = list(eps)
    d = form.d

    def settle(level_norm, best_gap, best_v):
        while pending and best_gap < pending[0]:
            found[pending.pop(0)] = (best_v, level_norm, best_gap)

    if S.is_real:
        Qf = np.array(form.real, dtype=float)
        xf = float(xi)
        for r in range(1, max_norm + 1):
            if not pending:
                break
            Z = _shell(r, d)
            gaps = np.abs(np.einsum("ij,jk,ik->i", Z.astype(float), Qf, Z.astype(float)) - xf)
            tol = 1e-12 * d * d * float(np.abs(Qf).max()) * r * r + 1e-12 * abs(xf)
            near = np.nonzero(gaps <= gaps.min() + 2 * tol)[0]
            exact = [(abs(form.value(Z[i]) - xi), i) for i in near]
            g, i = min(exact)
            settle(Fraction(r), g, tuple(Fraction(int(t)) for t in Z[i]))
    else:
        level = None
        best = None
        for n, v in sorted(_candidates_S(S, d, max_norm), key=lambda nv: (nv[0], nv[1])):
            if not pending:
                break
            if level is not None and n != level:
                settle(level, *best)
                best = None
            level = n
            g = form.s_gap(v, xi, S)
            if best is None or g < best[0]:
                best = (g, v)
        if best is not None and pending:
            settle(level, *best)
    records = []
    for e in eps:
        if e in found:
            v, n, g = found[e]
            records.append(EpsRecord(e, v, n, g))
        else:
            if strict:
                raise SearchBudgetExceeded(f"eps={e} not reached with norm <= {max_norm}")
            records.append(EpsRecord(e, None, None, None))
    got = [r for r in records if r.v is not None]
    slope = fit_loglog([1 / float(r.eps) for r in got], [float(r.norm) for r in got], fit_fraction)
    return EpsSearch(d, records, None if slope is None else -slope)


# --------------------------------------------------------------------------
# star bodies


def normalized(A: Region) -> Region:
    """Dilate ``A`` to unit volume."""
    vol = A.volume()
    if vol <= 0:
        raise ValueError("region has zero volume")
    if vol == 1:
        return A
    return A.dilate(RadiusVector.from_pow(A.d, 1 / vol))


@dataclass
class GaussRecord:
    T: RadiusVector
    N: int
    main: Fraction

    @property
    def residual(self) -> Fraction:
        return self.N - self.main

    def row(self) -> dict:
        return {
            "T_inf": float(self.T.inf_value) ** (1.0 / self.T.inf_root),
            "t": ";".join(f"{p}:{e}" for p, e in self.T.t),
            "T_abs": _abs_T(self.T),
            "N": self.N,
            "main": float(self.main),
            "residual": float(self.residual),
        }


@dataclass
class GaussScan:
    d: int
    records: list
    exponent: Optional[float]

    @property
    def all_zero(self) -> bool:
        return all(r.residual == 0 for r in self.records)

    def to_dict(self) -> dict:
        return {
            "records": [r.row() for r in self.records],
            "exponent": self.exponent,
            "reference_exponent": self.d / 2,
            "all_zero": self.all_zero,
        }


def gauss_star_scan(
    A0: Region, lat: SLattice, grid: Sequence[RadiusVector], cap: int = DEFAULT_CAP, fit_fraction: float = 0.5
) -> GaussScan:
    """``N(Lambda, T A0) - |T|^d`` along ``grid`` with ``A0`` rescaled to unit volume.

    Counts include the origin.  The exponent is fitted to the absolute
    residuals; zero residuals are left out of the fit.
    """
    A = normalized(A0)
    d = A.d
    records = [GaussRecord(T, count_points(lat, A.dilate(T), cap), T.abs_pow(d)) for T in grid]
    exponent = fit_loglog([_abs_T(r.T) for r in records], [abs(float(r.residual)) for r in records], fit_fraction)
    return GaussScan(d, records, exponent)


# --------------------------------------------------------------------------
# dyadic remainders


def dyadic_pairs(ell: int) -> list[tuple[int, int]]:
    return [(u * 2**t, (u + 1) * 2**t) for t in range(ell + 1) for u in range(2 ** (ell - t))]


@dataclass
class DyadicResult:
    ell: int
    delta_prime: Fraction
    Jf: dict
    statistic: Fraction
    remainders: list
    Jf_alt: Optional[dict] = None
    statistic_alt: Optional[Fraction] = None

    @property
    def threshold(self) -> mpmath.mpf:
        return (self.ell + 1) * mpmath.mpf(2) ** (self.ell * (1 + mpmath.mpf(self.delta_prime.numerator) / self.delta_prime.denominator))

    @property
    def exceeds(self) -> bool:
        return mpmath.mpf(self.statistic.numerator) / self.statistic.denominator >= self.threshold

    @property
    def independent(self) -> bool:
        return self.statistic_alt is None or self.statistic == self.statistic_alt

    def to_dict(self) -> dict:
        return {
            "ell": self.ell,
            "pairs": len(self.remainders),
            "delta_prime": fraction_str(self.delta_prime),
            "Jf": {str(p): t for p, t in self.Jf.items()},
            "statistic": fraction_str(self.statistic),
            "statistic_float": float(self.statistic),
            "threshold": float(self.threshold),
            "exceeds_threshold": self.exceeds,
            "Jf_alt": None if self.Jf_alt is None else {str(p): t for p, t in self.Jf_alt.items()},
            "statistic_alt": None if self.statistic_alt is None else fraction_str(self.statistic_alt),
            "independent": self.independent,
        }


def _dyadic_statistic(A: Region, lat: SLattice, ell: int, Jf: Mapping[int, int], cap: int) -> tuple[Fraction, list]:
    d = A.d
    mu = A.volume()
    J_d = math.prod((Fraction(p) ** (t * d) for p, t in Jf.items()), start=Fraction(1))
    origin = int(A.contains((0,) * d))
    counts: dict = {0: 0}

    def nonzero(N: int) -> int:
        if N not in counts:
            T = RadiusVector.from_pow(d, N / J_d, Jf)
            counts[N] = count_points(lat, A.dilate(T), cap) - origin
        return counts[N]

    rem = [(N1, N2, nonzero(N2) - nonzero(N1) - (N2 - N1) * mu) for N1, N2 in dyadic_pairs(ell)]
    return sum((r * r for *_, r in rem), Fraction(0)), rem


def dyadic_stats(
    A: Region,
    lat: SLattice,
    ell: int,
    delta_prime=Fraction(1, 2),
    Jf: Mapping[int, int] | None = None,
    cap: int = DEFAULT_CAP,
) -> DyadicResult:
    """``sum over K_ell of R_A(N1, N2, J)^2`` and the threshold ``(ell+1) 2^ell psi(ell)``.

    ``psi(ell) = 2^(ell delta')``.  When ``S`` has a prime, the statistic is
    recomputed with ``J`` multiplied by the first prime.
    """
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    primes = lat.primes
    Jf = {p: int((Jf or {}).get(p, 0)) for p in primes}
    if any(t < 0 for t in Jf.values()):
        raise ValueError("J^f exponents must be nonnegative")
    stat, rem = _dyadic_statistic(A, lat, ell, Jf, cap)
    out = DyadicResult(ell, as_fraction(delta_prime), Jf, stat, rem)
    if primes:
        alt = dict(Jf)
        alt[primes[0]] += 1
        out.Jf_alt = alt
        out.statistic_alt, _ = _dyadic_statistic(A, lat, ell, alt, cap)
    return out


# --------------------------------------------------------------------------
# nested regions


@dataclass
class SandwichReport:
    trials: int
    violations: int
    min_slack: Fraction
    first_violation: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "violations": self.violations,
            "min_slack_float": float(self.min_slack),
            "first_violation": self.first_violation,
            "verdict": "pass" if self.passed else "fail",
        }


def _nested_reals(d: int, rng: np.random.Generator):
    if rng.random() < 0.5:
        r = sorted(Fraction(int(x), 8) for x in rng.integers(2, 13, size=3))
        return [SupBall(d, x) for x in r]
    base = StarShaped(d=d, grid=2)
    keys = list(base.cells())
    radii = {k: sorted(Fraction(int(x), 8) for x in rng.integers(2, 13, size=3)) for k in keys}
    return [StarShaped(d=d, grid=2, rho={k: radii[k][i] for k in keys}) for i in range(3)]


def _sandwich_job(args):
    d, S, seed, index, m = args
    rng = batch_rng(seed, index)
    cfg = SamplerConfig(d=d, seed=seed, padic_m=m, S=S)
    lat = sample_lattice(cfg, rng)
    reals = _nested_reals(d, rng)
    exps = {p: sorted(int(x) for x in rng.integers(-1, 2, size=3)) for p in S.primes}
    regions = [ProductRegion.make(reals[i], S, [PadicSet.ball(p, d, exps[p][i]) for p in S.primes]) for i in range(3)]
    A1, A, A2 = regions
    pts = enumerate_points(lat, A2)
    nonzero = [z for z in pts if any(z)]
    n2 = len(nonzero)
    n = sum(point_in(lat, A, z) for z in nonzero)
    n1 = sum(point_in(lat, A1, z) for z in nonzero)
    mu1, mu, mu2 = (R.volume() for R in regions)
    lhs = abs(n - mu)
    rhs = max(abs(n1 - mu1), abs(n2 - mu2)) + (mu2 - mu1)
    return index, rhs - lhs, {"N": [n1, n, n2], "mu": [fraction_str(x) for x in (mu1, mu, mu2)]}


def sandwich_check(n: int, d: int = 3, S: PlaceSet | None = None, seed: int = 0, padic_m: int = 4, workers: int | None = None) -> SandwichReport:
    """Check ``|N(A) - mu(A)| <= max_i |N(A_i) - mu(A_i)| + mu(A_2 - A_1)`` on random ``A_1 <= A <= A_2``.

    Counts are of nonzero points of a Haar-random lattice; triple ``i`` uses
    the stream ``(seed, i)``.
    """
    S = S or PlaceSet()
    out = _map(_sandwich_job, [(d, S, seed, i, padic_m) for i in range(n)], workers)
    bad = [(i, s, info) for i, s, info in out if s < 0]
    first = None
    if bad:
        i, s, info = bad[0]
        first = {"trial": i, "slack": fraction_str(s), **info}
    return SandwichReport(n, len(bad), min((s for _, s, _ in out), default=Fraction(0)), first)


@dataclass
class DifferenceCheck:
    correction: Fraction
    volume: Fraction
    constant: mpmath.mpf
    M: int

    @property
    def passed(self) -> bool:
        return mpmath.mpf(self.correction.numerator) / self.correction.denominator <= self.constant * (
            mpmath.mpf(self.volume.numerator) / self.volume.denominator
        )

    def to_dict(self) -> dict:
        return {
            "correction_float": float(self.correction),
            "volume": fraction_str(self.volume),
            "constant": float(self.constant),
            "M": self.M,
            "verdict": "pass" if self.passed else "fail",
        }


def difference_correction_check(ball: ProductRegion, T1: RadiusVector, T2: RadiusVector, S: PlaceSet, M: int = 24) -> DifferenceCheck:
    """Truncated correction series of ``T2 B - T1 B`` against ``4 zeta(d-1)/zeta(d)`` times its volume.

    The truncated sum has only nonnegative terms, so it is a lower bound for
    the full series and exceeding the bound would be a genuine failure.
    """
    if not T1 <= T2:
        raise ValueError("need T1 <= T2")
    d = ball.d
    diff = difference(ball.dilate(T2), ball.dilate(T1))
    series = moment_series(diff, 2, d, S, M=M)
    return DifferenceCheck(series.correction, diff.volume(), zeta_constant(d), M)
