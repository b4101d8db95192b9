"""Haar-random unimodular S-lattices and Monte-Carlo moment estimates.

Real factors are drawn from a fundamental domain of ``SL_d(Z)`` in
``SL_d(R)`` for ``d`` in ``{2, 3}`` and rounded to dyadic rationals with the
determinant kept exactly 1.  Finite-place factors are uniform matrices mod
``p^m`` that are invertible mod ``p``.

Randomness is split into batches; batch ``i`` uses the stream
``numpy.random.default_rng([seed, i])``, so results do not depend on how
many worker processes run the batches.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .lattices import PadicComponent, SLattice, UnsupportedDimension, siegel_transform
from .linalg import frac_det
from .qs_core import PlaceSet, fraction_str
from .regions import Region
from .rogers import moment_series, zeta_constant

WORKERS_ENV = "SROGERS_WORKERS"


@dataclass(frozen=True)
class SamplerConfig:
    d: int = 3
    seed: int = 0
    precision: int = 40  # dyadic digits of the real basis
    padic_m: int = 8
    batch_size: int = 250
    S: PlaceSet = field(default_factory=PlaceSet)

    def __post_init__(self):
        if self.d not in (2, 3):
            raise UnsupportedDimension("the real sampler supports d = 2 or 3")
        if self.precision < 8 or self.padic_m < 1 or self.batch_size < 1:
            raise ValueError("invalid sampler configuration")


def _dyadic(x: float, bits: int) -> Fraction:
    return Fraction(round(x * 2**bits), 2**bits)


def batch_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


# --------------------------------------------------------------------------
# finite places


def sample_padic_component(d: int, p: int, m: int, rng: np.random.Generator) -> PadicComponent:
    """Uniform element of ``GL_d(Z/p^m)`` by rejection."""
    mod = p**m
    while True:
        M = [[int(rng.integers(0, mod)) for _ in range(d)] for _ in range(d)]
        if int(frac_det(M)) % p:
            return PadicComponent(p, m, tuple(map(tuple, M)))


def padic_acceptance(d: int, p: int) -> Fraction:
    return math.prod((1 - Fraction(1, p**i) for i in range(1, d + 1)), start=Fraction(1))


# --------------------------------------------------------------------------
# real place


def _rotation2(rng, bits) -> list[list[Fraction]]:
    # (u + iv)^2 / |u + iv|^2 has a uniform angle when (u, v) is Gaussian
    while True:
        u, v = (_dyadic(t, bits) for t in rng.standard_normal(2))
        n = u * u + v * v
        if n:
            return [[(u * u - v * v) / n, -2 * u * v / n], [2 * u * v / n, (u * u - v * v) / n]]


def _rotation3(rng, bits) -> list[list[Fraction]]:
    # rotation of a Gaussian quaternion: Haar on SO(3), exact for rational entries
    while True:
        a, b, c, d = (_dyadic(t, bits) for t in rng.standard_normal(4))
        n = a * a + b * b + c * c + d * d
        if n:
            break
    return [
        [(a * a + b * b - c * c - d * d) / n, 2 * (b * c - a * d) / n, 2 * (b * d + a * c) / n],
        [2 * (b * c + a * d) / n, (a * a - b * b + c * c - d * d) / n, 2 * (c * d - a * b) / n],
        [2 * (b * d - a * c) / n, 2 * (c * d + a * b) / n, (a * a - b * b - c * c + d * d) / n],
    ]


def _matmul(A, B):
    return [[sum(A[i][k] * B[k][j] for k in range(len(B))) for j in range(len(B[0]))] for i in range(len(A))]


@dataclass(frozen=True)
class RealSample:
    basis: tuple
    params: dict


def sample_fd2(rng: np.random.Generator) -> tuple[float, float]:
    """``(x, y)`` from the modular fundamental domain with density ``3/(pi y^2)``."""
    u, u2 = rng.random(2)
    x = math.sin(u * math.pi / 3 - math.pi / 6)
    y = math.sqrt(1 - x * x) / (1 - u2)
    return x, y


def y_cdf(y: float) -> float:
    """Distribution function of ``Im(tau)`` on the modular fundamental domain."""
    if y < math.sqrt(3) / 2:
        return 0.0
    if y >= 1:
        return 1 - 3 / (math.pi * y)
    w = math.sqrt(1 - y * y)
    return 1 - (3 / math.pi) * (2 * math.asin(w) + (1 - 2 * w) / y)


def sample_real_lattice(d: int, rng: np.random.Generator, bits: int = 40, max_tries: int = 100_000) -> RealSample:
    if d == 2:
        return _sample_real2(rng, bits)
    if d == 3:
        for _ in range(max_tries):
            s = _propose3(rng, bits)
            if attains_successive_minima(s.basis):
                return s
        raise RuntimeError("d=3 sampler did not accept within max_tries")
    raise UnsupportedDimension("the real sampler supports d = 2 or 3")


def _sample_real2(rng, bits) -> RealSample:
    x, y = sample_fd2(rng)
    k = _rotation2(rng, bits)
    a1 = _dyadic(1 / math.sqrt(y), bits)
    a2 = 1 / a1
    xq = _dyadic(x, bits)
    an = [[a1, a1 * xq], [Fraction(0), a2]]
    return RealSample(tuple(map(tuple, _matmul(k, an))), {"x": x, "y": float(a2 / a1)})


# Siegel box containing every Minkowski-reduced basis after sign normalisation
SIEGEL_S = 1.5
SIEGEL_N23 = 1.0


def _propose3(rng, bits) -> RealSample:
    # density of (s1, s2) = (a1/a2, a2/a3) is proportional to s1 s2 on (0, 1.5]^2
    s1, s2 = SIEGEL_S * np.sqrt(rng.random(2))
    n12, n13 = 0.5 * rng.random(2)
    n23 = SIEGEL_N23 * (2 * rng.random() - 1)
    a1f = (s1 * s1 * s2) ** (1 / 3)
    a1 = _dyadic(a1f, bits)
    a2 = _dyadic(a1f / s1, bits)
    a3 = 1 / (a1 * a2)
    N = [[1, _dyadic(n12, bits), _dyadic(n13, bits)], [0, 1, _dyadic(n23, bits)], [0, 0, 1]]
    AN = [[a1 * N[0][j] for j in range(3)], [a2 * N[1][j] for j in range(3)], [a3 * N[2][j] for j in range(3)]]
    k = _rotation3(rng, bits)
    g = _matmul(k, AN)
    return RealSample(tuple(tuple(Fraction(x) for x in row) for row in g), {"s1": s1, "s2": s2, "n": (n12, n13, n23)})


def _sq(v) -> Fraction:
    return sum(x * x for x in v)


def attains_successive_minima(basis) -> bool:
    """Whether the columns ``b_1, b_2, b_3`` attain the Euclidean successive minima."""
    d = len(basis)
    cols = [tuple(basis[i][j] for i in range(d)) for j in range(d)]
    lens = [_sq(c) for c in cols]
    if any(lens[i] > lens[i + 1] for i in range(d - 1)):
        return False
    B = np.array([[float(x) for x in row] for row in basis])
    Binv = np.linalg.inv(B)
    rmax = math.sqrt(float(lens[-1])) * (1 + 1e-9)
    bounds = [int(math.floor(rmax * np.linalg.norm(row))) for row in Binv]
    grids = np.stack(np.meshgrid(*[np.arange(-K, K + 1) for K in bounds], indexing="ij"), -1).reshape(-1, d)
    X = grids @ B.T
    n2 = np.einsum("ij,ij->i", X, X)
    fl = [float(t) for t in lens]
    for z, val in zip(grids, n2):
        if not z.any():
            continue
        # level: number of leading basis vectors z is independent of
        last = max(i for i in range(d) if z[i])
        for level in range(last + 1):
            # z lies outside span(b_1..b_level) iff some coefficient at index >= level is nonzero
            if val < fl[level] * (1 - 1e-12):
                return False
            if val <= fl[level] * (1 + 1e-12):
                v = [sum(basis[i][j] * int(z[j]) for j in range(d)) for i in range(d)]
                if _sq(v) < lens[level]:
                    return False
    return True


def sample_lattice(cfg: SamplerConfig, rng: np.random.Generator) -> SLattice:
    real = sample_real_lattice(cfg.d, rng, cfg.precision)
    pad = tuple(sample_padic_component(cfg.d, p, cfg.padic_m, rng) for p in cfg.S.primes)
    return SLattice(cfg.d, real.basis, pad)


# --------------------------------------------------------------------------
# Monte Carlo


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _batch_values(args) -> list[int]:
    cfg, A, index, size, stat = args
    rng = batch_rng(cfg.seed, index)
    out = []
    for _ in range(size):
        lat = sample_lattice(cfg, rng)
        out.append(_STATS[stat](A, lat))
    return out


def _count_nonzero(A, lat) -> int:
    return siegel_transform(A, lat, 1, include_zero=False)


_STATS: dict[str, Callable] = {"count": _count_nonzero}


def sample_statistic(A: Region, n: int, cfg: SamplerConfig, stat: str = "count", workers: int | None = None) -> np.ndarray:
    """``stat(A, Lambda)`` for ``n`` lattices, in batch order."""
    sizes = []
    left = n
    while left > 0:
        sizes.append(min(cfg.batch_size, left))
        left -= sizes[-1]
    jobs = [(cfg, A, i, s, stat) for i, s in enumerate(sizes)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_batch_values, jobs))
    else:
        parts = [_batch_values(j) for j in jobs]
    return np.array([v for part in parts for v in part], dtype=np.int64)


@dataclass
class MomentEstimate:
    k: int
    n: int
    mean: float
    stderr: float
    target: float
    tail: float = 0.0
    target_exact: Optional[str] = None

    @property
    def zscore(self) -> float:
        if self.stderr == 0:
            return 0.0 if abs(self.mean - self.target) <= self.tail else math.inf
        # the tail widens the target interval [target, target + tail]
        if self.mean < self.target:
            return (self.target - self.mean) / self.stderr
        if self.mean > self.target + self.tail:
            return (self.mean - self.target - self.tail) / self.stderr
        return 0.0

    def agrees(self, sigmas: float = 3.0) -> bool:
        return self.zscore <= sigmas

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "mean": self.mean,
            "stderr": self.stderr,
            "target": self.target,
            "target_exact": self.target_exact,
            "tail": self.tail,
            "z": self.zscore,
            "verdict": "pass" if self.agrees() else "fail",
        }


def mc_moment(A: Region, k: int, n: int, cfg: SamplerConfig, M: int = 200, workers: int | None = None) -> MomentEstimate:
    """Monte-Carlo mean of ``f~^k`` against the exact (or truncated) target."""
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    if k == 2 and cfg.d < 3:
        raise ValueError("the second moment needs d >= 3")
    if n < 2:
        raise ValueError("need at least two samples")
    if A.volume() == 0:
        return MomentEstimate(k, n, 0.0, 0.0, 0.0, 0.0, "0")
    series = moment_series(A, k, cfg.d, cfg.S, M=M)
    vals = sample_statistic(A, n, cfg, workers=workers).astype(float) ** k
    tail = float(series.tail_bound or 0)
    return MomentEstimate(
        k,
        n,
        float(vals.mean()),
        float(vals.std(ddof=1) / math.sqrt(n)),
        float(series.value),
        tail,
        _short_fraction(series.value),
    )


def _short_fraction(x: Fraction, limit: int = 120) -> Optional[str]:
    text = fraction_str(x)
    return text if len(text) <= limit else None


@dataclass
class EmptyEstimate:
    n: int
    empty: int
    frequency: float
    stderr: float
    bound: float

    @property
    def passes(self) -> bool:
        return self.frequency <= self.bound + 3 * self.stderr

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "empty": self.empty,
            "frequency": self.frequency,
            "stderr": self.stderr,
            "bound": self.bound,
            "verdict": "pass" if self.passes else "fail",
        }


def empty_probability(A: Region, n: int, cfg: SamplerConfig, workers: int | None = None) -> EmptyEstimate:
    """Frequency of lattices with no nonzero point in ``A`` and the bound ``C/mu(A)``."""
    if cfg.d < 3:
        raise ValueError("the ball-product constant is finite only for d >= 3")
    counts = sample_statistic(A, n, cfg, workers=workers)
    empty = int((counts == 0).sum())
    freq = empty / n
    bound = float(zeta_constant(cfg.d)) / float(A.volume())
    return EmptyEstimate(n, empty, freq, math.sqrt(freq * (1 - freq) / n), bound)
