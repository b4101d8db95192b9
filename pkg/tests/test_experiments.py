import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from srogers.experiments import (
    QuadraticFormS,
    SearchBudgetExceeded,
    SInterval,
    blowup_overlap,
    blowup_region,
    blowup_volume,
    count_form_points,
    difference_correction_check,
    dyadic_pairs,
    dyadic_stats,
    epsilon_min_search,
    fit_loglog,
    form_volume,
    gauss_star_scan,
    normalized,
    oppenheim_haar,
    oppenheim_scan,
    padic_form_volume,
    real_form_volume,
    sandwich_check,
    variance_family,
)
from srogers.lattices import SLattice, enumerate_points
from srogers.qs_core import PlaceSet, abs_at, valuation
from srogers.regions import Box, PadicSet, ProductRegion, RadiusVector, SupBall, overlap_volume
from srogers.sampling import SamplerConfig, batch_rng, sample_lattice

R0 = PlaceSet(())
S3 = PlaceSet((3,))
LORENTZ = [[1, 0, 0], [0, 1, 0], [0, 0, -1]]


def qval(M, v):
    return sum(Fraction(M[i][j]) * v[i] * v[j] for i in range(len(v)) for j in range(len(v)))


class TestVarianceFamily:
    def test_first_volume(self):
        assert blowup_volume(3, 3, 1) == Fraction(632, 27)
        assert blowup_region(3, 3, 1).volume() == Fraction(632, 27)

    @pytest.mark.parametrize("p,d,k", [(3, 3, 1), (3, 3, 3), (5, 3, 2), (3, 4, 2)])
    def test_region_volume_matches_closed_form(self, p, d, k):
        assert blowup_region(p, d, k).volume() == blowup_volume(p, d, k)

    @pytest.mark.parametrize("k", [1, 2])
    def test_overlaps_match_region_code(self, k):
        A = blowup_region(3, 3, k)
        for q in (2, 4, 5):
            for w in [w for w in (1, q - 1) if w % 3]:
                for m in range(2 * k + 1):
                    assert overlap_volume(A, q, Fraction(w, 3**m)) == blowup_overlap(3, 3, k, q, m)

    @pytest.mark.parametrize("k", [1, 2])
    def test_lower_bound_is_direct_sum(self, k):
        # recompute the kept terms by summing region overlaps one by one
        Q = 7
        A = blowup_region(3, 3, k)
        direct = Fraction(0)
        for q in range(2, Q + 1):
            if q % 3 == 0:
                continue
            for w in range(1, q):
                if math.gcd(w, q) == 1 and w % 3:
                    direct += sum(overlap_volume(A, q, Fraction(w, 3**m)) for m in range(2 * k + 1))
        fam = variance_family(3, 3, k, Q=Q)
        assert fam.rows[-1].lower_bound == direct

    def test_ratio_bounded_below(self):
        fam = variance_family(3, 3, 10, Q=200, verify_Q=4)
        assert [r.volume for r in fam.rows] == [blowup_volume(3, 3, k) for k in range(1, 11)]
        assert all(r.overlap_mismatches == 0 and r.overlaps_checked > 0 for r in fam.rows)
        assert fam.min_ratio > 0 and fam.passed
        # the ratios decrease towards the positive limit
        ratios = [r.ratio for r in fam.rows]
        assert all(a >= b for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] >= fam.limit > 0

    def test_correction_outgrows_any_linear_bound(self):
        fam = variance_family(3, 3, 10, Q=100)
        per_volume = [r.lower_bound / r.volume for r in fam.rows]
        assert per_volume[-1] > 5 * per_volume[0]

    def test_argument_checks(self):
        with pytest.raises(ValueError):
            variance_family(2, 3, 2)
        with pytest.raises(ValueError):
            variance_family(3, 2, 2)


def brute_form_count(M, I, T_inf, S, t=None):
    """Direct search over ``p^-s Z`` grids with exact local checks."""
    t = t or {}
    den = math.prod(p ** (t.get(p, 0) - 1) if t.get(p, 0) > 1 else 1 for p in S.primes)
    K = math.ceil(T_inf * den)
    n = 0
    for z in itertools.product(range(-K, K + 1), repeat=len(M)):
        v = [Fraction(x, den) for x in z]
        if max(abs(x) for x in v) >= T_inf:
            continue
        if any(max(abs_at(x, p) for x in v) >= Fraction(p) ** t.get(p, 0) for p in S.primes):
            continue
        val = qval(M, v)
        if not I.lo < val < I.hi:
            continue
        if any(val != 0 and valuation(val, p) < I.exponent(p) for p in S.primes):
            continue
        n += 1
    return n


class TestFormCounting:
    @pytest.mark.parametrize("T", [Fraction(3, 2), 4, Fraction(13, 2)])
    def test_real_counts(self, T):
        I = SInterval(Fraction(-5, 4), Fraction(3, 2))
        form = QuadraticFormS(LORENTZ)
        got = count_form_points(form, I, RadiusVector(Fraction(T)))
        assert got == brute_form_count(LORENTZ, I, Fraction(T), R0)

    def test_tiny_T_counts_origin_and_units(self):
        # only 0 and vectors with entries in {-1, 0, 1}
        I = SInterval(Fraction(-1, 4), Fraction(1, 4))
        form = QuadraticFormS(LORENTZ)
        got = count_form_points(form, I, RadiusVector(Fraction(3, 2)))
        want = sum(1 for z in itertools.product((-1, 0, 1), repeat=3) if z[0] ** 2 + z[1] ** 2 == z[2] ** 2)
        assert got == want == 9

    @pytest.mark.parametrize("t,e", [(1, 0), (2, 0), (2, 1), (2, 2)])
    def test_s_arithmetic_counts(self, t, e):
        M = [[1, 0, 0], [0, 2, 0], [0, 0, -1]]
        form = QuadraticFormS.diagonal_embedding(M, S3)
        I = SInterval(-2, 3, {3: e})
        T = RadiusVector(Fraction(2), {3: t})
        assert count_form_points(form, I, T) == brute_form_count(M, I, Fraction(2), S3, {3: t})

    def test_empty_interval(self):
        form = QuadraticFormS(LORENTZ)
        I = SInterval(1, 1)
        assert count_form_points(form, I, RadiusVector(Fraction(10))) == 0
        assert form_volume(form, I, RadiusVector(Fraction(10)), batch_rng(0, 0)) == (0.0, 0.0)

    def test_form_validation(self):
        with pytest.raises(ValueError):
            QuadraticFormS([[1, 2], [0, 1]])
        with pytest.raises(ValueError):
            QuadraticFormS([[1, 0], [0, 0]])
        with pytest.raises(ValueError):
            QuadraticFormS(LORENTZ, ((3, [[Fraction(1, 3), 0, 0], [0, 1, 0], [0, 0, 1]]),))

    def test_composed_form(self):
        g = [[Fraction(1), Fraction(1), 0], [0, Fraction(1), 0], [0, 0, Fraction(1)]]
        form = QuadraticFormS(LORENTZ).composed(g)
        v = (2, -1, 3)
        gv = [sum(g[i][j] * v[j] for j in range(3)) for i in range(3)]
        assert form.value(v) == qval(LORENTZ, gv)
        assert form.signature() == (2, 1) and form.is_isotropic_real


class TestVolumes:
    def test_sphere_shell(self):
        Q = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
        v, err = real_form_volume(Q, 1.0, 4.0, 3.0, batch_rng(1, 0), rel_err=0.002)
        exact = 4 / 3 * math.pi * (8 - 1)
        assert abs(v - exact) < 4 * err + 1e-9

    def test_box_truncates(self):
        # everything with |q| < huge inside the box: the box itself
        v, err = real_form_volume(LORENTZ, -1e9, 1e9, 2.0, batch_rng(2, 0))
        assert v == pytest.approx(64.0) and err == pytest.approx(0.0, abs=1e-9)

    def test_hyperbolic_slab(self):
        # |x^2 - y^2| < 1 in a square, exactly integrable in one variable
        Q = [[1, 0], [0, -1]]
        v, err = real_form_volume(Q, -1.0, 1.0, 3.0, batch_rng(3, 0), rel_err=0.002)
        xs = np.linspace(-3, 3, 200_001)
        upper = np.sqrt(np.minimum(xs**2 + 1, 9))
        lower = np.sqrt(np.clip(xs**2 - 1, 0, None))
        exact = trapezoid(2 * (upper - lower), xs)
        assert abs(v - exact) < 4 * err + 1e-3

    @pytest.mark.parametrize("p", [3, 5, 7])
    def test_padic_conic_count(self, p):
        # a nondegenerate ternary form has p^2 zeros mod p
        assert padic_form_volume(LORENTZ, p, 1, 0) == Fraction(1, p)

    @pytest.mark.parametrize("e,s", [(0, 0), (2, 0), (3, 0), (1, 1), (0, 1)])
    def test_padic_volume_finer_modulus(self, e, s):
        # the same volume counted at one extra digit of precision
        p, M = 3, [[1, 0, 0], [0, 2, 0], [0, 0, -1]]
        K = e + 2 * s + 1
        mod = p**K
        Z = np.stack(np.meshgrid(*[np.arange(mod)] * 3, indexing="ij"), -1).reshape(-1, 3)
        hits = int((np.einsum("ij,jk,ik->i", Z, np.array(M), Z) % p ** (e + 2 * s) == 0).sum())
        want = Fraction(p) ** (3 * s) * Fraction(hits, mod**3)
        assert padic_form_volume(M, p, e, s) == want

    def test_padic_volume_trivial(self):
        assert padic_form_volume(LORENTZ, 3, 0, 0) == 1
        assert padic_form_volume(LORENTZ, 3, -2, 1) == 27


class TestOppenheim:
    def test_scan_records(self):
        form = QuadraticFormS(LORENTZ)
        I = SInterval(Fraction(-1, 4), Fraction(1, 4))
        grid = [RadiusVector(Fraction(T)) for T in (5, 10)]
        scan = oppenheim_scan(form, I, grid, seed=0)
        for rec in scan.records:
            assert rec.N == brute_form_count(LORENTZ, I, rec.T.inf_value, R0)
            assert rec.V > 0 and rec.T_abs == float(rec.T.inf_value)
        doc = scan.to_dict()
        assert len(doc["records"]) == 2 and doc["top_ratio"] == scan.records[-1].ratio

    def test_scan_is_reproducible(self):
        form = QuadraticFormS.diagonal_embedding(LORENTZ, S3)
        I = SInterval(-1, 1, {3: 1})
        grid = [RadiusVector(Fraction(6), {3: 1})]
        a = oppenheim_scan(form, I, grid, seed=4).to_dict()
        assert a == oppenheim_scan(form, I, grid, seed=4).to_dict()

    def test_requires_indefinite(self):
        I = SInterval(-1, 1)
        with pytest.raises(ValueError):
            oppenheim_scan(QuadraticFormS([[1, 0, 0], [0, 1, 0], [0, 0, 1]]), I, [RadiusVector(Fraction(3))])
        with pytest.raises(ValueError):
            oppenheim_scan(QuadraticFormS([[1, 0], [0, -1]]), I, [RadiusVector(Fraction(3))])

    def test_haar_small(self):
        I = SInterval(Fraction(-1, 4), Fraction(1, 4))
        res = oppenheim_haar(LORENTZ, I, RadiusVector(Fraction(15)), 3, seed=2)
        assert len(res.ratios) == 3 and res.V_total > 0
        assert res.aggregate_ratio == res.N_total / res.V_total
        assert oppenheim_haar(LORENTZ, I, RadiusVector(Fraction(15)), 3, seed=2, workers=2).ratios == res.ratios


def brute_min(M, xi, eps, R):
    best = None
    for r in range(1, R + 1):
        for z in itertools.product(range(-r, r + 1), repeat=len(M)):
            if max(map(abs, z)) != r:
                continue
            g = abs(qval(M, z) - xi)
            if g < eps and (best is None or g < best[0]):
                best = (g, z)
        if best is not None:
            return r, best[0]
    return None


class TestEpsSearch:
    def test_exact_hit(self):
        # q = 5 is out of reach at norm 1
        v0 = (2, 1, 0)
        xi = qval(LORENTZ, v0)
        res = epsilon_min_search(QuadraticFormS(LORENTZ), xi, [Fraction(1, 2**i) for i in range(1, 6)], max_norm=4)
        for rec in res.records:
            assert rec.gap == 0 and rec.norm == 2
            assert qval(LORENTZ, rec.v) == xi

    @pytest.mark.parametrize("xi", [Fraction(1, 3), Fraction(-7, 5), Fraction(0)])
    def test_matches_shell_search(self, xi):
        M = [[2, 1, 0], [1, -3, 0], [0, 0, 1]]
        eps = [Fraction(1), Fraction(1, 3), Fraction(1, 10), Fraction(1, 40)]
        res = epsilon_min_search(QuadraticFormS(M), xi, eps, max_norm=6)
        for rec in res.records:
            want = brute_min(M, xi, rec.eps, 6)
            if want is None:
                assert rec.v is None
            else:
                assert (rec.norm, rec.gap) == want

    def test_large_eps_gives_unit_vector(self):
        res = epsilon_min_search(QuadraticFormS(LORENTZ), Fraction(1, 2), [Fraction(100)])
        assert res.records[0].norm == 1

    def test_budget(self):
        form = QuadraticFormS(LORENTZ)
        res = epsilon_min_search(form, Fraction(1, 7), [Fraction(1, 100)], max_norm=3)
        assert res.records[0].status == "budget_exceeded"
        with pytest.raises(SearchBudgetExceeded):
            epsilon_min_search(form, Fraction(1, 7), [Fraction(1, 100)], max_norm=3, strict=True)

    def test_s_arithmetic(self):
        form = QuadraticFormS.diagonal_embedding(LORENTZ, S3)
        res = epsilon_min_search(form, Fraction(1, 9), [Fraction(1, 2), Fraction(1, 5)], S=S3, max_norm=3)
        for rec in res.records:
            assert rec.v is not None and form.s_gap(rec.v, Fraction(1, 9), S3) < rec.eps
            assert rec.gap == form.s_gap(rec.v, Fraction(1, 9), S3)

    def test_place_mismatch(self):
        with pytest.raises(ValueError):
            epsilon_min_search(QuadraticFormS(LORENTZ), 0, [1], S=S3)

    def test_random_form_slope(self):
        # exponent report on one Haar-random form; the slope is only required to be negative-ish
        g = [[Fraction(x) for x in row] for row in sample_lattice(SamplerConfig(d=3, seed=3), batch_rng(3, 0)).real_basis]
        form = QuadraticFormS(LORENTZ).composed(g)
        res = epsilon_min_search(form, 0, [Fraction(1, 2**i) for i in range(1, 9)], max_norm=40)
        assert res.expected_slope == -1.0
        assert res.slope is not None and res.slope < 0


class TestGaussStar:
    def test_aligned_box_exact(self):
        A0 = ProductRegion.make(Box(3, half=(Fraction(1, 2),) * 3))
        scan = gauss_star_scan(A0, SLattice.standard(3, R0), [RadiusVector(Fraction(T)) for T in (1, 3, 5, 7, 9)])
        assert scan.all_zero
        assert [r.N for r in scan.records] == [T**3 for T in (1, 3, 5, 7, 9)]

    def test_even_T_is_not_exact(self):
        A0 = ProductRegion.make(Box(3, half=(Fraction(1, 2),) * 3))
        scan = gauss_star_scan(A0, SLattice.standard(3, R0), [RadiusVector(Fraction(2))])
        assert not scan.all_zero and scan.records[0].N == 27

    @pytest.mark.parametrize("t", [1, 2])
    def test_padic_dilates_match_enumeration(self, t):
        A0 = ProductRegion.make(Box(3, half=(Fraction(1, 2),) * 3), S3)
        lat = SLattice.standard(3, S3)
        T = RadiusVector(Fraction(3), {3: t})
        rec = gauss_star_scan(A0, lat, [T]).records[0]
        assert rec.N == len(enumerate_points(lat, normalized(A0).dilate(T)))
        # direct count over the grid 3^-t Z^3, sup norm at most 3/2
        want = sum(1 for z in itertools.product(range(-3 * 3**t, 3 * 3**t + 1), repeat=1)
                   if abs(Fraction(z[0], 3**t)) <= Fraction(3, 2)) ** 3
        assert rec.N == want

    def test_normalized(self):
        A = ProductRegion.make(SupBall(3, Fraction(3, 2)), S3)
        assert normalized(A).volume() == 1
        with pytest.raises(ValueError):
            normalized(ProductRegion.make(SupBall(3, 0)))


def nonzero_in_box(N):
    """Nonzero z in Z^3 with (2|z_i|)^3 <= N."""
    K = 0
    while (2 * (K + 1)) ** 3 <= N:
        K += 1
    return (2 * K + 1) ** 3 - 1


class TestDyadic:
    @given(st.integers(0, 8))
    def test_pair_count(self, ell):
        pairs = dyadic_pairs(ell)
        assert len(pairs) == 2 ** (ell + 1) - 1 == len(set(pairs))
        assert all(0 <= a < b <= 2**ell and b - a & (b - a - 1) == 0 for a, b in pairs)

    def test_ell2(self):
        assert sorted(dyadic_pairs(2)) == [(0, 1), (0, 2), (0, 4), (1, 2), (2, 3), (2, 4), (3, 4)]

    def test_exact_statistic_on_Z3(self):
        A = ProductRegion.make(Box(3, half=(Fraction(1, 2),) * 3))
        res = dyadic_stats(A, SLattice.standard(3, R0), 5)
        want = sum(Fraction(nonzero_in_box(b) - nonzero_in_box(a) - (b - a)) ** 2 for a, b in dyadic_pairs(5))
        assert res.statistic == want
        assert res.statistic_alt is None and res.independent
        assert res.threshold == pytest.approx(6 * 2 ** (5 * 1.5))

    @pytest.mark.parametrize("seed", [0, 1])
    def test_J_independence(self, seed):
        A = ProductRegion.make(SupBall(3, Fraction(1, 2)), S3, [PadicSet.ball(3, 3, 0)])
        lat = sample_lattice(SamplerConfig(d=3, seed=seed, S=S3), batch_rng(seed, 0))
        res = dyadic_stats(A, lat, 4, Jf={3: 0})
        assert res.Jf_alt == {3: 1}
        assert res.statistic == res.statistic_alt and res.independent

    def test_bad_arguments(self):
        A = ProductRegion.make(SupBall(3, 1), S3)
        with pytest.raises(ValueError):
            dyadic_stats(A, SLattice.standard(3, S3), -1)
        with pytest.raises(ValueError):
            dyadic_stats(A, SLattice.standard(3, S3), 2, Jf={3: -1})


class TestSandwich:
    @pytest.mark.parametrize("S", [R0, S3], ids=str)
    def test_random_triples(self, S):
        rep = sandwich_check(25, 3, S, seed=1)
        assert rep.trials == 25 and rep.passed and rep.min_slack >= 0

    def test_d2(self):
        assert sandwich_check(20, 2, R0, seed=2).passed

    def test_difference_correction(self):
        ball = ProductRegion.make(SupBall(3, 1), S3)
        chk = difference_correction_check(ball, RadiusVector(Fraction(1)), RadiusVector(Fraction(2), {3: 1}), S3, M=16)
        assert chk.passed and chk.volume == 64 * 27 - 8
        with pytest.raises(ValueError):
            difference_correction_check(ball, RadiusVector(Fraction(2)), RadiusVector(Fraction(1)), S3)


class TestFit:
    def test_power_law(self):
        xs = [1, 2, 4, 8, 16, 32]
        assert fit_loglog(xs, [3 * x**1.5 for x in xs], 1.0) == pytest.approx(1.5)
        assert fit_loglog(xs, [x**-2 for x in xs], 0.5) == pytest.approx(-2)

    def test_degenerate(self):
        assert fit_loglog([], []) is None
        assert fit_loglog([1, 2], [0, 5], 1.0) is None
        assert fit_loglog([2, 2, 2], [1, 2, 3], 1.0) is None

    def test_window(self):
        # only the top half is used
        xs = [1, 2, 4, 8]
        ys = [100, 1, 4, 16]
        assert fit_loglog(xs, ys, 0.5) == pytest.approx(2)
