import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srogers.qs_core import PlaceSet, abs_at, INF
from srogers.regions import (
    Annulus,
    Box,
    LinearImage,
    PadicSet,
    ProductRegion,
    RadiusVector,
    StarShaped,
    SupBall,
    UnionRegion,
    contains,
    difference,
    dilate,
    overlap_volume,
    rational_preimage,
    region_from_dict,
    volume,
)

S3 = PlaceSet((3,))


def unit_ball_3(d=3, R=1):
    return ProductRegion.make(SupBall(d, R), S3)


# --------------------------------------------------------------------------
# brute-force p-adic oracle: membership of z / p^E only depends on z mod p^K


def _window(sets):
    """Common exponent ``E`` and precision ``K`` resolving membership in every set."""
    E = max(s.max_exponent() for s in sets if not s.is_empty)
    K = 1
    for s in sets:
        K = max([K] + [E - j + s.m for j in s.shells] + ([E - s.core] if s.core is not None else []))
    return E, K


def brute_volume(sets, pred) -> Fraction:
    sets = [s for s in sets if not s.is_empty]
    if not sets:
        return Fraction(0)
    E, K = _window(sets)
    p, d = sets[0].p, sets[0].d
    scale = Fraction(1, p**E) if E >= 0 else Fraction(p**-E)
    hits = sum(pred(tuple(t * scale for t in z)) for z in itertools.product(range(p**K), repeat=d))
    return Fraction(p) ** (E * d) * Fraction(hits, p ** (K * d))


@st.composite
def padic_sets(draw, p=3, d=2):
    core = draw(st.sampled_from([None, -1, 0]))
    m = draw(st.sampled_from([1, 1, 2]))
    prims = [r for r in itertools.product(range(p**m), repeat=d) if any(t % p for t in r)]
    shells = {}
    for j in draw(st.lists(st.integers(-1, 2), unique=True, max_size=3)):
        shells[j] = None if draw(st.booleans()) else frozenset(draw(st.lists(st.sampled_from(prims), min_size=1, max_size=6)))
    s = PadicSet(p, d, core=core, shells=shells, m=m)
    if s.is_empty:
        s = PadicSet.ball(p, d, 0)
    return s


class TestVolume:
    def test_box_times_unit_ball(self):
        A = ProductRegion.make(Box(3, half=(1, 1, 1)), S3)
        assert A.volume() == 8

    @pytest.mark.parametrize("p,d,j", [(3, 3, 1), (3, 2, -2), (5, 3, 0), (2, 4, 3)])
    def test_shell(self, p, d, j):
        assert PadicSet.shell(p, d, j).volume() == Fraction(p) ** (j * d) - Fraction(p) ** ((j - 1) * d)

    def test_real_ball(self):
        assert SupBall(2, Fraction(3, 2)).volume() == 9

    def test_annulus_box_star(self):
        assert Annulus(2, 1, 2).volume() == 16 - 4
        assert Box(2, half=(1, Fraction(1, 2))).volume() == 2
        # constant radial function is the ball
        assert StarShaped(d=3, grid=2, default=Fraction(3, 2)).volume() == 27

    @given(padic_sets())
    def test_padic_volume_matches_residue_count(self, s):
        assert s.volume() == brute_volume([s], s.contains)

    def test_refined_ball_and_star_constructors(self):
        rb = PadicSet.refined_ball(3, 2, 0, 1, [(0, 0), (1, 0), (2, 0)])
        assert rb.volume() == brute_volume([rb], rb.contains) == Fraction(3, 9)
        st_ = PadicSet.star(3, 2, 1, {(1, 0): 1, (2, 0): 1}, default=0)
        assert st_.volume() == brute_volume([st_], st_.contains)

    def test_star_reads_primitive_direction(self):
        # direction of v with ||v||_3 = 3 is 3v, a primitive vector
        s = PadicSet.star(3, 2, 1, {(1, 0): 1}, default=0)
        assert s.contains((Fraction(1, 3), 0))
        assert s.contains((Fraction(1, 3), 1))
        assert not s.contains((0, Fraction(1, 3)))
        assert s.contains((0, 1))


class TestMonteCarloMembership:
    SHAPES = [
        SupBall(2, Fraction(3, 4)),
        Annulus(2, Fraction(1, 2), Fraction(5, 4)),
        Box(3, half=(1, Fraction(1, 2), Fraction(3, 4))),
        StarShaped.from_function(2, 3, lambda c: 1 + abs(c[0] * c[1]) / 2),
        StarShaped(d=3, grid=2, rho={(0, 1, (0, 0)): Fraction(3, 2), (2, -1, (1, 1)): Fraction(1, 2)}),
        LinearImage(d=2, base=Box(2, half=(1, 1)), matrix=((2, 1), (0, Fraction(1, 2)))),
    ]

    @pytest.mark.parametrize("shape", SHAPES, ids=lambda s: type(s).__name__)
    def test_hit_rate_matches_volume(self, shape):
        rng = np.random.default_rng(11)
        R = float(shape.sup_bound())
        n = 3000
        X = rng.uniform(-R, R, size=(n, shape.d))
        hits = sum(shape.contains([Fraction(float(t)) for t in x]) for x in X)
        box = (2 * R) ** shape.d
        est = box * hits / n
        se = box * math.sqrt(hits / n * (1 - hits / n) / n)
        assert abs(est - float(shape.volume())) <= 3 * se + 1e-12

    @pytest.mark.parametrize("shape", SHAPES, ids=lambda s: type(s).__name__)
    def test_float_classifier_agrees_with_exact(self, shape):
        rng = np.random.default_rng(5)
        R = float(shape.sup_bound())
        X = rng.uniform(-R, R, size=(400, shape.d))
        inside, unc = shape.classify(X)
        for x, a, u in zip(X, inside, unc):
            if not u:
                assert bool(a) == shape.contains([Fraction(float(t)) for t in x])


class TestContains:
    def test_denominator_three_excluded(self):
        assert not unit_ball_3().contains((Fraction(1, 3), 0, 0))

    def test_shell_membership(self):
        A = ProductRegion.make(SupBall(3, 1), S3, [PadicSet.shell(3, 3, 1)])
        assert A.contains((Fraction(1, 3), 1, 0))
        assert not A.contains((1, 1, 0))

    def test_origin(self):
        assert unit_ball_3().contains((0, 0, 0))
        assert contains(ProductRegion.make(Box(2, half=(1, 2))), (0, 0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            unit_ball_3().contains((0, 0))


class TestDilate:
    def test_example(self):
        A = ProductRegion.make(Box(3, half=(1, 1, 1)), S3)
        T = RadiusVector(2, {3: 1})
        assert dilate(A, T).volume() == 6**3 * 8 == 1728

    def test_identity(self):
        A = unit_ball_3()
        assert A.dilate(RadiusVector(1, {3: 0})) == A

    def test_padic_ball_grows(self):
        A = unit_ball_3()
        B = A.dilate(RadiusVector(1, {3: 1}))
        assert B.factor(3) == PadicSet.ball(3, 3, 1)
        assert B.volume() == A.volume() * 27

    @given(st.fractions(min_value=Fraction(1, 10), max_value=10, max_denominator=20), st.integers(-3, 3), st.integers(1, 3))
    def test_volume_scaling(self, Tinf, t, root):
        A = ProductRegion.make(StarShaped(d=3, grid=1, rho={(0, 1, ()): 2}), S3, [PadicSet.star(3, 3, 1, {(1, 1, 0): 1})])
        T = RadiusVector(Tinf, {3: t}, 3 // root if 3 % root == 0 else 1)
        assert A.dilate(T).volume() == T.abs_pow(3) * A.volume()

    def test_from_pow_keeps_rational_volume(self):
        T = RadiusVector.from_pow(3, 2)
        assert SupBall(3, 1).scaled(T.inf_pow(3)).volume() == 16


class TestPreimage:
    def test_real_scaling(self):
        A = unit_ball_3()
        A2 = rational_preimage(A, 2)
        assert A2.real.volume() == 1
        assert A2.factor(3) == A.factor(3)
        assert A2.volume() * 8 == A.volume()

    def test_identity(self):
        assert unit_ball_3().rational_preimage(1) == unit_ball_3()

    def test_one_third(self):
        A = unit_ball_3()
        B = A.rational_preimage(Fraction(1, 3))
        assert B.factor(3) == PadicSet.ball(3, 3, -1)
        assert B.real.volume() == 27 * 8
        assert not B.contains((1, 0, 0)) and B.contains((3, 0, 0))

    @given(st.fractions(max_denominator=50).filter(bool))
    def test_volume_transforms_by_S_absolute_value(self, c):
        A = ProductRegion.make(Annulus(3, Fraction(1, 2), 2), S3, [PadicSet.shell(3, 3, 1)])
        scale = abs_at(c, INF) * abs_at(c, 3)
        assert A.rational_preimage(c).volume() * scale**3 == A.volume()

    @given(st.fractions(max_denominator=30).filter(bool), st.lists(st.integers(-20, 20), min_size=3, max_size=3))
    def test_membership_definition(self, c, z):
        A = ProductRegion.make(SupBall(3, 2), S3, [PadicSet.shell(3, 3, 1)])
        v = tuple(Fraction(t, 3) for t in z)
        assert A.rational_preimage(c).contains(v) == A.contains(tuple(c * t for t in v))

    @given(st.integers(1, 40))
    def test_ns_scaling(self, q):
        if q % 3 == 0:
            return
        A = unit_ball_3(R=Fraction(5, 4))
        assert A.rational_preimage(q).volume() * q**3 == A.volume()


class TestOverlap:
    def test_trivial(self):
        A = unit_ball_3()
        assert overlap_volume(A, 1, 1) == A.volume()

    @given(st.integers(1, 30), st.integers(0, 3), st.integers(-60, 60))
    def test_ball_product_closed_form(self, q, a, w):
        if q % 3 == 0 or w == 0 or math.gcd(w, 3 * q) != 1:
            return
        pp = 3**a
        A = unit_ball_3(R=Fraction(3, 2))
        assert overlap_volume(A, q, Fraction(w, pp)) == A.volume() / max(q * pp, abs(w)) ** 3

    def test_disjoint_annuli(self):
        A = ProductRegion.make(Annulus(3, 1, 2))
        assert overlap_volume(A, 1, 3) == 0

    @given(st.fractions(max_denominator=20).filter(bool), st.fractions(max_denominator=20).filter(bool))
    def test_symmetric_and_diagonal(self, c1, c2):
        A = ProductRegion.make(Annulus(2, Fraction(1, 3), 1), PlaceSet((3,)), [PadicSet.star(3, 2, 1, {(1, 0): 1, (1, 1): -1})])
        assert overlap_volume(A, c1, c2) == overlap_volume(A, c2, c1)
        assert overlap_volume(A, c1, c1) == A.rational_preimage(c1).volume()

    @given(padic_sets(), padic_sets())
    def test_padic_intersection_and_difference(self, a, b):
        both, diff = a.intersect(b), a.minus(b)
        assert both.volume() == brute_volume([a, b], lambda v: a.contains(v) and b.contains(v))
        assert diff.volume() == brute_volume([a, b], lambda v: a.contains(v) and not b.contains(v))
        window = [a, b]
        assert brute_volume(window, both.contains) == both.volume()
        assert brute_volume(window, diff.contains) == diff.volume()


class TestUnionsAndDocuments:
    def test_difference_of_nested_balls(self):
        big = ProductRegion.make(SupBall(3, 2), S3, [PadicSet.ball(3, 3, 1)])
        small = unit_ball_3()
        D = difference(big, small)
        assert D.volume() == big.volume() - small.volume()
        for v in [(0, 0, 0), (Fraction(1, 3), 0, 0), (2, 0, 0), (Fraction(5, 3), 1, 0)]:
            assert D.contains(v) == (big.contains(v) and not small.contains(v))

    def test_union_volume(self):
        U = UnionRegion(2, (ProductRegion.make(SupBall(2, 1)), ProductRegion.make(Annulus(2, 1, 2))))
        assert volume(U) == 16
        assert U.contains((2, 0)) and not U.contains((3, 0))

    @pytest.mark.parametrize(
        "A",
        [
            ProductRegion.make(SupBall(3, Fraction(3, 2), 2), S3, [PadicSet.ball(3, 3, 1)]),
            ProductRegion.make(Box(2, half=(1, 2)), PlaceSet((3,)), [PadicSet.star(3, 2, 1, {(1, 0): 1})]),
            ProductRegion.make(StarShaped(d=2, grid=2, rho={(0, 1, (1,)): 2})),
            ProductRegion.make(Annulus(2, 1, 3), PlaceSet((3,)), [PadicSet.shell(3, 2, -1)]),
        ],
    )
    def test_json_roundtrip(self, A):
        B = region_from_dict(A.to_dict())
        assert B == A

    def test_region_document(self):
        doc = {"d": 2, "real": {"type": "ball", "radius": "3/2"}, "padic": [{"p": 3, "b": 1}]}
        A = region_from_dict(doc)
        assert A.volume() == 9 * 9
        assert region_from_dict({"d": 3, "real": {"type": "ball"}}, S=S3).primes == (3,)
        assert region_from_dict({"d": 2, "empty": True}).volume() == 0
