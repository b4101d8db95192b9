from fractions import Fraction

import sympy
from hypothesis import given
from hypothesis import strategies as st
from sympy.matrices.normalforms import smith_normal_form

from srogers.linalg import (
    frac_det,
    frac_inv,
    frac_rank,
    hermite_rows,
    identity,
    lattice_index,
    left_kernel,
    lll_reduce,
    matmul,
    row_echelon,
    smith_diagonal,
)


def int_matrices(max_rows=4, max_cols=4, bound=12):
    return st.integers(1, max_rows).flatmap(
        lambda r: st.integers(1, max_cols).flatmap(
            lambda c: st.lists(st.lists(st.integers(-bound, bound), min_size=c, max_size=c), min_size=r, max_size=r)
        )
    )


square = st.integers(1, 4).flatmap(
    lambda n: st.lists(st.lists(st.integers(-9, 9), min_size=n, max_size=n), min_size=n, max_size=n)
)


def sympy_divisors(M):
    S = smith_normal_form(sympy.Matrix(M), domain=sympy.ZZ)
    return [abs(int(S[i, i])) for i in range(min(S.shape)) if S[i, i] != 0]


@given(int_matrices())
def test_smith_matches_sympy(M):
    assert smith_diagonal(M) == sympy_divisors(M)


@given(int_matrices())
def test_smith_divisibility_chain(M):
    diag = smith_diagonal(M)
    assert all(b % a == 0 for a, b in zip(diag, diag[1:]))


@given(square)
def test_det_matches_sympy(M):
    assert frac_det(M) == sympy.Matrix(M).det()


@given(square)
def test_inverse(M):
    if frac_det(M) == 0:
        return
    inv = frac_inv(M)
    assert matmul(M, inv) == identity(len(M), Fraction)


@given(int_matrices())
def test_rank_and_echelon(M):
    E, piv = row_echelon(M)
    assert frac_rank(M) == sympy.Matrix(M).rank() == len(piv)
    for i, c in enumerate(piv):
        assert E[i][c] == 1


@given(int_matrices(max_rows=5, max_cols=3))
def test_left_kernel(M):
    K = left_kernel(M)
    n = len(M)
    assert len(K) == n - frac_rank(M)
    for x in K:
        assert all(sum(x[i] * M[i][j] for i in range(n)) == 0 for j in range(len(M[0])))
    # primitive (saturated) basis: the kernel lattice has index 1 in its rational span
    if K:
        assert smith_diagonal(K) == [1] * len(K)


@given(int_matrices())
def test_hermite_rows_span_same_lattice(M):
    H = hermite_rows(M)
    assert len(H) == frac_rank(M)
    # same row lattice: equal elementary divisors and each row of H in the span of M
    assert smith_diagonal(H) == smith_diagonal(M)
    assert frac_rank(M + H) == frac_rank(M)


def test_lattice_index_examples():
    assert lattice_index([[2, 0, 0], [0, 2, 0], [0, 0, 2]], 3) == 8
    assert lattice_index([[1, 1], [1, -1]], 2) == 2
    assert lattice_index([[1, 0]], 2) == 0


def test_lll_short_basis():
    B = [[1, 0, 0], [1000, 1, 0], [7777, 345, 1]]
    R = lll_reduce(B)
    assert abs(frac_det(R)) == 1
    assert max(max(abs(x) for x in row) for row in R) == 1
