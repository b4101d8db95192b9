"""Exact linear algebra over Q and Z.

Matrices are lists (or tuples) of rows.  Rational routines work on
:class:`~fractions.Fraction`; integer routines on Python ints.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

Matrix = Sequence[Sequence]


def _copy(M: Matrix, cast=Fraction) -> list[list]:
    return [[cast(x) for x in row] for row in M]


def identity(n: int, cast=int) -> list[list]:
    return [[cast(1) if i == j else cast(0) for j in range(n)] for i in range(n)]


def transpose(M: Matrix) -> list[list]:
    return [list(col) for col in zip(*M)] if M else []


def matmul(A: Matrix, B: Matrix) -> list[list]:
    Bt = transpose(B)
    return [[sum(a * b for a, b in zip(row, col)) for col in Bt] for row in A]


def matvec(A: Matrix, v: Sequence) -> tuple:
    return tuple(sum(a * x for a, x in zip(row, v)) for row in A)


def frac_det(M: Matrix) -> Fraction:
    A = _copy(M)
    n = len(A)
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if A[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            A[c], A[piv] = A[piv], A[c]
            det = -det
        det *= A[c][c]
        inv = 1 / A[c][c]
        for r in range(c + 1, n):
            f = A[r][c] * inv
            if f:
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
    return det


def frac_inv(M: Matrix) -> tuple:
    n = len(M)
    A = [row + idrow for row, idrow in zip(_copy(M), identity(n, Fraction))]
    for c in range(n):
        piv = next((r for r in range(c, n) if A[r][c] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular matrix")
        A[c], A[piv] = A[piv], A[c]
        inv = 1 / A[c][c]
        A[c] = [x * inv for x in A[c]]
        for r in range(n):
            if r != c and A[r][c]:
                f = A[r][c]
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
    return tuple(tuple(row[n:]) for row in A)


def frac_rank(M: Matrix) -> int:
    return len(row_echelon(M)[1])


def row_echelon(M: Matrix) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form and pivot columns."""
    A = _copy(M)
    rows = len(A)
    cols = len(A[0]) if A else 0
    pivots = []
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if A[i][c] != 0), None)
        if piv is None:
            continue
        A[r], A[piv] = A[piv], A[r]
        inv = 1 / A[r][c]
        A[r] = [x * inv for x in A[r]]
        for i in range(rows):
            if i != r and A[i][c]:
                f = A[i][c]
                A[i] = [x - f * y for x, y in zip(A[i], A[r])]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    return A, pivots


# --------------------------------------------------------------------------
# integer matrices


def hermite_rows(M: Matrix) -> list[list[int]]:
    """Echelon basis (nonzero rows) of the row lattice of an integer matrix."""
    A = [[int(x) for x in row] for row in M]
    cols = len(A[0]) if A else 0
    return [row for row in _echelon_full(A, cols) if any(row)]


def left_kernel(M: Matrix) -> list[list[int]]:
    """Basis of ``{x in Z^n : x M = 0}`` for an ``n x k`` integer matrix."""
    n = len(M)
    k = len(M[0]) if M else 0
    aug = [[int(x) for x in row] + [1 if i == j else 0 for j in range(n)] for i, row in enumerate(M)]
    H = _echelon_full(aug, k)
    return [row[k:] for row in H if not any(row[:k])]


def _echelon_full(A: list[list[int]], upto: int) -> list[list[int]]:
    # unimodular row reduction on the first ``upto`` columns, keeping all rows
    A = [row[:] for row in A]
    rows = len(A)
    r = 0
    for c in range(upto):
        if r >= rows:
            break
        while True:
            nz = [i for i in range(r, rows) if A[i][c] != 0]
            if not nz:
                break
            i_min = min(nz, key=lambda i: abs(A[i][c]))
            A[r], A[i_min] = A[i_min], A[r]
            clean = True
            for i in range(r + 1, rows):
                if A[i][c]:
                    f = A[i][c] // A[r][c]
                    A[i] = [x - f * y for x, y in zip(A[i], A[r])]
                    clean = clean and A[i][c] == 0
            if clean:
                r += 1
                break
    return A


def smith_diagonal(M: Matrix) -> list[int]:
    """Elementary divisors ``e_1 | e_2 | ...`` (nonzero ones only) of an integer matrix."""
    A = [[int(x) for x in row] for row in M]
    rows = len(A)
    cols = len(A[0]) if A else 0
    diag = []
    t = 0
    while t < min(rows, cols):
        nz = [(abs(A[i][j]), i, j) for i in range(t, rows) for j in range(t, cols) if A[i][j]]
        if not nz:
            break
        _, i, j = min(nz)
        A[t], A[i] = A[i], A[t]
        for row in A:
            row[t], row[j] = row[j], row[t]
        while True:
            changed = False
            for i in range(t + 1, rows):
                if A[i][t]:
                    f = A[i][t] // A[t][t]
                    A[i] = [x - f * y for x, y in zip(A[i], A[t])]
                    if A[i][t]:
                        A[t], A[i] = A[i], A[t]
                        changed = True
            for j in range(t + 1, cols):
                if A[t][j]:
                    f = A[t][j] // A[t][t]
                    for row in A:
                        row[j] -= f * row[t]
                    if A[t][j]:
                        for row in A:
                            row[t], row[j] = row[j], row[t]
                        changed = True
            if changed:
                continue
            # divisibility condition
            bad = next(
                ((i, j) for i in range(t + 1, rows) for j in range(t + 1, cols) if A[i][j] % A[t][t]),
                None,
            )
            if bad is None:
                break
            A[t] = [x + y for x, y in zip(A[t], A[bad[0]])]
        diag.append(abs(A[t][t]))
        t += 1
    return diag


def integer_det(M: Matrix) -> int:
    d = frac_det(M)
    assert d.denominator == 1
    return int(d)


def lattice_index(gens: Matrix, n: int) -> int:
    """Index of the row lattice of ``gens`` in ``Z^n`` (0 when rank < n)."""
    diag = smith_diagonal(gens)
    if len(diag) < n:
        return 0
    return math.prod(diag)


def lcm_all(xs) -> int:
    out = 1
    for x in xs:
        out = math.lcm(out, int(x))
    return out


def gcd_all(xs) -> int:
    out = 0
    for x in xs:
        out = math.gcd(out, int(x))
    return out


def lll_reduce(B: Matrix, delta: float = 0.99) -> list[list[Fraction]]:
    """Exact LLL on the rows of a rational basis (small dimensions)."""
    b = _copy(B)
    n = len(b)

    def dot(u, v):
        return sum(x * y for x, y in zip(u, v))

    def gso():
        bs, mu = [], [[Fraction(0)] * n for _ in range(n)]
        for i in range(n):
            v = list(b[i])
            for j in range(i):
                mu[i][j] = dot(b[i], bs[j]) / dot(bs[j], bs[j])
                v = [x - mu[i][j] * y for x, y in zip(v, bs[j])]
            bs.append(v)
        return bs, mu

    dlt = Fraction(delta).limit_denominator(1000)
    k = 1
    bs, mu = gso()
    while k < n:
        for j in range(k - 1, -1, -1):
            c = round(mu[k][j])
            if c:
                b[k] = [x - c * y for x, y in zip(b[k], b[j])]
                bs, mu = gso()
        if dot(bs[k], bs[k]) >= (dlt - mu[k][k - 1] ** 2) * dot(bs[k - 1], bs[k - 1]):
            k += 1
        else:
            b[k], b[k - 1] = b[k - 1], b[k]
            bs, mu = gso()
            k = max(k - 1, 1)
    return b
