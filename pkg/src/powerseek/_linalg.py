"""Small dense linear algebra over Fractions, with a numpy path for floats."""

from fractions import Fraction

import numpy as np
from gmpy2 import mpq, mpz

RATIONAL_TYPES = (Fraction, int, type(mpq(0)), type(mpz(0)))


class SingularMatrixError(ArithmeticError):
    pass


def is_exact(values):
    return all(isinstance(v, RATIONAL_TYPES) for v in values)


def to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    return Fraction(int(x.numerator), int(x.denominator))


def inverse_exact(matrix):
    """Gauss-Jordan inverse of a square matrix of Fractions."""
    n = len(matrix)
    a = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)]
         for i, row in enumerate(matrix)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col] != 0), None)
        if pivot is None:
            raise SingularMatrixError("matrix is not invertible")
        if pivot != col:
            a[col], a[pivot] = a[pivot], a[col]
        row = a[col]
        p = row[col]
        if p != 1:
            row = a[col] = [x / p for x in row]
        for r in range(n):
            if r == col:
                continue
            f = a[r][col]
            if f:
                other = a[r]
                a[r] = [x - f * y for x, y in zip(other, row)]
    return [row[n:] for row in a]


def solve_exact(matrix, rhs):
    n = len(matrix)
    a = [[Fraction(x) for x in row] + [Fraction(b)] for row, b in zip(matrix, rhs)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col] != 0), None)
        if pivot is None:
            raise SingularMatrixError("matrix is not invertible")
        if pivot != col:
            a[col], a[pivot] = a[pivot], a[col]
        p = a[col][col]
        row = a[col] = [x / p for x in a[col]]
        for r in range(n):
            if r != col and a[r][col]:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], row)]
    return [a[i][n] for i in range(n)]


def solve(matrix, rhs, exact, residual_tol=1e-9):
    """Solve ``matrix @ x = rhs``; exact over Fractions or float via numpy.

    The float path raises when the residual, relative to the scale of
    ``matrix @ x``, exceeds ``residual_tol``.
    """
    if not matrix:
        return []
    if exact:
        return solve_exact(matrix, rhs)
    a = np.asarray(matrix, dtype=float)
    b = np.asarray(rhs, dtype=float)
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    scale = max(1.0, float(np.max(np.abs(a) @ np.abs(x))))
    residual = float(np.max(np.abs(a @ x - b))) / scale
    if residual > residual_tol:
        raise ArithmeticError(f"float solve residual {residual:.3g} exceeds {residual_tol}")
    return [float(v) for v in x]
