"""Nested Reed-Solomon codes over F_p.

A word of ``RS_j(x)`` is the evaluation of a polynomial of degree ``< j`` at
the points ``x``.  The degree-ordered monomial basis ``gamma_r = x**(r-1)``
is nested: its first ``j`` vectors span ``RS_j`` for every ``j``, also after
restricting to any coordinate set of size ``>= j``.

:class:`ExponentCode` generalises this to the span of ``x**e`` for ``e`` in
an arbitrary exponent set ``J``.  Plain ``RS_j`` is ``J = {0..j-1}``; the
MSR peeling codes use ``J = {0..j-1} | {a..a+j-1}``.  Coordinates in this
module are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimTooLarge,
    DuplicatePoints,
    LengthMismatch,
    NotInformationSet,
    SingularMatrix,
    SizeMismatch,
)
from .galois import Field


@dataclass(frozen=True)
class EvalPoints:
    field: Field
    x: tuple[int, ...]
    allow_zero: bool = False

    def __post_init__(self):
        x = tuple(int(v) % self.field.p for v in self.x)
        object.__setattr__(self, "x", x)
        if len(set(x)) != len(x):
            raise DuplicatePoints(f"evaluation points {x} are not distinct")
        if not self.allow_zero and 0 in x:
            raise DuplicatePoints("evaluation points must be nonzero")
        if len(x) > self.field.p - (0 if self.allow_zero else 1):
            raise DimTooLarge(f"{len(x)} points do not fit in F_{self.field.p}")

    @property
    def n(self) -> int:
        return len(self.x)

    def array(self) -> np.ndarray:
        return np.array(self.x, dtype=np.int64)

    def powers(self, exponents: Iterable[int], coords: Sequence[int] | None = None) -> np.ndarray:
        """Matrix with rows indexed by coordinate and columns by exponent."""
        x = self.array() if coords is None else self.array()[list(coords)]
        p = self.field.p
        return np.array([[pow(int(xi), int(e), p) for e in exponents] for xi in x], dtype=np.int64).reshape(
            len(x), -1
        )


@dataclass(frozen=True)
class MonomialBasis:
    points: EvalPoints
    dim: int
    gammas: np.ndarray  # (dim, n): row r-1 holds gamma_r

    def restrict(self, coords: Sequence[int], j: int | None = None) -> np.ndarray:
        j = self.dim if j is None else j
        return self.gammas[:j][:, list(coords)]


def monomial_basis(points: EvalPoints, dim: int) -> MonomialBasis:
    if dim < 1 or dim > points.n:
        raise DimTooLarge(f"dimension {dim} not in [1, {points.n}]")
    return MonomialBasis(points, dim, points.powers(range(dim)).T.copy())


def rs_encode(coeffs, points: EvalPoints) -> np.ndarray:
    c = points.field.array(coeffs).reshape(-1)
    if c.size > points.n:
        raise DimTooLarge(f"{c.size} coefficients for length {points.n}")
    if c.size == 0:
        return np.zeros(points.n, dtype=np.int64)
    return points.field.matmul(points.powers(range(c.size)), c)


def star(field: Field, a, b) -> np.ndarray:
    a = field.array(a)
    b = field.array(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"star product of shapes {a.shape} and {b.shape}")
    return np.mod(a * b, field.p)


@dataclass(frozen=True)
class ExponentCode:
    """Span of the vectors ``x**e``, ``e`` in ``exponents``."""

    exponents: tuple[int, ...]
    points: EvalPoints

    def __post_init__(self):
        exps = tuple(sorted(set(int(e) for e in self.exponents)))
        if any(e < 0 for e in exps):
            raise ValueError("exponents must be non-negative")
        object.__setattr__(self, "exponents", exps)

    @classmethod
    def rs(cls, dim: int, points: EvalPoints) -> "ExponentCode":
        return cls(tuple(range(dim)), points)

    @classmethod
    def msr_layer(cls, j: int, alpha: int, points: EvalPoints) -> "ExponentCode":
        """``RS_j(x) + <x**alpha> * RS_j(x)``."""
        return cls(tuple(range(j)) + tuple(range(alpha, alpha + j)), points)

    @property
    def size(self) -> int:
        return len(self.exponents)

    @property
    def field(self) -> Field:
        return self.points.field

    def generator(self) -> np.ndarray:
        """``|J| x n`` generator matrix."""
        return self.points.powers(self.exponents).T.copy()

    def dimension(self) -> int:
        return self.field.rank(self.generator())

    def encode(self, coeffs) -> np.ndarray:
        c = self.field.array(coeffs).reshape(-1)
        if c.size != self.size:
            raise LengthMismatch(f"expected {self.size} coefficients, got {c.size}")
        return self.field.matmul(c, self.generator())

    def system(self, coords: Sequence[int]) -> np.ndarray:
        """Square matrix ``(x_i**e)`` for ``i`` in ``coords``, ``e`` in the exponent set."""
        return self.points.powers(self.exponents, coords)


def _check_index_set(coords: Sequence[int], code: ExponentCode) -> list[int]:
    coords = [int(i) for i in coords]
    if len(set(coords)) != len(coords):
        raise SizeMismatch(f"index set {coords} has repeated entries")
    if len(coords) != code.size:
        raise SizeMismatch(f"|I| = {len(coords)} but |J| = {code.size}")
    if any(i < 0 or i >= code.points.n for i in coords):
        raise SizeMismatch(f"index set {coords} out of range for length {code.points.n}")
    return coords


def is_info_set(coords: Sequence[int], code: ExponentCode) -> bool:
    coords = _check_index_set(coords, code)
    return code.field.rank(code.system(coords)) == code.size


def decode_info_set(values, coords: Sequence[int], code: ExponentCode) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate the unique codeword that takes ``values`` on ``coords``.

    Returns the coefficient vector (ordered like ``code.exponents``) and the
    full length-``n`` codeword.
    """
    coords = _check_index_set(coords, code)
    vals = code.field.array(values).reshape(-1)
    if vals.size != len(coords):
        raise LengthMismatch(f"{vals.size} values for {len(coords)} coordinates")
    try:
        coeffs = code.field.solve(code.system(coords), vals)
    except SingularMatrix as exc:
        raise NotInformationSet(f"{coords} is not an information set for exponents {code.exponents}") from exc
    return coeffs, code.encode(coeffs)
