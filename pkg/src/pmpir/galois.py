"""Prime-field arithmetic and dense linear algebra over F_p.

Scalars are plain Python ints in ``[0, p)``; vectors and matrices are numpy
``int64`` arrays whose entries are kept reduced mod ``p``.  The modulus is
capped at ``2**31 - 1`` so that a single product of two residues fits in a
signed 64-bit word; longer inner products are accumulated in chunks that
cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CompositeModulus, DivisionByZero, DuplicatePoints, SingularMatrix

MAX_MODULUS = 2**31 - 1
_INT64_MAX = 2**63 - 1


def is_prime(p: int) -> bool:
    if p < 2:
        return False
    if p % 2 == 0:
        return p == 2
    f = 3
    while f * f <= p:
        if p % f == 0:
            return False
        f += 2
    return True


def next_prime(m: int) -> int:
    """Smallest prime ``>= m``."""
    p = max(2, m)
    while not is_prime(p):
        p += 1
    return p


@dataclass(frozen=True)
class Field:
    """The prime field F_p."""

    p: int

    def __post_init__(self):
        if not isinstance(self.p, (int, np.integer)) or self.p < 2:
            raise CompositeModulus(f"modulus must be an integer >= 2, got {self.p!r}")
        if self.p > MAX_MODULUS:
            raise ValueError(f"modulus {self.p} exceeds {MAX_MODULUS}")
        if not is_prime(int(self.p)):
            raise CompositeModulus(f"{self.p} is not prime")
        object.__setattr__(self, "p", int(self.p))

    # --- scalars -------------------------------------------------------
    def inv(self, a: int) -> int:
        a = int(a) % self.p
        if a == 0:
            raise DivisionByZero("0 has no inverse")
        return pow(a, self.p - 2, self.p)

    def pow(self, a: int, e: int) -> int:
        return pow(int(a) % self.p, e, self.p)

    # --- arrays --------------------------------------------------------
    def array(self, x) -> np.ndarray:
        return np.mod(np.asarray(x, dtype=np.int64), self.p)

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=np.int64)

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(0, self.p, size=shape, dtype=np.int64)

    @property
    def _chunk(self) -> int:
        # how many products of residues can be summed without int64 overflow
        return max(1, _INT64_MAX // max(1, (self.p - 1) ** 2))

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        inner = a.shape[-1]
        step = self._chunk
        if inner <= step:
            return np.mod(a @ b, self.p)
        out = None
        for lo in range(0, inner, step):
            hi = min(inner, lo + step)
            part = np.mod(a[..., lo:hi] @ b[lo:hi, ...] if b.ndim > 1 else a[..., lo:hi] @ b[lo:hi], self.p)
            out = part if out is None else np.mod(out + part, self.p)
        return out

    def dot(self, a: np.ndarray, b: np.ndarray) -> int:
        return int(self.matmul(np.asarray(a).reshape(1, -1), np.asarray(b).reshape(-1, 1))[0, 0])

    def row_reduce(self, m: np.ndarray, ncols: int | None = None) -> tuple[np.ndarray, list[int]]:
        """Reduced row echelon form, pivoting only on the first ``ncols`` columns."""
        p = self.p
        m = np.mod(np.array(m, dtype=np.int64), p)
        if m.ndim != 2:
            raise ValueError("expected a matrix")
        rows, cols = m.shape
        ncols = cols if ncols is None else ncols
        pivots: list[int] = []
        r = 0
        for c in range(ncols):
            if r == rows:
                break
            nz = np.flatnonzero(m[r:, c])
            if nz.size == 0:
                continue
            piv = r + int(nz[0])
            if piv != r:
                m[[r, piv]] = m[[piv, r]]
            m[r] = np.mod(m[r] * self.inv(m[r, c]), p)
            col = m[:, c].copy()
            col[r] = 0
            if col.any():
                m = np.mod(m - np.outer(col, m[r]), p)
            pivots.append(c)
            r += 1
        return m, pivots

    def rank(self, a: np.ndarray) -> int:
        a = np.asarray(a)
        if a.size == 0:
            return 0
        return len(self.row_reduce(a)[1])

    def solve(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"solve needs a square matrix, got shape {a.shape}")
        n = a.shape[0]
        vector = b.ndim == 1
        rhs = b.reshape(n, -1) if vector else b
        if rhs.shape[0] != n:
            raise ValueError("right-hand side does not match the matrix")
        red, pivots = self.row_reduce(np.hstack([a, rhs]), ncols=n)
        if len(pivots) < n:
            raise SingularMatrix(f"matrix has rank {len(pivots)} < {n}")
        x = red[:, n:]
        return x[:, 0] if vector else x

    def inverse(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        return self.solve(a, np.eye(a.shape[0], dtype=np.int64))


def make_prime_field(p: int) -> Field:
    return Field(p)


def field_inv(field: Field, a: int) -> int:
    return field.inv(a)


def vandermonde(field: Field, points, width: int) -> np.ndarray:
    """``n x width`` matrix with entry ``(i, j) = points[i] ** j`` for ``j = 0..width-1``."""
    if width < 1:
        raise ValueError("width must be >= 1")
    x = field.array(points).reshape(-1)
    if len(set(x.tolist())) != x.size:
        raise DuplicatePoints("evaluation points must be pairwise distinct")
    out = np.ones((x.size, width), dtype=np.int64)
    for j in range(1, width):
        out[:, j] = np.mod(out[:, j - 1] * x, field.p)
    return out


def mat_solve(field: Field, a, b) -> np.ndarray:
    return field.solve(a, b)


def mat_rank(field: Field, a) -> int:
    return field.rank(a)
