"""Product-matrix regenerating codes at the MBR and MSR points (beta = 1).

Every stripe of a file is packed into a structured message matrix ``M`` and
stored as ``C = Psi @ M`` with ``Psi`` a Vandermonde matrix; server ``i``
keeps row ``i``.  Arrays use these layouts throughout the package:

* message of one file: ``(rows, alpha, S)`` -- ``M[r, j, s]`` 0-based
* node store: ``(F, n, alpha, S)`` -- ``C[f, i, j, s]`` 0-based
* one server's share: ``(F, alpha, S)``

Server ids are 1-based at every public entry point.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import gcd
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import (
    BadSubset,
    CorruptStore,
    FieldTooSmall,
    HelperOverlap,
    InvalidGeometry,
    InvariantViolation,
    LengthMismatch,
    NotEnoughHelpers,
    NotEnoughShares,
)
from .galois import Field, is_prime, next_prime, vandermonde
from .nested_rs import EvalPoints


class Family(str, enum.Enum):
    MBR = "mbr"
    MSR = "msr"

    @property
    def code(self) -> int:
        return 0 if self is Family.MBR else 1

    @classmethod
    def from_code(cls, code: int) -> "Family":
        return {0: cls.MBR, 1: cls.MSR}[code]


@dataclass(frozen=True)
class MbrParams:
    n: int
    k: int
    d: int
    q: int

    family = Family.MBR

    @property
    def alpha(self) -> int:
        return self.d

    @property
    def beta(self) -> int:
        return 1

    @property
    def S(self) -> int:
        return self.n - self.k

    @property
    def B(self) -> int:
        return self.k * (self.d - self.k) + self.k * (self.k + 1) // 2

    @property
    def rows(self) -> int:
        """Height of the message matrix."""
        return self.d

    @property
    def file_size(self) -> int:
        return self.S * self.B

    @cached_property
    def field(self) -> Field:
        return Field(self.q)

    @cached_property
    def points(self) -> EvalPoints:
        return default_points(self)

    @cached_property
    def psi(self) -> np.ndarray:
        return vandermonde(self.field, self.points.x, self.d)


@dataclass(frozen=True)
class MsrParams:
    n: int
    k: int
    q: int

    family = Family.MSR

    @property
    def d(self) -> int:
        return 2 * self.k - 2

    @property
    def alpha(self) -> int:
        return self.k - 1

    @property
    def beta(self) -> int:
        return 1

    @property
    def S(self) -> int:
        return self.n - 2 * self.alpha

    @property
    def B(self) -> int:
        return self.alpha * (self.alpha + 1)

    @property
    def rows(self) -> int:
        return 2 * self.alpha

    @property
    def file_size(self) -> int:
        return self.S * self.B

    @cached_property
    def field(self) -> Field:
        return Field(self.q)

    @cached_property
    def points(self) -> EvalPoints:
        return default_points(self)

    @cached_property
    def psi(self) -> np.ndarray:
        return vandermonde(self.field, self.points.x, 2 * self.alpha)

    @cached_property
    def lambdas(self) -> np.ndarray:
        """``x_i ** alpha``, the diagonal of the PM-MSR ``Lambda``."""
        return self.psi[:, self.alpha].copy()


Params = Union[MbrParams, MsrParams]


def cut_set_bound(k: int, d: int, alpha: int, beta: int = 1) -> int:
    return sum(min(alpha, (d - i) * beta) for i in range(k))


def _power_classes(q: int, alpha: int) -> int:
    """Number of distinct values of ``x**alpha`` over nonzero ``x`` in F_q."""
    return (q - 1) // gcd(alpha, q - 1)


def validate_params(family, n: int, k: int, d: int, q: int, *, check_field: bool = True) -> Params:
    """Check a geometry and return its parameter record.

    ``check_field=False`` skips the field-size requirements; used by code paths
    (privacy audits, rate formulas) that never evaluate the code.
    """
    family = Family(family)
    for name, v in (("n", n), ("k", k), ("d", d), ("q", q)):
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise InvalidGeometry(f"{name} must be a positive integer, got {v!r}")
    n, k, d, q = int(n), int(k), int(d), int(q)
    if k > d:
        raise InvalidGeometry(f"need k <= d, got k={k}, d={d}")
    if d >= n:
        raise InvalidGeometry(f"need d <= n - 1, got d={d}, n={n}")
    if family is Family.MBR:
        if n < 2 * k:
            raise InvalidGeometry(f"MBR retrieval needs n >= 2k, got n={n}, k={k}")
        params: Params = MbrParams(n, k, d, q)
    else:
        if d != 2 * k - 2:
            raise InvalidGeometry(f"MSR requires d = 2k - 2, got k={k}, d={d}")
        params = MsrParams(n, k, q)
        if params.S < 2:
            raise InvalidGeometry(f"MSR needs S = n - 2*alpha >= 2, got {params.S}")
    if not is_prime(q):
        raise FieldTooSmall(f"q={q} is not prime")
    if check_field:
        if q < n + 1:
            raise FieldTooSmall(f"need q >= n + 1 = {n + 1}, got {q}")
        if family is Family.MSR and _power_classes(q, params.alpha) < n:
            raise FieldTooSmall(
                f"F_{q} has only {_power_classes(q, params.alpha)} distinct values of x^{params.alpha}, need {n}"
            )
    assert params.B == cut_set_bound(params.k, params.d, params.alpha, params.beta)
    return params


def smallest_prime(family, n: int, k: int, d: int) -> int:
    """Smallest prime field on which :func:`validate_params` accepts the geometry."""
    q = next_prime(n + 1)
    while True:
        try:
            validate_params(family, n, k, d, q)
            return q
        except FieldTooSmall:
            q = next_prime(q + 1)


def default_points(params: Params) -> EvalPoints:
    """Canonical evaluation points.

    MBR uses ``1..n``.  MSR scans ``1, 2, ...`` keeping each point whose
    ``alpha``-th power is new, so the ``x_i**alpha`` are pairwise distinct.
    """
    field = Field(params.q)
    if params.family is Family.MBR:
        return EvalPoints(field, tuple(range(1, params.n + 1)))
    seen: set[int] = set()
    xs: list[int] = []
    for x in range(1, params.q):
        lam = pow(x, params.alpha, params.q)
        if lam not in seen:
            seen.add(lam)
            xs.append(x)
            if len(xs) == params.n:
                return EvalPoints(field, tuple(xs))
    raise FieldTooSmall(f"cannot pick {params.n} points with distinct x^{params.alpha} in F_{params.q}")


# ---------------------------------------------------------------------------
# message packing


@lru_cache(maxsize=None)
def _layout(family: Family, k: int, alpha: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """For each free symbol, the (row, col) cells of one stripe it occupies."""
    cells: list[tuple[tuple[int, int], ...]] = []
    if family is Family.MBR:
        d = alpha
        for r in range(k):
            for c in range(r, k):
                cells.append(((r, c), (c, r)) if r != c else ((r, r),))
        for r in range(k):
            for c in range(k, d):
                cells.append(((r, c), (c, r)))
    else:
        for base in (0, alpha):
            for r in range(alpha):
                for c in range(r, alpha):
                    cells.append(((base + r, c), (base + c, r)) if r != c else ((base + r, r),))
    return tuple(cells)


def pack_message(file, params: Params) -> np.ndarray:
    """Arrange ``S*B`` file symbols into the ``(rows, alpha, S)`` message array.

    Stripe ``s`` takes symbols ``[s*B, (s+1)*B)``.  Within a stripe the MBR
    order fills the upper triangle of the symmetric block row by row, then
    the rectangular block row by row; MSR fills the upper triangle of the top
    block, then of the bottom block.
    """
    sym = params.field.array(file).reshape(-1)
    if sym.size != params.file_size:
        raise LengthMismatch(f"file has {sym.size} symbols, expected S*B = {params.file_size}")
    stripes = sym.reshape(params.S, params.B)
    M = np.zeros((params.rows, params.alpha, params.S), dtype=np.int64)
    for idx, cells in enumerate(_layout(params.family, params.k, params.alpha)):
        for r, c in cells:
            M[r, c, :] = stripes[:, idx]
    return M


def check_message(M: np.ndarray, params: Params) -> None:
    shape = (params.rows, params.alpha, params.S)
    if M.shape != shape:
        raise InvariantViolation(f"message shape {M.shape}, expected {shape}")
    k, a = params.k, params.alpha
    if params.family is Family.MBR:
        if not np.array_equal(M, M.transpose(1, 0, 2)):
            raise InvariantViolation("MBR message matrix is not symmetric")
        if M[k:, k:, :].any():
            raise InvariantViolation("MBR message matrix has a nonzero lower-right block")
    else:
        for block in (M[:a], M[a:]):
            if not np.array_equal(block, block.transpose(1, 0, 2)):
                raise InvariantViolation("MSR message block is not symmetric")


def unpack_message(M, params: Params) -> np.ndarray:
    M = np.asarray(M, dtype=np.int64)
    check_message(M, params)
    cells = _layout(params.family, params.k, params.alpha)
    stripes = np.empty((params.S, params.B), dtype=np.int64)
    for idx, cell in enumerate(cells):
        r, c = cell[0]
        stripes[:, idx] = M[r, c, :]
    return stripes.reshape(-1)


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class NodeStore:
    params: Params
    shares: np.ndarray  # (F, n, alpha, S)

    @property
    def files(self) -> int:
        return self.shares.shape[0]

    def row(self, server: int) -> np.ndarray:
        """Everything server ``server`` (1-based) stores: ``(F, alpha, S)``."""
        return self.shares[:, server - 1]


def encode(M, params: Params) -> NodeStore:
    """Encode one message array ``(rows, alpha, S)`` or a stack ``(F, rows, alpha, S)``."""
    M = params.field.array(M)
    if M.ndim == 3:
        M = M[None]
    F = M.shape[0]
    psi = params.psi
    shares = np.empty((F, params.n, params.alpha, params.S), dtype=np.int64)
    for f in range(F):
        flat = M[f].reshape(params.rows, params.alpha * params.S)
        shares[f] = params.field.matmul(psi, flat).reshape(params.n, params.alpha, params.S)
    return NodeStore(params, shares)


def encode_files(files: Sequence, params: Params) -> NodeStore:
    if len(files) == 0:
        return NodeStore(params, np.zeros((0, params.n, params.alpha, params.S), dtype=np.int64))
    return encode(np.stack([pack_message(f, params) for f in files]), params)


def _ids(servers: Sequence[int], params: Params) -> list[int]:
    ids = [int(i) for i in servers]
    if len(set(ids)) != len(ids):
        raise BadSubset(f"duplicate server ids in {ids}")
    if any(i < 1 or i > params.n for i in ids):
        raise BadSubset(f"server ids {ids} out of range 1..{params.n}")
    return ids


def reconstruct_data(shares: Mapping[int, np.ndarray], params: Params) -> np.ndarray:
    """Data-collector decoding of one file from ``k`` server shares.

    ``shares`` maps server id to its ``(alpha, S)`` share of the file.  Returns
    the ``(rows, alpha, S)`` message array.
    """
    if len(shares) < params.k:
        raise NotEnoughShares(f"{len(shares)} shares given, need k = {params.k}")
    ids = _ids(sorted(shares)[: params.k], params)
    field = params.field
    Y = np.stack([field.array(shares[i]) for i in ids])  # (k, alpha, S)
    psi = params.psi[[i - 1 for i in ids]]
    if params.family is Family.MBR:
        return _mbr_collect(field, psi, Y, params)
    return _msr_collect(field, psi, Y, params)


def _mbr_collect(field, psi, Y, params: MbrParams) -> np.ndarray:
    k, d, S = params.k, params.d, params.S
    phi, delta = psi[:, :k], psi[:, k:]
    phi_inv = field.inverse(phi)
    M = np.zeros((d, d, S), dtype=np.int64)
    for s in range(S):
        T = field.matmul(phi_inv, Y[:, k:, s])  # (k, d-k)
        Ssym = field.matmul(phi_inv, np.mod(Y[:, :k, s] - field.matmul(delta, T.T), field.p))
        M[:k, :k, s] = Ssym
        M[:k, k:, s] = T
        M[k:, :k, s] = T.T
    return M


def _msr_collect(field, psi, Y, params: MsrParams) -> np.ndarray:
    a, S, p = params.alpha, params.S, field.p
    k = a + 1
    phi = psi[:, :a]
    lam = psi[:, a]
    M = np.zeros((2 * a, a, S), dtype=np.int64)
    for s in range(S):
        Z = field.matmul(Y[:, :, s], phi.T)  # Z = P + Lambda Q, P and Q symmetric
        P = np.zeros((k, k), dtype=np.int64)
        Q = np.zeros((k, k), dtype=np.int64)
        for i in range(k):
            for j in range(i + 1, k):
                q_ij = (Z[i, j] - Z[j, i]) * field.inv(int(lam[i] - lam[j])) % p
                p_ij = (Z[i, j] - lam[i] * q_ij) % p
                P[i, j] = P[j, i] = p_ij
                Q[i, j] = Q[j, i] = q_ij
        blocks = []
        for G in (P, Q):
            rows = []
            for i in range(k):
                others = [j for j in range(k) if j != i]
                # phi_i^T S phi_j = G[i, j] for j != i  ->  solve for phi_i^T S
                rows.append(field.solve(phi[others], G[i, others]))
            PS = np.stack(rows)  # (k, a): row i is phi_i^T S
            blocks.append(field.solve(phi[:a], PS[:a]))
        M[:a, :, s] = blocks[0]
        M[a:, :, s] = blocks[1]
    return M


# ---------------------------------------------------------------------------
# repair


def repair_vector(params: Params, failed: int) -> np.ndarray:
    """Vector a helper projects its share onto when ``failed`` is repaired."""
    row = params.psi[failed - 1]
    return row.copy() if params.family is Family.MBR else row[: params.alpha].copy()


def helper_symbols(share: np.ndarray, vector: np.ndarray, field: Field) -> np.ndarray:
    """Project a ``(F, alpha, S)`` share onto ``vector``: one symbol per file per stripe."""
    share = np.asarray(share, dtype=np.int64)
    F, a, S = share.shape
    flat = share.transpose(0, 2, 1).reshape(F * S, a)
    return field.matmul(flat, np.asarray(vector, dtype=np.int64)).reshape(F, S)


def repair_node(failed: int, helpers: Mapping[int, np.ndarray], params: Params) -> np.ndarray:
    """Rebuild server ``failed`` from ``d`` helper projections.

    ``helpers`` maps helper id to its ``(F, S)`` array of projected symbols.
    Returns the restored ``(F, alpha, S)`` share.
    """
    if failed in helpers:
        raise HelperOverlap(f"failed server {failed} listed among helpers")
    if len(helpers) < params.d:
        raise NotEnoughHelpers(f"{len(helpers)} helpers given, need d = {params.d}")
    ids = _ids(sorted(helpers)[: params.d], params)
    _ids([failed], params)
    field = params.field
    H = np.stack([field.array(helpers[i]) for i in ids])  # (d, F, S)
    d, F, S = H.shape
    rep = params.psi[[i - 1 for i in ids]]
    # rep @ (M psi_f) = H for every (file, stripe)
    Mv = field.solve(rep, H.reshape(d, F * S)).reshape(params.rows, F, S)
    if params.family is Family.MBR:
        return Mv.transpose(1, 0, 2).copy()
    a = params.alpha
    lam = int(params.lambdas[failed - 1])
    restored = np.mod(Mv[:a] + lam * Mv[a:], field.p)  # (a, F, S)
    return restored.transpose(1, 0, 2).copy()


# ---------------------------------------------------------------------------
# node-store files

MAGIC = b"PMPR"
VERSION = 1
_HEADER = struct.Struct("<4sHB6Q")


@dataclass(frozen=True)
class NodeHeader:
    family: Family
    q: int
    n: int
    k: int
    d: int
    files: int
    S: int

    def params(self) -> Params:
        return validate_params(self.family, self.n, self.k, self.d, self.q)


def node_bytes(store: NodeStore, server: int) -> bytes:
    pr = store.params
    head = _HEADER.pack(MAGIC, VERSION, pr.family.code, pr.q, pr.n, pr.k, pr.d, store.files, pr.S)
    body = store.row(server).transpose(0, 2, 1).astype("<u8").tobytes()  # (f, s, j) order
    return head + body


def write_store(store: NodeStore, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(1, store.params.n + 1):
        path = directory / f"node_{i}.bin"
        path.write_bytes(node_bytes(store, i))
        paths.append(path)
    return paths


def parse_node(data: bytes) -> tuple[NodeHeader, np.ndarray]:
    """Decode one node file into its header and ``(F, alpha, S)`` share."""
    if len(data) < _HEADER.size:
        raise CorruptStore("node file shorter than its header")
    magic, version, fam, q, n, k, d, F, S = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptStore(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptStore(f"unsupported node-file version {version}")
    try:
        header = NodeHeader(Family.from_code(fam), q, n, k, d, F, S)
        params = header.params()
    except (KeyError, ValueError) as exc:
        raise CorruptStore(f"invalid header: {exc}") from exc
    if params.S != S:
        raise CorruptStore(f"header stripe count {S} disagrees with geometry ({params.S})")
    body = data[_HEADER.size :]
    expected = F * S * params.alpha * 8
    if len(body) != expected:
        raise CorruptStore(f"node body has {len(body)} bytes, expected {expected}")
    sym = np.frombuffer(body, dtype="<u8")
    if (sym >= q).any():
        raise CorruptStore("symbol out of field range")
    share = sym.astype(np.int64).reshape(F, S, params.alpha).transpose(0, 2, 1).copy()
    return header, share
