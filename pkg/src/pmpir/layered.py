"""Column-layered PIR machinery shared by the MBR and MSR protocols.

Both protocols send ``L`` queries ``Q = D + E`` where ``D`` repeats one random
scalar per (query, stripe, file) on every server and ``E`` puts a single 1 on
a public set of (query, stripe) -> server cells for the wanted file.  The
client then walks the message columns from last to first.  At each column
some message rows are already known (structural zeros, or mirrored entries
recovered at an earlier column by symmetry of ``M``) and the rest are
recovered from the responses:

1. subtract the known rows' interference using the ledger of random scalars,
2. interpolate the remaining interference from the servers the query left
   untouched,
3. read one wanted symbol off every server the query did touch, and
4. per stripe, interpolate the unknown message rows from those symbols.

A :class:`ColumnStep` captures one column; :func:`certify` checks ahead of time
that every interpolation in the walk is well posed; :func:`peel` runs it.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import BadFileIndex, DecodeFailure, MissingResponses, NotInformationSet, PlanInfeasible
from .galois import Field
from .nested_rs import EvalPoints, ExponentCode, decode_info_set, is_info_set

Responses = Mapping[tuple[int, int, int], int]  # (query, server, column) -> symbol, all 1-based
Ledger = dict[tuple[int, int, int], int]  # (query, row, column) -> sum_{s,f} lambda * M


@dataclass(frozen=True)
class ColumnStep:
    """Public description of how one column is served and decoded.

    ``mirrored`` lists ``(row, src_row, src_col)``: entry ``M[row, column]``
    equals ``M[src_row, src_col]`` which was recovered at an earlier column.
    Rows listed neither as unknown nor mirrored are structurally zero.
    """

    column: int
    servers: tuple[int, ...]
    queries: int
    unknown: tuple[int, ...]
    mirrored: tuple[tuple[int, int, int], ...] = ()

    @property
    def downloads(self) -> int:
        return len(self.servers) * self.queries


@dataclass(frozen=True)
class Schedule:
    steps: tuple[ColumnStep, ...]  # in decoding order

    def step(self, column: int) -> ColumnStep:
        for st in self.steps:
            if st.column == column:
                return st
        raise KeyError(column)

    @property
    def total(self) -> int:
        return sum(st.downloads for st in self.steps)

    def pairs_for(self, server: int) -> list[tuple[int, int]]:
        """(query, column) pairs ``server`` answers, in transport order."""
        out = []
        for st in sorted(self.steps, key=lambda s: -s.column):
            if server in st.servers:
                out.extend((ell, st.column) for ell in range(1, st.queries + 1))
        return out

    def per_server(self, n: int) -> dict[int, int]:
        return {i: len(self.pairs_for(i)) for i in range(1, n + 1)}


@dataclass(frozen=True)
class Certificate:
    column: int
    clean_sets: tuple[tuple[int, ...], ...]  # per query
    stripe_sets: tuple[tuple[int, ...], ...]  # per stripe

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        h.update(repr((self.column, self.clean_sets, self.stripe_sets)).encode())
        return h.hexdigest()


def certify(schedule: Schedule, hits: np.ndarray, points: EvalPoints) -> list[Certificate]:
    """Verify a placement ``hits[query-1, stripe-1] = server`` against a schedule.

    Raises :class:`PlanInfeasible` naming the first violated condition.
    """
    hits = np.asarray(hits, dtype=np.int64)
    if hits.ndim != 2:
        raise PlanInfeasible(f"placement must be 2-D, got shape {hits.shape}")
    return list(_certify(schedule, hits.tobytes(), hits.shape, points))


@functools.lru_cache(maxsize=256)
def _certify(schedule: Schedule, raw: bytes, shape: tuple[int, int], points: EvalPoints) -> tuple[Certificate, ...]:
    # everything here is public and deterministic, so results are memoised
    hits = np.frombuffer(raw, dtype=np.int64).reshape(shape)
    L, S = shape
    certs = []
    for st in schedule.steps:
        code = ExponentCode(tuple(r - 1 for r in st.unknown), points)
        responders = set(st.servers)
        if st.queries > L:
            raise PlanInfeasible(f"column {st.column} needs {st.queries} queries, plan has {L}")
        clean_sets = []
        for ell in range(1, st.queries + 1):
            row = [int(v) for v in hits[ell - 1]]
            if len(set(row)) != S:
                raise PlanInfeasible(f"query {ell} hits a server twice")
            if not set(row) <= responders:
                raise PlanInfeasible(f"query {ell} hits a server that is silent at column {st.column}")
            clean = tuple(i for i in st.servers if i not in row)
            if len(clean) != code.size or not is_info_set([i - 1 for i in clean], code):
                raise PlanInfeasible(
                    f"column {st.column}: servers {clean} left clean by query {ell} are not an information set"
                )
            clean_sets.append(clean)
        stripe_sets = []
        for s in range(S):
            col = tuple(int(hits[ell, s]) for ell in range(st.queries))
            if len(set(col)) != len(col) or len(col) != code.size or not is_info_set([i - 1 for i in col], code):
                raise PlanInfeasible(f"column {st.column}, stripe {s + 1}: servers {col} cannot be solved")
            stripe_sets.append(col)
        certs.append(Certificate(st.column, tuple(clean_sets), tuple(stripe_sets)))
    return tuple(certs)


# ---------------------------------------------------------------------------
# queries

MaskSampler = Callable[[int, tuple, int], np.ndarray]


def sample_masks(seed: int, shape: tuple, p: int) -> np.ndarray:
    """Uniform F_p scalars from a Philox stream keyed by ``seed``."""
    rng = np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))
    return rng.integers(0, p, size=shape, dtype=np.int64)


@dataclass(frozen=True)
class QuerySet:
    """Queries for one retrieval.

    ``masks[l, s, f]`` is the repetition-code scalar lambda; ``hits[l, s]`` the
    server receiving the retrieval 1 for query ``l+1``, stripe ``s+1``.
    """

    p: int
    n: int
    files: int
    f0: int
    masks: np.ndarray  # (L, S, F)
    hits: np.ndarray  # (L, S), server ids
    seed: int | None = None

    @property
    def L(self) -> int:
        return self.masks.shape[0]

    @property
    def S(self) -> int:
        return self.masks.shape[1]

    @property
    def D(self) -> np.ndarray:
        """(L, n, S, F)"""
        return np.broadcast_to(self.masks[:, None, :, :], (self.L, self.n, self.S, self.files)).copy()

    @property
    def E(self) -> np.ndarray:
        return pattern_array(self.hits, self.n, self.files, self.f0)

    @property
    def Q(self) -> np.ndarray:
        return np.mod(self.D + self.E, self.p)

    def for_server(self, server: int) -> np.ndarray:
        """``Q[:, server]`` of shape (L, S, F); the only thing the server sees."""
        q = self.masks.copy()
        ls = np.nonzero(self.hits == server)
        q[ls[0], ls[1], self.f0 - 1] += 1
        return np.mod(q, self.p)


def pattern_array(hits: np.ndarray, n: int, files: int, f0: int) -> np.ndarray:
    L, S = hits.shape
    E = np.zeros((L, n, S, files), dtype=np.int64)
    ell, s = np.meshgrid(np.arange(L), np.arange(S), indexing="ij")
    E[ell.ravel(), hits.ravel() - 1, s.ravel(), f0 - 1] = 1
    return E


def make_queries(
    p: int, n: int, hits: np.ndarray, files: int, f0: int, seed: int, sampler: MaskSampler = sample_masks
) -> QuerySet:
    if not 1 <= f0 <= files:
        raise BadFileIndex(f"f0={f0} not in 1..{files}")
    hits = np.asarray(hits, dtype=np.int64)
    masks = sampler(seed, (hits.shape[0], hits.shape[1], files), p)
    return QuerySet(p, n, files, f0, np.mod(masks, p), hits, seed)


# ---------------------------------------------------------------------------
# server side


def respond(server: int, share: np.ndarray, query: np.ndarray, pairs: Sequence[tuple[int, int]], field: Field):
    """Inner products ``<Q_l[i, .], C[i, j, .]>`` for the scheduled (l, j) pairs.

    ``share`` is the server's (F, alpha, S) content, ``query`` its (L, S, F)
    slice.  Returns a list aligned with ``pairs``.
    """
    share = np.asarray(share, dtype=np.int64)
    F, a, S = share.shape
    q = np.asarray(query, dtype=np.int64)
    qf = q.reshape(q.shape[0], S * F)  # (l, s*F + f)
    cf = share.transpose(2, 0, 1).reshape(S * F, a)  # (s*F + f, j)
    proj = field.matmul(qf, cf)  # (L, alpha)
    return [int(proj[ell - 1, j - 1]) for ell, j in pairs]


# ---------------------------------------------------------------------------
# client side


@dataclass
class PeelResult:
    message: np.ndarray  # (rows, cols, S) for the wanted file
    ledger: Ledger = dc_field(default_factory=dict)


def peel(
    schedule: Schedule,
    responses: Responses,
    hits: np.ndarray,
    points: EvalPoints,
    rows: int,
    cols: int,
) -> PeelResult:
    field = points.field
    p = field.p
    hits = np.asarray(hits)
    S = hits.shape[1]
    x = points.array()
    M = np.zeros((rows, cols, S), dtype=np.int64)
    ledger: Ledger = {}

    def xpow(i: int, r: int) -> int:
        return pow(int(x[i - 1]), r - 1, p)

    for st in schedule.steps:
        j = st.column
        code = ExponentCode(tuple(r - 1 for r in st.unknown), points)
        unknown_exps = code.exponents
        wanted: dict[tuple[int, int], int] = {}  # (server, stripe) -> C^{f0}[i, j, s]
        for ell in range(1, st.queries + 1):
            try:
                y = {i: int(responses[(ell, i, j)]) % p for i in st.servers}
            except KeyError as exc:
                raise MissingResponses(f"missing response (query, server, column) = {exc.args[0]}") from None
            sigma_known = {}
            for r, sr, sc in st.mirrored:
                key = (ell, sr, sc)
                if key not in ledger:
                    raise DecodeFailure(f"ledger entry {key} unavailable at column {j}")
                sigma_known[r] = ledger[key]
                for i in st.servers:
                    y[i] = (y[i] - sigma_known[r] * xpow(i, r)) % p
            touched = {int(hits[ell - 1, s]): s for s in range(S)}
            clean = [i for i in st.servers if i not in touched]
            try:
                coeffs, word = decode_info_set([y[i] for i in clean], [i - 1 for i in clean], code)
            except NotInformationSet as exc:
                raise DecodeFailure(f"column {j}, query {ell}: {exc}") from exc
            for e, c in zip(unknown_exps, coeffs):
                ledger[(ell, e + 1, j)] = int(c)
            for r, v in sigma_known.items():
                ledger[(ell, r, j)] = v
            for r in range(1, rows + 1):
                ledger.setdefault((ell, r, j), 0)
            for i, s in touched.items():
                wanted[(i, s)] = (y[i] - int(word[i - 1])) % p
        for r, sr, sc in st.mirrored:
            M[r - 1, j - 1, :] = M[sr - 1, sc - 1, :]
        for s in range(S):
            servers = [int(hits[ell, s]) for ell in range(st.queries)]
            vals = []
            for i in servers:
                v = wanted[(i, s)]
                for r, _, _ in st.mirrored:
                    v -= xpow(i, r) * int(M[r - 1, j - 1, s])
                vals.append(v % p)
            try:
                coeffs, _ = decode_info_set(vals, [i - 1 for i in servers], code)
            except NotInformationSet as exc:
                raise DecodeFailure(f"column {j}, stripe {s + 1}: {exc}") from exc
            for e, c in zip(unknown_exps, coeffs):
                M[e, j - 1, s] = int(c)
    return PeelResult(M, ledger)


def true_ledger(masks: np.ndarray, messages: np.ndarray, p: int) -> np.ndarray:
    """Oracle: ``sigma[l, r, j] = sum_{s,f} lambda[l, s, f] * M^f[r, j, s]``.

    ``messages`` is (F, rows, cols, S); returns (L, rows, cols).
    """
    out = np.zeros((masks.shape[0],) + messages.shape[1:3], dtype=object)
    m = messages.astype(object)
    lam = masks.astype(object)
    for f in range(messages.shape[0]):
        out += np.einsum("ls,rjs->lrj", lam[:, :, f], m[f])
    return np.mod(out, p).astype(np.int64)
