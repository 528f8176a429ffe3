"""In-process multi-server storage system.

Servers and client only talk through serialized frames pushed on one queue
pair per server, so every downloaded symbol is counted exactly where it
crosses the boundary.  Frame layout (little-endian)::

    u32 length of the rest | u8 kind | 8-byte params hash | u64 payload symbols...
"""

from __future__ import annotations

import enum
import hashlib
import json
import queue
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import layered
from .errors import (
    BadFileIndex,
    CorruptStore,
    HeaderMismatch,
    HelperOverlap,
    MalformedFrame,
    NotEnoughHelpers,
)
from .layered import QuerySet, Schedule
from .pir_mbr import mbr_make_queries, mbr_pattern, mbr_reconstruct, mbr_schedule
from .pir_msr import RetrievalPlan, msr_make_queries, msr_plan, msr_reconstruct
from .pm_codes import Family, NodeStore, Params, helper_symbols, parse_node, repair_node, repair_vector


class Kind(enum.IntEnum):
    QUERY = 1
    RESPONSE = 2
    REPAIR_REQ = 3
    REPAIR_SYM = 4


_PREFIX = struct.Struct("<I")
_HEAD = struct.Struct("<B8s")


def params_hash(params: Params) -> bytes:
    key = f"{params.family.value}:{params.q}:{params.n}:{params.k}:{params.d}"
    return hashlib.blake2b(key.encode(), digest_size=8).digest()


@dataclass(frozen=True)
class WireMessage:
    kind: Kind
    params_hash: bytes
    payload: tuple[int, ...]

    def encode(self) -> bytes:
        body = _HEAD.pack(int(self.kind), self.params_hash) + np.asarray(self.payload, dtype="<u8").tobytes()
        return _PREFIX.pack(len(body)) + body

    @classmethod
    def decode(cls, frame: bytes) -> "WireMessage":
        if len(frame) < _PREFIX.size + _HEAD.size:
            raise MalformedFrame(f"frame of {len(frame)} bytes is shorter than its header")
        (length,) = _PREFIX.unpack_from(frame)
        if length != len(frame) - _PREFIX.size:
            raise MalformedFrame(f"length prefix {length} but {len(frame) - _PREFIX.size} bytes follow")
        kind, phash = _HEAD.unpack_from(frame, _PREFIX.size)
        try:
            kind = Kind(kind)
        except ValueError:
            raise MalformedFrame(f"unknown message kind {kind}") from None
        body = frame[_PREFIX.size + _HEAD.size :]
        if len(body) % 8:
            raise MalformedFrame("payload is not a whole number of symbols")
        return cls(kind, phash, tuple(int(v) for v in np.frombuffer(body, dtype="<u8")))


def codec_roundtrip(msg: WireMessage) -> WireMessage:
    return WireMessage.decode(msg.encode())


class ServerInstance:
    """One storage node.  Sees only its own share and the frames it is sent."""

    def __init__(self, sid: int, share: np.ndarray, params: Params):
        self.id = sid
        self._share = np.array(share, dtype=np.int64)
        self._share.setflags(write=False)
        self.params = params
        self.hash = params_hash(params)
        self.symbols_in = 0
        self.symbols_out = 0
        self.inbox: queue.SimpleQueue[bytes] = queue.SimpleQueue()
        self.outbox: queue.SimpleQueue[bytes] = queue.SimpleQueue()

    @property
    def share(self) -> np.ndarray:
        return self._share

    def handle(self, frame: bytes) -> bytes:
        msg = WireMessage.decode(frame)
        if msg.params_hash != self.hash:
            raise HeaderMismatch(f"server {self.id}: message for different parameters")
        self.symbols_in += len(msg.payload)
        F, a, S = self._share.shape
        if msg.kind is Kind.QUERY:
            # payload: m, then m (query, column) pairs, then Q[i] as (L, S, F)
            m = msg.payload[0]
            flat = msg.payload[1 : 1 + 2 * m]
            pairs = list(zip(flat[0::2], flat[1::2]))
            q = np.array(msg.payload[1 + 2 * m :], dtype=np.int64)
            if S * F == 0 or q.size % (S * F):
                raise MalformedFrame("query payload does not match the share shape")
            out = layered.respond(self.id, self._share, q.reshape(-1, S, F), pairs, self.params.field)
            reply = WireMessage(Kind.RESPONSE, self.hash, tuple(out))
        elif msg.kind is Kind.REPAIR_REQ:
            if len(msg.payload) != a:
                raise MalformedFrame(f"repair vector of length {len(msg.payload)}, expected {a}")
            sym = helper_symbols(self._share, np.array(msg.payload, dtype=np.int64), self.params.field)
            reply = WireMessage(Kind.REPAIR_SYM, self.hash, tuple(int(v) for v in sym.reshape(-1)))
        else:
            raise MalformedFrame(f"server cannot handle {msg.kind.name}")
        self.symbols_out += len(reply.payload)
        return reply.encode()

    def step(self) -> None:
        """Answer everything waiting in the inbox."""
        while True:
            try:
                frame = self.inbox.get_nowait()
            except queue.Empty:
                return
            self.outbox.put(self.handle(frame))


class Cluster:
    def __init__(self, params: Params, servers: dict[int, ServerInstance], files: int, workers: int = 1):
        self.params = params
        self.servers = servers
        self.files = files
        self.workers = workers

    @classmethod
    def from_store(cls, store: NodeStore, workers: int = 1) -> "Cluster":
        pr = store.params
        servers = {i: ServerInstance(i, store.row(i), pr) for i in range(1, pr.n + 1)}
        return cls(pr, servers, store.files, workers)

    def exchange(self, outgoing: dict[int, bytes]) -> dict[int, bytes]:
        """Deliver one frame per server and collect the replies."""
        for i, frame in outgoing.items():
            self.servers[i].inbox.put(frame)
        targets = [self.servers[i] for i in outgoing]
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                list(pool.map(ServerInstance.step, targets))
        else:
            for srv in targets:
                srv.step()
        return {i: self.servers[i].outbox.get_nowait() for i in outgoing}


def cluster_load(directory, params: Params | None = None, workers: int = 1) -> Cluster:
    directory = Path(directory)
    first = directory / "node_1.bin"
    if not first.is_file():
        raise CorruptStore(f"{first} not found")
    header, _ = parse_node(first.read_bytes())
    pr = header.params()
    if params is not None and (params.family, params.n, params.k, params.d, params.q) != (
        pr.family,
        pr.n,
        pr.k,
        pr.d,
        pr.q,
    ):
        raise HeaderMismatch(f"store parameters {header} differ from {params}")
    servers = {}
    for i in range(1, pr.n + 1):
        path = directory / f"node_{i}.bin"
        if not path.is_file():
            raise CorruptStore(f"{path} not found")
        h, share = parse_node(path.read_bytes())
        if h != header:
            raise HeaderMismatch(f"{path.name} header {h} differs from node_1 header {header}")
        servers[i] = ServerInstance(i, share, pr)
    return Cluster(pr, servers, header.files, workers)


# ---------------------------------------------------------------------------
# retrieval


@dataclass
class Transcript:
    family: str
    params: dict
    files: int
    seed: int
    f0: int
    per_server: dict[int, int]
    total_downloaded: int
    file_size: int
    rate: Fraction
    wall_time: float
    plan: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_server"] = {str(k): v for k, v in self.per_server.items()}
        d["rate"] = f"{self.rate.numerator}/{self.rate.denominator}"
        d["rate_decimal"] = float(self.rate)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def query_frames(cluster: Cluster, queries: QuerySet, schedule: Schedule) -> dict[int, bytes]:
    h = params_hash(cluster.params)
    frames = {}
    for i in cluster.servers:
        pairs = schedule.pairs_for(i)
        if not pairs:
            continue
        head = [len(pairs)] + [v for pair in pairs for v in pair]
        payload = tuple(head) + tuple(int(v) for v in queries.for_server(i).reshape(-1))
        frames[i] = WireMessage(Kind.QUERY, h, payload).encode()
    return frames


def run_retrieval(
    cluster: Cluster,
    f0: int,
    seed: int,
    *,
    pattern: str = "text",
    plan: RetrievalPlan | str = "auto",
    sampler=layered.sample_masks,
) -> tuple[np.ndarray, Transcript]:
    """Privately fetch file ``f0`` (1-based) and account every downloaded symbol."""
    pr = cluster.params
    if cluster.files < 1:
        raise BadFileIndex("the store holds no files")
    if not 1 <= f0 <= cluster.files:
        raise BadFileIndex(f"f0={f0} not in 1..{cluster.files}")
    t0 = time.perf_counter()
    if pr.family is Family.MBR:
        schedule = mbr_schedule(pr)
        queries = mbr_make_queries(pr, cluster.files, f0, seed, pattern, sampler)
        label = pattern
    else:
        if not isinstance(plan, RetrievalPlan):
            plan = msr_plan(pr, plan)
        schedule = plan.schedule(pr)
        queries = msr_make_queries(pr, plan, cluster.files, f0, seed, sampler)
        label = plan.strategy
    replies = cluster.exchange(query_frames(cluster, queries, schedule))
    responses = {}
    per_server = {i: 0 for i in cluster.servers}
    for i, frame in replies.items():
        msg = WireMessage.decode(frame)
        if msg.kind is not Kind.RESPONSE:
            raise MalformedFrame(f"server {i} replied with {msg.kind.name}")
        pairs = schedule.pairs_for(i)
        if len(msg.payload) != len(pairs):
            raise MalformedFrame(f"server {i} sent {len(msg.payload)} symbols for {len(pairs)} requests")
        per_server[i] = len(msg.payload)
        for (ell, j), v in zip(pairs, msg.payload):
            responses[(ell, i, j)] = v
    if pr.family is Family.MBR:
        file, _ = mbr_reconstruct(responses, queries, pr)
    else:
        file, _ = msr_reconstruct(responses, queries, plan, pr)
    total = sum(per_server.values())
    transcript = Transcript(
        family=pr.family.value,
        params={"n": pr.n, "k": pr.k, "d": pr.d, "q": pr.q, "alpha": pr.alpha, "S": pr.S, "B": pr.B},
        files=cluster.files,
        seed=seed,
        f0=f0,
        per_server=per_server,
        total_downloaded=total,
        file_size=pr.file_size,
        rate=Fraction(pr.file_size, total),
        wall_time=time.perf_counter() - t0,
        plan=label,
    )
    return file, transcript


def run_repair(cluster: Cluster, failed: int, helpers: Sequence[int]) -> ServerInstance:
    """Rebuild server ``failed`` from ``helpers``; ``symbols_in`` of the result is the repair download."""
    pr = cluster.params
    helpers = [int(h) for h in helpers]
    if failed in helpers:
        raise HelperOverlap(f"failed server {failed} listed among helpers")
    if len(set(helpers)) != pr.d:
        raise NotEnoughHelpers(f"{len(set(helpers))} distinct helpers, need exactly d = {pr.d}")
    vec = repair_vector(pr, failed)
    h = params_hash(pr)
    req = WireMessage(Kind.REPAIR_REQ, h, tuple(int(v) for v in vec)).encode()
    replies = cluster.exchange({i: req for i in helpers})
    received = {}
    downloaded = 0
    for i, frame in replies.items():
        msg = WireMessage.decode(frame)
        if msg.kind is not Kind.REPAIR_SYM:
            raise MalformedFrame(f"helper {i} replied with {msg.kind.name}")
        downloaded += len(msg.payload)
        received[i] = np.array(msg.payload, dtype=np.int64).reshape(cluster.files, pr.S)
    share = repair_node(failed, received, pr)
    node = ServerInstance(failed, share, pr)
    node.symbols_in = downloaded
    return node


# ---------------------------------------------------------------------------
# privacy audit

QueryFactory = Callable[[Params, int, int, int], QuerySet]


@dataclass
class PrivacyReport:
    trials: int
    structural_failures: int
    cells: int
    pvalues: np.ndarray | None = field(repr=False, default=None)
    threshold: float = 1e-6

    @property
    def structural_ok(self) -> bool:
        return self.structural_failures == 0

    @property
    def fraction_above(self) -> float | None:
        if self.pvalues is None:
            return None
        return float(np.mean(self.pvalues > self.threshold))

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "structural_ok": self.structural_ok,
            "structural_failures": self.structural_failures,
            "cells": self.cells,
            "fraction_p_above_threshold": self.fraction_above,
            "threshold": self.threshold,
            "min_p": None if self.pvalues is None else float(self.pvalues.min()),
        }


def public_hits(params: Params, pattern: str = "text", plan: RetrievalPlan | str = "auto") -> np.ndarray:
    if params.family is Family.MBR:
        return mbr_pattern(params, pattern)
    if not isinstance(plan, RetrievalPlan):
        plan = msr_plan(params, plan)
    return plan.hits


def audit_privacy(
    params: Params,
    files: int,
    trials: int,
    seed: int,
    *,
    query_factory: QueryFactory | None = None,
    hits: np.ndarray | None = None,
    max_chi2_field: int = 64,
) -> PrivacyReport:
    """Check that what each server sees does not depend on ``f0``.

    Structural: per trial (``f0`` round-robin) ``Q[i] - E[i]`` must equal the
    seeded mask stream for every server.  Empirical: a chi-square uniformity
    test per (server, query, stripe, file) cell, when ``q`` is small enough
    to bin.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p, n = params.q, params.n
    hits = public_hits(params) if hits is None else np.asarray(hits)
    L, S = hits.shape
    if query_factory is None:

        def query_factory(pr, F, f0, s):
            return layered.make_queries(pr.q, pr.n, hits, F, f0, s)

    patterns = [layered.pattern_array(hits, n, files, f0) for f0 in range(1, files + 1)]
    bins = p <= max_chi2_field
    seen = np.empty((trials, L, n, S, files), dtype=np.uint8 if p < 256 else np.int64) if bins else None
    failures = 0
    for t in range(trials):
        f0 = t % files + 1
        s_t = (seed * 1_000_003 + t) % 2**64
        Q = query_factory(params, files, f0, s_t).Q
        ref = layered.sample_masks(s_t, (L, S, files), p)
        if not np.array_equal(np.mod(Q - patterns[f0 - 1], p), np.broadcast_to(ref[:, None], Q.shape)):
            failures += 1
        if bins:
            seen[t] = Q
    pvalues = None
    if bins:
        counts = np.stack([(seen == v).sum(axis=0) for v in range(p)], axis=-1).reshape(-1, p)
        pvalues = stats.chisquare(counts, axis=1).pvalue
    return PrivacyReport(trials, failures, L * n * S * files, pvalues)
