"""PIR over product-matrix MSR codes with ``d = 2k - 2``.

Column ``j`` (walked from ``alpha`` down to 1) has unknown rows
``{1..j} | {alpha+1..alpha+j}``; the other rows are mirrored from later
columns through the symmetry of both message blocks.  The unknown part of a
column lives in the ``2j``-dimensional code spanned by ``x**e`` with
``e in [0, j-1] | [alpha, alpha+j-1]``, which is not MDS, so where the
retrieval cells go matters.  A :class:`RetrievalPlan` fixes a server order
and the cells, and is only handed out after every interpolation it implies
has been rank-checked.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import layered
from .errors import InvalidGeometry, NoNestedSets, PlanInfeasible
from .layered import Certificate, ColumnStep, QuerySet, Schedule
from .nested_rs import EvalPoints, ExponentCode, is_info_set
from .pm_codes import MsrParams, unpack_message

STRATEGIES = ("tail", "grouped", "search")
SEARCH_BUDGET = 200_000


@dataclass(frozen=True)
class NestedInfoSets:
    order: tuple[int, ...]  # server id at each position 1..n
    sets: tuple[frozenset[int], ...]  # I_1 ⊂ ... ⊂ I_alpha, server ids


def compute_nested_info_sets(points: EvalPoints, alpha: int) -> NestedInfoSets:
    """Find ``I_1 ⊂ ... ⊂ I_alpha`` with ``I_j`` an information set of layer ``j``.

    ``I_alpha`` is tried in lexicographic order (any ``2*alpha`` servers work
    for the top layer), each smaller set is searched inside the previous one
    preferring high server ids, with backtracking.  The returned order puts
    ``I_j`` at positions ``2*alpha - 2j + 1 .. 2*alpha``.
    """
    n = points.n
    if n < 2 * alpha:
        raise NoNestedSets(f"need n >= 2*alpha, got n={n}, alpha={alpha}")
    codes = {j: ExponentCode.msr_layer(j, alpha, points) for j in range(1, alpha + 1)}

    def descend(chain: list[tuple[int, ...]]) -> list[tuple[int, ...]] | None:
        j = alpha - len(chain)
        if j == 0:
            return chain
        for sub in reversed(list(itertools.combinations(chain[-1], 2 * j))):
            if is_info_set([i - 1 for i in sub], codes[j]):
                found = descend(chain + [sub])
                if found:
                    return found
        return None

    for top in itertools.combinations(range(1, n + 1), 2 * alpha):
        chain = descend([top])
        if chain:
            sets = [frozenset(c) for c in reversed(chain)]  # I_1 .. I_alpha
            order: list[int] = []
            prev: frozenset[int] = frozenset()
            layers = []
            for s in sets:
                layers.append(sorted(s - prev))
                prev = s
            for layer in reversed(layers):
                order.extend(layer)
            order.extend(i for i in range(1, n + 1) if i not in sets[-1])
            return NestedInfoSets(tuple(order), tuple(sets))
    raise NoNestedSets(f"no nested information sets for points {points.x}")


def msr_schedule(params: MsrParams, order=None) -> Schedule:
    """Column ``j`` is answered by the servers at positions ``2a-2j+1..n`` with queries ``1..2j``."""
    a, n = params.alpha, params.n
    order = tuple(order) if order is not None else tuple(range(1, n + 1))
    steps = []
    for j in range(a, 0, -1):
        unknown = tuple(range(1, j + 1)) + tuple(range(a + 1, a + j + 1))
        mirrored = tuple((r, j, r) for r in range(j + 1, a + 1)) + tuple(
            (a + r, a + j, r) for r in range(j + 1, a + 1)
        )
        steps.append(ColumnStep(j, order[2 * a - 2 * j :], 2 * j, unknown, mirrored))
    return Schedule(tuple(steps))


def msr_download_count(n: int, alpha: int) -> int:
    return sum(2 * j * (n - 2 * alpha + 2 * j) for j in range(1, alpha + 1))


@dataclass(frozen=True)
class RetrievalPlan:
    strategy: str
    order: tuple[int, ...]
    hits: np.ndarray  # (2*alpha, S) server ids
    certificates: tuple[Certificate, ...]

    def schedule(self, params: MsrParams) -> Schedule:
        return msr_schedule(params, self.order)

    def placement(self) -> list[tuple[int, int, int]]:
        """``(query, stripe, server)`` triples, 1-based."""
        L, S = self.hits.shape
        return [(ell + 1, s + 1, int(self.hits[ell, s])) for ell in range(L) for s in range(S)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy,
                "order": list(self.order),
                "placement": self.placement(),
                "certificates": {str(c.column): c.digest() for c in self.certificates},
            }
        )

    @classmethod
    def from_json(cls, text: str, params: MsrParams) -> "RetrievalPlan":
        """Load a plan and re-certify it; digests must match the recomputed ones."""
        obj = json.loads(text)
        L, S = 2 * params.alpha, params.S
        hits = np.zeros((L, S), dtype=np.int64)
        for ell, s, i in obj["placement"]:
            hits[ell - 1, s - 1] = i
        order = tuple(obj["order"])
        certs = layered.certify(msr_schedule(params, order), hits, params.points)
        digests = {str(c.column): c.digest() for c in certs}
        if digests != obj["certificates"]:
            raise PlanInfeasible("plan certificates do not match")
        return cls(obj["strategy"], order, hits, tuple(certs))


def _tail_hits(params: MsrParams, order) -> np.ndarray:
    a, n, S = params.alpha, params.n, params.S
    if S < 2 * a:
        raise PlanInfeasible(f"tail placement needs S >= 2*alpha, got S={S}, alpha={a}")
    hits = np.zeros((2 * a, S), dtype=np.int64)
    for ell in range(1, 2 * a + 1):
        for s in range(1, S + 1):
            pos = n - ((ell + s - 2) % S)
            hits[ell - 1, s - 1] = order[pos - 1]
    return hits


def _grouped_hits(params: MsrParams, order) -> np.ndarray:
    a, n, S = params.alpha, params.n, params.S
    hits = np.zeros((2 * a, S), dtype=np.int64)
    for g in range(1, a + 1):
        lo = n - g * S + 1
        if lo < 2 * a - 2 * g + 1:
            raise PlanInfeasible(f"grouped placement: block of queries {2 * g - 1},{2 * g} starts at {lo}")
        block = [order[p - 1] for p in range(lo, lo + S)]
        for s in range(S):
            hits[2 * g - 2, s] = block[s]
            hits[2 * g - 1, s] = block[(s + 1) % S]
    return hits


def _search_hits(params: MsrParams, order, points: EvalPoints, budget: int = SEARCH_BUDGET) -> np.ndarray:
    """Backtracking over cells, query by query, stripe by stripe."""
    a, S = params.alpha, params.S
    L = 2 * a
    codes = {j: ExponentCode.msr_layer(j, a, points) for j in range(1, a + 1)}
    responders = {j: order[2 * a - 2 * j :] for j in range(1, a + 1)}
    hits = np.zeros((L, S), dtype=np.int64)
    nodes = 0

    def ok_stripe(ell: int, s: int) -> bool:
        if ell % 2:
            return True
        j = ell // 2
        col = [int(hits[m, s]) for m in range(ell)]
        return is_info_set([i - 1 for i in col], codes[j])

    def ok_query(ell: int) -> bool:
        row = set(int(v) for v in hits[ell - 1])
        for j in range((ell + 1) // 2, a + 1):
            clean = [i for i in responders[j] if i not in row]
            if not is_info_set([i - 1 for i in clean], codes[j]):
                return False
        return True

    def place(ell: int, s: int) -> bool:
        nonlocal nodes
        if ell > L:
            return True
        if s == S:
            return ok_query(ell) and place(ell + 1, 0)
        g = (ell + 1) // 2
        used_row = set(int(v) for v in hits[ell - 1, :s])
        used_col = set(int(hits[m, s]) for m in range(ell - 1))
        for i in reversed(responders[g]):
            if i in used_row or i in used_col:
                continue
            nodes += 1
            if nodes > budget:
                raise PlanInfeasible("search budget exhausted")
            hits[ell - 1, s] = i
            if ok_stripe(ell, s) and place(ell, s + 1):
                return True
        hits[ell - 1, s] = 0
        return False

    if not place(1, 0):
        raise PlanInfeasible("no placement satisfies the certificates")
    return hits


def msr_plan(params: MsrParams, strategy: str = "auto", points: EvalPoints | None = None) -> RetrievalPlan:
    """Build and certify a retrieval plan.

    ``auto`` tries ``tail``, ``grouped`` and ``search`` in that order.  Each
    strategy is tried with the identity server order and with the order from
    :func:`compute_nested_info_sets`.
    """
    points = points or params.points
    strategies = STRATEGIES if strategy == "auto" else (strategy,)
    if any(s not in STRATEGIES for s in strategies):
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES + ('auto',)}")
    orders = [tuple(range(1, params.n + 1))]
    try:
        nested = compute_nested_info_sets(points, params.alpha).order
        if nested not in orders:
            orders.append(nested)
    except NoNestedSets:
        pass
    reasons = []
    for strat in strategies:
        for order in orders:
            try:
                if strat == "tail":
                    hits = _tail_hits(params, order)
                elif strat == "grouped":
                    hits = _grouped_hits(params, order)
                else:
                    hits = _search_hits(params, order, points)
                certs = layered.certify(msr_schedule(params, order), hits, points)
            except PlanInfeasible as exc:
                reasons.append(f"{strat}: {exc}")
                continue
            return RetrievalPlan(strat, order, hits, tuple(certs))
    raise PlanInfeasible("; ".join(reasons))


def msr_make_queries(
    params: MsrParams, plan: RetrievalPlan, files: int, f0: int, seed: int, sampler=layered.sample_masks
) -> QuerySet:
    return layered.make_queries(params.q, params.n, plan.hits, files, f0, seed, sampler)


def msr_respond(server: int, share: np.ndarray, query: np.ndarray, schedule: Schedule, params: MsrParams):
    pairs = schedule.pairs_for(server)
    vals = layered.respond(server, share, query, pairs, params.field)
    return {(ell, server, j): v for (ell, j), v in zip(pairs, vals)}


def msr_reconstruct(responses, queries: QuerySet, plan: RetrievalPlan, params: MsrParams):
    """Recover file ``f0``; re-certifies the plan before decoding."""
    schedule = plan.schedule(params)
    layered.certify(schedule, queries.hits, params.points)
    res = layered.peel(schedule, responses, queries.hits, params.points, 2 * params.alpha, params.alpha)
    return unpack_message(res.message, params), res.ledger


# ---------------------------------------------------------------------------
# rates


def rate_msr(n: int, alpha: int) -> Fraction:
    if not (alpha >= 1 and n > 2 * alpha):
        raise InvalidGeometry(f"need n > 2*alpha >= 2, got n={n}, alpha={alpha}")
    return Fraction(3 * (n - 2 * alpha), 3 * n - 2 * alpha + 2)


def rate_msr_alt(n: int, alpha: int) -> Fraction:
    rate_msr(n, alpha)
    return 1 - Fraction(4 * alpha + 2, 3 * n - 2 * alpha + 2)


def rate_dn_msr(n: int, d: int) -> Fraction:
    if not (0 < d < n):
        raise InvalidGeometry(f"need 0 < d < n, got d={d}, n={n}")
    return 1 - Fraction(d, n)
