"""PIR over product-matrix MBR codes.

The client sends ``k`` queries.  Columns ``k+1..d`` hold words of ``RS_k``,
so every server answers all ``k`` queries there.  For a column ``j <= k``
the rows ``j+1..d`` were already recovered as transposed entries of later
columns, so only servers ``k-j+1..n`` answer, and only the first ``j``
queries.  The download total is ``nk(d-k) + sum_{j<=k} j(n-k+j)`` for a file
of ``(n-k)B`` symbols.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from . import layered
from .errors import ConstraintViolated, InvalidGeometry
from .layered import ColumnStep, QuerySet, Schedule
from .pm_codes import MbrParams, unpack_message

PATTERNS = ("text", "example")


def mbr_schedule(params: MbrParams) -> Schedule:
    n, k, d = params.n, params.k, params.d
    steps = []
    for j in range(d, 0, -1):
        if j > k:
            steps.append(ColumnStep(j, tuple(range(1, n + 1)), k, tuple(range(1, k + 1))))
        else:
            mirrored = tuple((r, j, r) for r in range(j + 1, d + 1))
            steps.append(ColumnStep(j, tuple(range(k - j + 1, n + 1)), j, tuple(range(1, j + 1)), mirrored))
    return Schedule(tuple(steps))


def mbr_download_count(n: int, k: int, d: int) -> int:
    return n * k * (d - k) + sum(j * (n - k + j) for j in range(1, k + 1))


def mbr_pattern(params: MbrParams, variant: str = "text") -> np.ndarray:
    """Retrieval cells ``hits[l-1, s-1]`` = server id, all on servers ``k+1..n``.

    ``text``: server ``i`` with ``n - i = l + s - 2 (mod S)``.
    ``example``: stripe ``s = i - k + l - 1 (mod S)``, the same Latin square
    with the stripe rotation reversed.
    """
    n, k, S = params.n, params.k, params.S
    hits = np.zeros((k, S), dtype=np.int64)
    for ell in range(1, k + 1):
        for s in range(1, S + 1):
            if variant == "text":
                hits[ell - 1, s - 1] = n - ((ell + s - 2) % S)
            elif variant == "example":
                # i - k = s - l + 1 (mod S), i - k in [1, S]
                hits[ell - 1, s - 1] = k + 1 + ((s - ell) % S)
            else:
                raise ValueError(f"unknown pattern {variant!r}; choose from {PATTERNS}")
    return hits


def mbr_make_queries(
    params: MbrParams, files: int, f0: int, seed: int, pattern: str = "text", sampler=layered.sample_masks
) -> QuerySet:
    return layered.make_queries(params.q, params.n, mbr_pattern(params, pattern), files, f0, seed, sampler)


def mbr_respond(server: int, share: np.ndarray, query: np.ndarray, schedule: Schedule, params: MbrParams):
    """Partial response bundle ``{(l, i, j): R_l[i, j]}`` of one server."""
    pairs = schedule.pairs_for(server)
    vals = layered.respond(server, share, query, pairs, params.field)
    return {(ell, server, j): v for (ell, j), v in zip(pairs, vals)}


def mbr_reconstruct(responses, queries: QuerySet, params: MbrParams, certify: bool = True):
    """Recover file ``f0`` from the responses.

    Returns ``(file symbols, ledger)``; the ledger maps ``(l, r, j)`` to the
    recovered random scalar ``sum_{s,f} lambda_{l,s,f} M^f[r, j, s]``.
    """
    schedule = mbr_schedule(params)
    if certify:
        layered.certify(schedule, queries.hits, params.points)
    res = layered.peel(schedule, responses, queries.hits, params.points, params.d, params.d)
    return unpack_message(res.message, params), res.ledger


# ---------------------------------------------------------------------------
# rates


def _check(n: int, k: int, d: int) -> None:
    if not (1 <= k <= d < n):
        raise InvalidGeometry(f"need 1 <= k <= d < n, got (n, k, d) = ({n}, {k}, {d})")


def mbr_file_size(k: int, d: int) -> int:
    return k * (d - k) + k * (k + 1) // 2


def rate_mbr(n: int, k: int, d: int) -> Fraction:
    _check(n, k, d)
    return Fraction(3 * (n - k) * (2 * d - k + 1), 6 * d * n - 3 * n * k + 3 * n - k * k + 1)


def rate_mbr_alt(n: int, k: int, d: int) -> Fraction:
    """Same rate written through ``B``: ``(1 - k/n) / (1 - k(k+1)(k-1)/(6nB))``."""
    _check(n, k, d)
    B = mbr_file_size(k, d)
    return (1 - Fraction(k, n)) / (1 - Fraction(k * (k + 1) * (k - 1), 6 * n * B))


def rate_dn_mbr(n: int, k: int, d: int, p: int) -> Fraction:
    """Rate ``pB/(dn)`` of the multi-file scheme that needs ``n = pk + d``."""
    _check(n, k, d)
    if p < 1 or n != p * k + d:
        raise ConstraintViolated(f"n = {n} is not p*k + d for p = {p}")
    return Fraction(p * mbr_file_size(k, d), d * n)


def dn_multiplicity(n: int, k: int, d: int) -> int | None:
    """The ``p >= 1`` with ``n = pk + d``, if any."""
    if n - d >= k and (n - d) % k == 0:
        return (n - d) // k
    return None


def mbr_bounds(n: int, k: int, d: int) -> tuple[Fraction, Fraction, Fraction]:
    """``(1 - k/n, 1 - B/(nd), 1 - (B+d-1)/(nd))``."""
    _check(n, k, d)
    B = mbr_file_size(k, d)
    return 1 - Fraction(k, n), 1 - Fraction(B, n * d), 1 - Fraction(B + d - 1, n * d)
