"""Command-line interface: ``pmpir <subcommand>``.

Rate-table CSV columns (fractions are exact ``a/b`` strings, empty when not
applicable)::

    x                 d for MBR, alpha for MSR
    scheme_rate_frac  rate of the retrieval scheme
    scheme_rate       the same as a decimal
    dn_rate           multi-file baseline pB/(dn) (MBR, only when n = pk + d) or 1 - d/n (MSR)
    lower             1 - k/n (MBR) or 1 - d/n (MSR)
    upper             1 - B/(nd) (MBR) or 1 - k/n (MSR)
    collusion_ref     1 - (B + d - 1)/(nd) (MBR only)
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import layered, pir_mbr, pir_msr, storage_sim
from .errors import FieldTooSmall, PmPirError
from .pm_codes import (
    Family,
    encode_files,
    parse_node,
    reconstruct_data,
    smallest_prime,
    unpack_message,
    validate_params,
    write_store,
)

CSV_HEADER = ["x", "scheme_rate_frac", "scheme_rate", "dn_rate", "lower", "upper", "collusion_ref"]


def _frac(v: Fraction | None) -> str:
    return "" if v is None else f"{v.numerator}/{v.denominator}"


def _params(args, check_field: bool = True):
    family = Family(args.family)
    k = args.k
    d = args.d
    if d is None and family is Family.MSR and k is not None:
        d = 2 * k - 2
    if args.n is None or k is None or d is None:
        raise SystemExit("error: --n, --k and --d are required")
    q = args.q
    if q is None:
        q = smallest_prime(family, args.n, k, d)
    try:
        return validate_params(family, args.n, k, d, q, check_field=check_field)
    except FieldTooSmall as exc:
        try:
            hint = f"; try --q {smallest_prime(family, args.n, k, d)}"
        except PmPirError:
            hint = ""
        raise PmPirError(f"{exc}{hint}") from exc


def _read_symbols(path: str, q: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise PmPirError(f"{path}: {len(raw)} bytes is not a whole number of u64 symbols")
    sym = np.frombuffer(raw, dtype="<u8")
    if (sym >= q).any():
        raise PmPirError(f"{path}: symbol out of range for F_{q}")
    return sym.astype(np.int64)


def _load(args):
    params = _params(args) if args.n is not None else None
    return storage_sim.cluster_load(args.store, params, workers=args.workers)


# ---------------------------------------------------------------------------


def cmd_params(args) -> int:
    pr = _params(args)
    print(f"B={pr.B} S={pr.S} alpha={pr.alpha}")
    print(f"family={pr.family.value} n={pr.n} k={pr.k} d={pr.d} q={pr.q} beta={pr.beta} file_size={pr.file_size}")
    return 0


def cmd_encode(args) -> int:
    pr = _params(args)
    sym = _read_symbols(args.input, pr.q)
    if sym.size % pr.file_size:
        raise PmPirError(f"input holds {sym.size} symbols, not a multiple of S*B = {pr.file_size}")
    files = list(sym.reshape(-1, pr.file_size))
    store = encode_files(files, pr)
    if args.out is None:
        raise SystemExit("error: encode needs --out DIR")
    write_store(store, args.out)
    print(f"wrote {pr.n} node files with {len(files)} file(s) to {args.out}")
    return 0


def cmd_retrieve(args) -> int:
    cluster = _load(args)
    pr = cluster.params
    if pr.family is Family.MSR and args.plan:
        plan = pir_msr.RetrievalPlan.from_json(Path(args.plan).read_text(), pr)
    else:
        plan = args.strategy
    file, transcript = storage_sim.run_retrieval(cluster, args.f0, args.seed, pattern=args.pattern, plan=plan)
    # cross-check against plain data-collector reconstruction from k nodes
    shares = {i: cluster.servers[i].share[args.f0 - 1] for i in range(1, pr.k + 1)}
    expected = unpack_message(reconstruct_data(shares, pr), pr)
    if not np.array_equal(file, expected):
        print("error: retrieved file differs from direct reconstruction", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_bytes(file.astype("<u8").tobytes())
    if args.transcript:
        Path(args.transcript).write_text(transcript.to_json())
    r = transcript.rate
    print(f"rate={_frac(r)} ({float(r):.6g}) downloaded={transcript.total_downloaded} file_size={transcript.file_size}")
    return 0


def cmd_repair(args) -> int:
    cluster = _load(args)
    pr = cluster.params
    if args.helpers:
        helpers = [int(v) for v in args.helpers.split(",")]
    else:
        helpers = [i for i in range(1, pr.n + 1) if i != args.failed][: pr.d]
    node = storage_sim.run_repair(cluster, args.failed, helpers)
    _, stored = parse_node((Path(args.store) / f"node_{args.failed}.bin").read_bytes())
    ok = np.array_equal(node.share, stored)
    print(
        f"node {args.failed} from helpers {helpers}: downloaded {node.symbols_in} symbols, "
        f"{'bit-exact' if ok else 'MISMATCH'}"
    )
    return 0 if ok else 1


def _leaky_factory(hits):
    def factory(pr, F, f0, seed):
        qs = layered.make_queries(pr.q, pr.n, hits, F, f0, seed)
        masks = qs.masks.copy()
        masks[0, 0, 0] = (masks[0, 0, 0] + f0) % pr.q
        return layered.QuerySet(pr.q, pr.n, F, f0, masks, qs.hits, seed)

    return factory


def cmd_audit(args) -> int:
    pr = _params(args, check_field=False)
    hits = storage_sim.public_hits(pr)
    factory = _leaky_factory(hits) if args.leak else None
    rep = storage_sim.audit_privacy(pr, args.files, args.trials, args.seed, query_factory=factory, hits=hits)
    print(json.dumps(rep.to_dict(), indent=2))
    frac = rep.fraction_above
    ok = rep.structural_ok and (frac is None or frac >= 0.99)
    return 0 if ok else 1


def rate_rows(family: Family, n: int, k: int | None, xs, linked: bool = False) -> list[dict]:
    """Rows of a rate table; each carries ``ok`` from its inequality self-check."""
    rows = []
    for x in xs:
        if family is Family.MBR:
            d = x
            kk = d // 2 + 1 if linked else k
            scheme = pir_mbr.rate_mbr(n, kk, d)
            p = pir_mbr.dn_multiplicity(n, kk, d)
            dn = pir_mbr.rate_dn_mbr(n, kk, d, p) if p else None
            lower, upper, collusion = pir_mbr.mbr_bounds(n, kk, d)
            ok = lower <= scheme <= upper and (dn is None or dn < lower)
        else:
            alpha = x
            scheme = pir_msr.rate_msr(n, alpha)
            dn = pir_msr.rate_dn_msr(n, 2 * alpha)
            lower, upper, collusion = dn, 1 - Fraction(alpha + 1, n), None
            ok = lower <= scheme <= upper
        rows.append(
            {
                "x": x,
                "scheme_rate_frac": _frac(scheme),
                "scheme_rate": f"{float(scheme):.10f}",
                "dn_rate": _frac(dn),
                "lower": _frac(lower),
                "upper": _frac(upper),
                "collusion_ref": _frac(collusion),
                "ok": ok,
            }
        )
    return rows


def cmd_rate_table(args) -> int:
    family = Family(args.family)
    n = args.n
    if n is None:
        raise SystemExit("error: --n is required")
    if family is Family.MBR:
        if args.linked:
            xs = range(args.x_min or 2, (args.x_max or n - 1) + 1)
            xs = [d for d in xs if d % 2 == 0 and n >= 2 * (d // 2 + 1)]
        else:
            if args.k is None:
                raise SystemExit("error: --k is required unless --linked")
            xs = range(args.x_min or args.k + 1, (args.x_max or n - 1) + 1)
    else:
        xs = range(args.x_min or 1, (args.x_max or (n - 1) // 2) + 1)
    rows = rate_rows(family, n, args.k, xs, args.linked)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    bad = [r["x"] for r in rows if not r["ok"]]
    if bad:
        print(f"error: self-check failed for x = {bad}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    pr = _params(args)
    rng = np.random.default_rng(args.seed)
    files = [rng.integers(0, pr.q, pr.file_size) for _ in range(args.files)]
    t0 = time.perf_counter()
    store = encode_files(files, pr)
    t_enc = time.perf_counter() - t0
    cluster = storage_sim.Cluster.from_store(store, workers=args.workers)
    times = []
    for rep in range(args.reps):
        f0 = rep % args.files + 1
        t0 = time.perf_counter()
        file, tr = storage_sim.run_retrieval(cluster, f0, args.seed + rep)
        times.append(time.perf_counter() - t0)
        if not np.array_equal(file, files[f0 - 1]):
            print("error: retrieval mismatch", file=sys.stderr)
            return 1
    t0 = time.perf_counter()
    helpers = list(range(2, pr.d + 2))
    storage_sim.run_repair(cluster, 1, helpers)
    t_rep = time.perf_counter() - t0
    print("family,n,k,d,q,files,encode_s,retrieve_mean_s,repair_s,rate")
    print(
        f"{pr.family.value},{pr.n},{pr.k},{pr.d},{pr.q},{args.files},{t_enc:.6f},"
        f"{np.mean(times):.6f},{t_rep:.6f},{_frac(tr.rate)}"
    )
    return 0


def _common(suppress: bool) -> argparse.ArgumentParser:
    # global flags work before or after the subcommand; the subcommand copy
    # suppresses defaults so it does not clobber values given earlier
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    common.add_argument("--family", choices=[f.value for f in Family], **({} if suppress else {"default": "mbr"}))
    common.add_argument("--n", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--d", type=int)
    common.add_argument("--q", type=int, help="prime field size (default: smallest admissible)")
    common.add_argument("--seed", type=int, **({} if suppress else {"default": 0}))
    common.add_argument("--out")
    common.add_argument("--workers", type=int, help="server threads", **({} if suppress else {"default": 1}))
    return common


def build_parser() -> argparse.ArgumentParser:

    ap = argparse.ArgumentParser(
        prog="pmpir",
        description="Private retrieval from product-matrix regenerating-code storage.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
        parents=[_common(False)],
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, parents=[_common(True)])
        p.set_defaults(fn=fn)
        return p

    add("params", cmd_params, "validate a geometry and print its sizes")
    p = add("encode", cmd_encode, "encode raw u64 symbols into node files")
    p.add_argument("--input", required=True)
    p = add("retrieve", cmd_retrieve, "privately retrieve one file from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--f0", type=int, required=True)
    p.add_argument("--transcript")
    p.add_argument("--pattern", choices=pir_mbr.PATTERNS, default="text")
    p.add_argument("--strategy", choices=pir_msr.STRATEGIES + ("auto",), default="auto")
    p.add_argument("--plan", help="MSR retrieval plan JSON")
    p = add("repair", cmd_repair, "rebuild one node from d helpers and compare")
    p.add_argument("--store", required=True)
    p.add_argument("--failed", type=int, required=True)
    p.add_argument("--helpers", help="comma-separated helper ids (default: first d others)")
    p = add("audit-privacy", cmd_audit, "statistical and structural query privacy audit")
    p.add_argument("--files", type=int, default=2)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--leak", action="store_true", help="plant an f0 leak (negative control)")
    p = add("rate-table", cmd_rate_table, "CSV of rates and reference bounds")
    p.add_argument("--linked", action="store_true", help="MBR with d = 2(k-1), x = even d")
    p.add_argument("--x-min", type=int)
    p.add_argument("--x-max", type=int)
    p = add("bench", cmd_bench, "time encode, retrieval and repair")
    p.add_argument("--files", type=int, default=4)
    p.add_argument("--reps", type=int, default=5)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for key, default in (("store", None), ("plan", None), ("pattern", "text"), ("strategy", "auto")):
        if not hasattr(args, key):
            setattr(args, key, default)
    try:
        return args.fn(args)
    except PmPirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
