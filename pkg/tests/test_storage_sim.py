import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmpir import layered
from pmpir.errors import (
    BadFileIndex,
    CorruptStore,
    HeaderMismatch,
    HelperOverlap,
    MalformedFrame,
    NotEnoughHelpers,
)
from pmpir.pir_mbr import mbr_make_queries, mbr_schedule, rate_mbr
from pmpir.pir_msr import rate_msr
from pmpir.pm_codes import encode_files, validate_params, write_store
from pmpir.storage_sim import (
    Cluster,
    Kind,
    ServerInstance,
    WireMessage,
    audit_privacy,
    cluster_load,
    codec_roundtrip,
    params_hash,
    public_hits,
    query_frames,
    run_repair,
    run_retrieval,
)

from conftest import random_files


@pytest.mark.parametrize("kind", list(Kind))
def test_codec_roundtrip(kind):
    msg = WireMessage(kind, b"\x01" * 8, (0, 1, 2**64 - 1, 12345))
    assert codec_roundtrip(msg) == msg
    frame = msg.encode()
    assert int.from_bytes(frame[:4], "little") == len(frame) - 4
    assert frame[4] == int(kind)


def test_empty_payload_roundtrip():
    msg = WireMessage(Kind.RESPONSE, b"\x00" * 8, ())
    assert codec_roundtrip(msg) == msg


@pytest.mark.parametrize("cut", [0, 3, 12, 20])
def test_truncated_frame(cut):
    frame = WireMessage(Kind.QUERY, b"\x02" * 8, (1, 2)).encode()
    with pytest.raises(MalformedFrame):
        WireMessage.decode(frame[:cut])


def test_bad_kind():
    frame = bytearray(WireMessage(Kind.QUERY, b"\x02" * 8, (1,)).encode())
    frame[4] = 99
    with pytest.raises(MalformedFrame):
        WireMessage.decode(bytes(frame))


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=64))
def test_fuzz_decode_never_panics(data):
    try:
        WireMessage.decode(data)
    except MalformedFrame:
        pass


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=64))
def test_fuzz_server_never_panics(data):
    pr = validate_params("mbr", 6, 3, 4, 7)
    srv = ServerInstance(1, np.zeros((1, 4, 3), dtype=np.int64), pr)
    frame = len(data).to_bytes(4, "little") + data
    try:
        srv.handle(frame)
    except (MalformedFrame, HeaderMismatch):
        pass


def test_server_rejects_foreign_params(mbr634, msr634):
    srv = ServerInstance(1, np.zeros((1, 4, 3), dtype=np.int64), mbr634)
    with pytest.raises(HeaderMismatch):
        srv.handle(WireMessage(Kind.REPAIR_REQ, params_hash(msr634), (1, 1, 1, 1)).encode())
    with pytest.raises(MalformedFrame):
        srv.handle(WireMessage(Kind.RESPONSE, params_hash(mbr634), ()).encode())


def test_share_is_read_only(mbr634, store_factory):
    _, store = store_factory(mbr634)
    srv = Cluster.from_store(store).servers[1]
    with pytest.raises(ValueError):
        srv.share[0, 0, 0] = 1


@pytest.mark.parametrize("workers", [1, 4])
def test_retrieval_example(mbr634, store_factory, workers):
    files, store = store_factory(mbr634, 3)
    cluster = Cluster.from_store(store, workers=workers)
    for f0 in (1, 2, 3):
        got, tr = run_retrieval(cluster, f0, seed=f0)
        assert np.array_equal(got, files[f0 - 1])
        assert tr.total_downloaded == 50 and str(tr.rate) == "27/50"
        assert tr.per_server == {1: 6, 2: 8, 3: 9, 4: 9, 5: 9, 6: 9}
    assert cluster.servers[1].symbols_out == 3 * 6


def test_transcript_json(msr634, store_factory):
    import json

    _, store = store_factory(msr634, 2)
    _, tr = run_retrieval(Cluster.from_store(store), 1, seed=3)
    obj = json.loads(tr.to_json())
    assert obj["rate"] == "3/8" and obj["rate_decimal"] == 0.375
    assert obj["total_downloaded"] == 32 and obj["file_size"] == 12
    assert obj["per_server"]["1"] == 4


def test_deterministic_across_workers(msr634, store_factory):
    _, store = store_factory(msr634, 2)
    a = run_retrieval(Cluster.from_store(store, workers=1), 2, seed=7)
    b = run_retrieval(Cluster.from_store(store, workers=6), 2, seed=7)
    assert np.array_equal(a[0], b[0]) and a[1].per_server == b[1].per_server


def test_zero_file_database(mbr634):
    cluster = Cluster.from_store(encode_files([], mbr634))
    with pytest.raises(BadFileIndex):
        run_retrieval(cluster, 1, seed=0)
    assert all(s.symbols_in == 0 for s in cluster.servers.values())


def test_bad_f0(mbr634, store_factory):
    _, store = store_factory(mbr634, 2)
    with pytest.raises(BadFileIndex):
        run_retrieval(Cluster.from_store(store), 3, seed=0)


def test_query_frames_differ_only_in_pattern(mbr634, store_factory):
    _, store = store_factory(mbr634, 3)
    cluster = Cluster.from_store(store)
    sched = mbr_schedule(mbr634)
    frames = {}
    for f0 in (1, 3):
        qs = mbr_make_queries(mbr634, 3, f0, seed=42)
        frames[f0] = query_frames(cluster, qs, sched)
    for i in range(1, 7):
        a, b = frames[1][i], frames[3][i]
        assert len(a) == len(b)
        diff = np.nonzero(np.frombuffer(a, np.uint8) != np.frombuffer(b, np.uint8))[0]
        if i <= mbr634.k:
            assert diff.size == 0
        else:
            head = 4 + 1 + 8 + 8 * (1 + 2 * len(sched.pairs_for(i)))
            assert diff.size and diff.min() >= head


def test_counters_match_closed_form():
    for geom in [("mbr", 8, 3, 5, 11), ("mbr", 10, 4, 8, 11), ("msr", 9, 3, 4, 19), ("msr", 12, 4, 6, 37)]:
        pr = validate_params(*geom)
        files = random_files(pr, 2)
        cluster = Cluster.from_store(encode_files(files, pr))
        got, tr = run_retrieval(cluster, 2, seed=1)
        assert np.array_equal(got, files[1])
        expected = rate_mbr(pr.n, pr.k, pr.d) if pr.family.value == "mbr" else rate_msr(pr.n, pr.alpha)
        assert tr.rate == expected
        assert sum(s.symbols_out for s in cluster.servers.values()) == tr.total_downloaded


@pytest.mark.parametrize("geom", [("mbr", 6, 3, 4, 7), ("msr", 6, 3, 4, 13), ("mbr", 8, 4, 6, 11), ("msr", 8, 3, 4, 17)])
def test_repair_every_failure_and_helper_set(geom):
    pr = validate_params(*geom)
    store = encode_files(random_files(pr, 2), pr)
    cluster = Cluster.from_store(store)
    for failed in range(1, pr.n + 1):
        others = [i for i in range(1, pr.n + 1) if i != failed]
        for helpers in itertools.combinations(others, pr.d):
            node = run_repair(cluster, failed, helpers)
            assert np.array_equal(node.share, store.row(failed))
            assert node.symbols_in == pr.d * 2 * pr.S


def test_repair_argument_errors(mbr634, store_factory):
    _, store = store_factory(mbr634)
    cluster = Cluster.from_store(store)
    with pytest.raises(HelperOverlap):
        run_repair(cluster, 1, [1, 2, 3, 4])
    with pytest.raises(NotEnoughHelpers):
        run_repair(cluster, 1, [2, 3, 4])
    with pytest.raises(NotEnoughHelpers):
        run_repair(cluster, 1, [2, 3, 4, 5, 6])


def test_cluster_load(tmp_path, mbr634, msr634, store_factory):
    files, store = store_factory(mbr634, 2)
    write_store(store, tmp_path / "a")
    cluster = cluster_load(tmp_path / "a", mbr634)
    assert cluster.files == 2
    got, _ = run_retrieval(cluster, 2, seed=0)
    assert np.array_equal(got, files[1])
    with pytest.raises(HeaderMismatch):
        cluster_load(tmp_path / "a", msr634)
    # a node from another store
    _, other = store_factory(mbr634, 3)
    write_store(other, tmp_path / "b")
    original = (tmp_path / "a" / "node_4.bin").read_bytes()
    (tmp_path / "a" / "node_4.bin").write_bytes((tmp_path / "b" / "node_4.bin").read_bytes())
    with pytest.raises(HeaderMismatch):
        cluster_load(tmp_path / "a")
    (tmp_path / "a" / "node_4.bin").write_bytes(original)
    (tmp_path / "a" / "node_5.bin").unlink()
    with pytest.raises(CorruptStore):
        cluster_load(tmp_path / "a")
    with pytest.raises(CorruptStore):
        cluster_load(tmp_path / "missing")


def leaky(hits):
    def factory(pr, F, f0, seed):
        qs = layered.make_queries(pr.q, pr.n, hits, F, f0, seed)
        masks = qs.masks.copy()
        masks[-1, -1, -1] = (masks[-1, -1, -1] + f0) % pr.q
        return layered.QuerySet(pr.q, pr.n, F, f0, masks, qs.hits, seed)

    return factory


def test_audit_small():
    pr = validate_params("mbr", 6, 3, 4, 5, check_field=False)
    rep = audit_privacy(pr, 2, 3000, seed=4)
    assert rep.structural_ok and rep.fraction_above >= 0.99
    bad = audit_privacy(pr, 2, 200, seed=4, query_factory=leaky(public_hits(pr)))
    assert not bad.structural_ok


def test_audit_msr_structural_only():
    pr = validate_params("msr", 6, 3, 4, 13)
    rep = audit_privacy(pr, 3, 300, seed=1, max_chi2_field=0)
    assert rep.structural_ok and rep.pvalues is None and rep.fraction_above is None
