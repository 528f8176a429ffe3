import itertools
from math import comb

import numpy as np
import pytest

from pmpir.errors import (
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
from pmpir.pm_codes import (
    Family,
    check_message,
    cut_set_bound,
    encode,
    encode_files,
    helper_symbols,
    node_bytes,
    pack_message,
    parse_node,
    reconstruct_data,
    repair_node,
    repair_vector,
    smallest_prime,
    unpack_message,
    validate_params,
    write_store,
)

from conftest import random_files


def test_mbr_example_sizes(mbr634):
    assert (mbr634.B, mbr634.S, mbr634.alpha, mbr634.beta) == (9, 3, 4, 1)
    assert mbr634.file_size == 27
    assert mbr634.psi.tolist() == [[1, 1, 1, 1], [1, 2, 4, 1], [1, 3, 2, 6], [1, 4, 2, 1], [1, 5, 4, 6], [1, 6, 1, 6]]


def test_msr_example_sizes(msr634):
    assert (msr634.B, msr634.S, msr634.alpha, msr634.d) == (6, 2, 2, 4)
    assert msr634.points.x == (1, 2, 3, 4, 5, 6)
    assert msr634.psi[:, :2].tolist() == [[1, 1], [1, 2], [1, 3], [1, 4], [1, 5], [1, 6]]
    assert msr634.psi[:, 2].tolist() == [1, 4, 9, 3, 12, 10]


@pytest.mark.parametrize(
    "args, exc",
    [
        (("mbr", 6, 4, 3, 7), InvalidGeometry),
        (("mbr", 6, 3, 6, 7), InvalidGeometry),
        (("mbr", 5, 3, 4, 7), InvalidGeometry),
        (("msr", 6, 3, 5, 13), InvalidGeometry),
        (("msr", 5, 3, 4, 13), InvalidGeometry),
        (("mbr", 6, 3, 4, 5), FieldTooSmall),
        (("mbr", 6, 3, 4, 8), FieldTooSmall),
        (("msr", 6, 3, 4, 7), FieldTooSmall),
    ],
)
def test_validate_rejects(args, exc):
    with pytest.raises(exc):
        validate_params(*args)


def test_field_check_can_be_skipped():
    pr = validate_params("mbr", 6, 3, 4, 5, check_field=False)
    assert pr.q == 5


def test_smallest_prime():
    assert smallest_prime("mbr", 6, 3, 4) == 7
    assert smallest_prime("msr", 6, 3, 4) == 13


@pytest.mark.parametrize("n", range(4, 16))
def test_cut_set_equality_everywhere(n):
    for k in range(1, n):
        for d in range(k, n):
            for fam in Family:
                try:
                    pr = validate_params(fam, n, k, d, smallest_prime(fam, n, k, d))
                except InvalidGeometry:
                    continue
                assert pr.B == cut_set_bound(k, d, pr.alpha, pr.beta)
                # independent form of the bound
                assert pr.B == sum(min(pr.alpha, (d - i) * pr.beta) for i in range(k))


@pytest.mark.parametrize("fixture", ["mbr634", "msr634"])
def test_pack_roundtrip_and_invariants(fixture, request):
    pr = request.getfixturevalue(fixture)
    f = random_files(pr, 1, 7)[0]
    M = pack_message(f, pr)
    check_message(M, pr)
    assert np.array_equal(unpack_message(M, pr), f)
    bad = M.copy()
    bad[0, 1, 0] = (bad[0, 1, 0] + 1) % pr.q
    with pytest.raises(InvariantViolation):
        check_message(bad, pr)
    with pytest.raises(LengthMismatch):
        pack_message(f[:-1], pr)


def test_mbr_layout_matches_example(mbr634):
    # stripe symbols m1..m9 fill the upper triangle, then T
    f = np.zeros(27, dtype=np.int64)
    f[:9] = np.arange(1, 10) % 7
    M = pack_message(f, mbr634)[:, :, 0]
    m = [None] + list(np.arange(1, 10) % 7)
    assert M.tolist() == [
        [m[1], m[2], m[3], m[7]],
        [m[2], m[4], m[5], m[8]],
        [m[3], m[5], m[6], m[9]],
        [m[7], m[8], m[9], 0],
    ]


def test_mbr_lower_right_zero(mbr634):
    M = pack_message(random_files(mbr634, 1)[0], mbr634)
    M[3, 3, 0] = 1
    with pytest.raises(InvariantViolation):
        check_message(M, mbr634)


GEOMETRIES = [("mbr", 6, 3, 4, 7), ("msr", 6, 3, 4, 13), ("mbr", 8, 3, 5, 11), ("msr", 8, 3, 4, 17), ("msr", 9, 4, 6, 29)]


@pytest.mark.parametrize("geom", GEOMETRIES)
def test_reconstruct_every_k_subset(geom):
    pr = validate_params(*geom)
    files = random_files(pr, 2, 3)
    store = encode_files(files, pr)
    count = 0
    for subset in itertools.combinations(range(1, pr.n + 1), pr.k):
        for f in range(2):
            M = reconstruct_data({i: store.row(i)[f] for i in subset}, pr)
            assert np.array_equal(unpack_message(M, pr), files[f])
        count += 1
    assert count == comb(pr.n, pr.k)


@pytest.mark.parametrize("geom", GEOMETRIES)
def test_repair_every_helper_set(geom):
    pr = validate_params(*geom)
    store = encode_files(random_files(pr, 2, 4), pr)
    for failed in range(1, pr.n + 1):
        vec = repair_vector(pr, failed)
        others = [i for i in range(1, pr.n + 1) if i != failed]
        for helpers in itertools.combinations(others, pr.d):
            got = {h: helper_symbols(store.row(h), vec, pr.field) for h in helpers}
            assert sum(v.size for v in got.values()) == pr.d * 2 * pr.S
            assert np.array_equal(repair_node(failed, got, pr), store.row(failed))


def test_reconstruct_errors(mbr634):
    store = encode_files(random_files(mbr634, 1), mbr634)
    with pytest.raises(NotEnoughShares):
        reconstruct_data({1: store.row(1)[0], 2: store.row(2)[0]}, mbr634)
    with pytest.raises(BadSubset):
        reconstruct_data({1: store.row(1)[0], 2: store.row(2)[0], 9: store.row(3)[0]}, mbr634)


def test_repair_errors(mbr634):
    store = encode_files(random_files(mbr634, 1), mbr634)
    vec = repair_vector(mbr634, 1)
    h = {i: helper_symbols(store.row(i), vec, mbr634.field) for i in (1, 2, 3, 4)}
    with pytest.raises(HelperOverlap):
        repair_node(1, h, mbr634)
    del h[1]
    with pytest.raises(NotEnoughHelpers):
        repair_node(1, h, mbr634)


def test_encode_linear(msr634):
    a, b = random_files(msr634, 2, 9)
    Ma, Mb = pack_message(a, msr634), pack_message(b, msr634)
    lhs = encode(np.mod(Ma + 3 * Mb, 13), msr634).shares
    rhs = np.mod(encode(Ma, msr634).shares + 3 * encode(Mb, msr634).shares, 13)
    assert np.array_equal(lhs, rhs)


def test_zero_files(mbr634):
    store = encode_files([], mbr634)
    assert store.files == 0
    header, share = parse_node(node_bytes(store, 1))
    assert header.files == 0 and share.shape == (0, 4, 3)


def test_node_file_roundtrip_and_layout(tmp_path, mbr634):
    store = encode_files(random_files(mbr634, 2), mbr634)
    paths = write_store(store, tmp_path)
    assert [p.name for p in paths] == [f"node_{i}.bin" for i in range(1, 7)]
    data = paths[1].read_bytes()
    assert data[:4] == b"PMPR"
    assert int.from_bytes(data[4:6], "little") == 1 and data[6] == 0
    assert [int.from_bytes(data[7 + 8 * t : 15 + 8 * t], "little") for t in range(6)] == [7, 6, 3, 4, 2, 3]
    body = np.frombuffer(data[55:], dtype="<u8")
    # (file, stripe, column) order
    assert body[1] == store.row(2)[0, 1, 0] and body[4] == store.row(2)[0, 0, 1]
    header, share = parse_node(data)
    assert header.family is Family.MBR and np.array_equal(share, store.row(2))
    # writing twice is byte-identical
    assert node_bytes(store, 2) == data


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:10],
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:4] + (9).to_bytes(2, "little") + b[6:],
        lambda b: b[:-8],
        lambda b: b[:-8] + (100).to_bytes(8, "little"),
        lambda b: b[:6] + bytes([7]) + b[7:],
    ],
)
def test_corrupt_node(mutate, mbr634):
    data = node_bytes(encode_files(random_files(mbr634, 1), mbr634), 1)
    with pytest.raises(CorruptStore):
        parse_node(mutate(data))
