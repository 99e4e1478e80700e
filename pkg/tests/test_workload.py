import random
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tailharness.errors import ValidationError
from tailharness.workload import (
    EMPTY_STATEMENT,
    TPCC_MIX,
    YCSB_MIX,
    OpMix,
    TpccConfig,
    TpccGenerator,
    YcsbConfig,
    YcsbGenerator,
    ZipfianState,
    assign_warehouses,
    check_request,
    next_tpcc_txn,
    noop_request,
    sample_op_type,
    zipfian_next,
)


def test_zipf_uniform_when_s_is_zero():
    z = ZipfianState(4, 0.0)
    assert [z.pmf(k) for k in range(1, 5)] == pytest.approx([0.25] * 4)


def test_zipf_pmf_s1_n3_matches_harmonic_normalisation():
    z = ZipfianState(3, 1.0)
    expected = [Fraction(6, 11), Fraction(3, 11), Fraction(2, 11)]
    assert [z.pmf(k) for k in (1, 2, 3)] == pytest.approx([float(x) for x in expected], rel=1e-12)


def test_zipf_rejects_empty_keyspace():
    with pytest.raises(ValidationError):
        ZipfianState(0)


@given(st.integers(1, 300), st.floats(0.01, 3.0))
def test_zipf_pmf_sums_to_one_and_is_non_increasing(n, s):
    z = ZipfianState(n, s)
    p = [z.pmf(k) for k in range(1, n + 1)]
    assert sum(p) == pytest.approx(1.0, rel=1e-9)
    assert all(a >= b for a, b in zip(p, p[1:]))


def test_zipf_draws_in_range_and_deterministic():
    a, b = ZipfianState(50, 0.99, seed=5), ZipfianState(50, 0.99, seed=5)
    xs = [zipfian_next(a) for _ in range(2000)]
    assert xs == [zipfian_next(b) for _ in range(2000)]
    assert min(xs) >= 1 and max(xs) <= 50


def test_zipf_rank_one_frequency():
    z = ZipfianState(1000, 0.99, seed=11)
    n = 200_000
    hits = sum(1 for _ in range(n) if zipfian_next(z) == 1)
    h = sum(k ** -0.99 for k in range(1, 1001))
    assert hits / n == pytest.approx(1 / h, rel=0.02)


def test_degenerate_mix_always_returns_its_label():
    rng = random.Random(1)
    mix = OpMix({"Read": 1.0})
    assert {sample_op_type(mix, rng) for _ in range(1000)} == {"Read"}


@pytest.mark.parametrize("weights", [
    {"Read": -0.1, "Scan": 1.1}, {"Read": 0.0}, {}, {"Read": 0.5}, {"Read": float("nan")},
])
def test_invalid_mixes(weights):
    with pytest.raises(ValidationError):
        OpMix(weights)


def test_ycsb_mix_frequencies():
    rng = random.Random(2)
    mix = OpMix(YCSB_MIX)
    n = 200_000
    counts = Counter(sample_op_type(mix, rng) for _ in range(n))
    for label, w in YCSB_MIX.items():
        assert abs(counts[label] / n - w) < 0.01


def test_ycsb_same_seed_same_stream():
    cfg = YcsbConfig(record_count=10, mix={"Read": 1.0})
    a, b = YcsbGenerator(cfg, seed=4), YcsbGenerator(cfg, seed=4)
    assert [a.next() for _ in range(200)] == [b.next() for _ in range(200)]


def test_ycsb_different_workers_get_different_streams():
    cfg = YcsbConfig(record_count=1000)
    a, b = YcsbGenerator(cfg, 4, worker_id=0), YcsbGenerator(cfg, 4, worker_id=1)
    assert [a.next().keys for _ in range(50)] != [b.next().keys for _ in range(50)]


def test_scan_length_range():
    g = YcsbGenerator(YcsbConfig(record_count=1000, mix={"Scan": 1.0}, max_scan_length=100), seed=1)
    lengths = [g.next().scan_length for _ in range(5000)]
    assert min(lengths) >= 1 and max(lengths) <= 100
    assert {1, 100} <= set(lengths)


def test_default_ycsb_mix_requests_satisfy_invariants():
    g = YcsbGenerator(YcsbConfig(record_count=5000), seed=8, worker_id=2, workers=3)
    inserts = []
    for _ in range(20_000):
        r = g.next()
        assert check_request(r, 5000) == []
        if r.txn_type == "Insert":
            inserts.append(r.keys[0])
    assert inserts == sorted(inserts) and len(set(inserts)) == len(inserts)
    assert all(k % 3 == (5000 + 2) % 3 for k in inserts)


def test_payload_shape_and_sql():
    g = YcsbGenerator(YcsbConfig(record_count=100, mix={"Update": 1.0}), seed=3)
    r = g.next()
    assert len(r.payload) == 10 and all(len(f) == 100 and f.isascii() for f in r.payload)
    assert r.sql_text.startswith("UPDATE usertable SET field1 = ")


def test_read_modify_write_is_one_request_on_one_key():
    g = YcsbGenerator(YcsbConfig(record_count=100, mix={"ReadModifyWrite": 1.0}), seed=3)
    r = g.next()
    key = r.keys[0]
    select, update = r.sql_text.split("; ", 1)
    assert select == f"SELECT * FROM usertable WHERE ycsb_key = {key}"
    assert update.startswith("UPDATE") and update.endswith(f"WHERE ycsb_key = {key}")


def test_check_request_catches_violations():
    from tailharness.workload import Request

    assert check_request(Request("Read", (5,), scan_length=3), 10)
    assert check_request(Request("Scan", (5,)), 10)
    assert check_request(Request("Read", (10,)), 10)
    assert check_request(Request("Insert", (3,)), 10)


def test_identity_binding_for_ten_by_ten():
    b = assign_warehouses(10, 10)
    assert [b.warehouse_of(i) for i in range(10)] == list(range(10))


def test_round_robin_binding():
    b = assign_warehouses(2, 4)
    assert [b.warehouse_of(i) for i in range(4)] == [0, 1, 0, 1]


def test_modulo_ownership_binding():
    b = assign_warehouses(4, 2)
    assert b[0] == (0, 2) and b[1] == (1, 3)


@pytest.mark.parametrize("wh,wk", [(0, 1), (1, 0)])
def test_binding_rejects_zero(wh, wk):
    with pytest.raises(ValidationError):
        assign_warehouses(wh, wk)


def test_unbound_worker_is_an_error():
    b = assign_warehouses(10, 10)
    g = TpccGenerator(TpccConfig(), b, 0)
    with pytest.raises(ValidationError):
        next_tpcc_txn(g, b, worker_id=99)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 1000))
def test_tpcc_requests_stay_on_owned_warehouses(warehouses, workers, seed):
    b = assign_warehouses(warehouses, workers)
    covered = set()
    for w in range(workers):
        g = TpccGenerator(TpccConfig(warehouses=warehouses), b, w, seed)
        for _ in range(30):
            r = g.next()
            assert r.warehouse_id in b[w]
            assert 1 <= r.keys[1] <= 10 and 1 <= r.keys[2] <= 3000
        covered |= set(b[w])
    assert covered == set(range(warehouses))


def test_tpcc_degenerate_mix():
    b = assign_warehouses(10, 10)
    g = TpccGenerator(TpccConfig(mix={"NewOrder": 1.0}), b, 3)
    assert {g.next().txn_type for _ in range(500)} == {"NewOrder"}


def test_tpcc_default_mix_neworder_fraction():
    b = assign_warehouses(10, 10)
    g = TpccGenerator(TpccConfig(), b, 0, seed=6)
    n = 100_000
    counts = Counter(g.next().txn_type for _ in range(n))
    assert abs(counts["NewOrder"] / n - TPCC_MIX["NewOrder"]) <= 0.01
    assert set(counts) == set(TPCC_MIX)


def test_noop_request():
    a, b = noop_request(), noop_request()
    assert a.txn_type == "NoOp" and a.sql_text == EMPTY_STATEMENT == ";"
    assert a == b
    assert a.wire_bytes() == b";"
