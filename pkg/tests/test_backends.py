import math
import random
import socket
import statistics
import threading

import pytest

from tailharness.backends import (
    ACK,
    BIMODAL,
    FIXED,
    LOGNORMAL,
    EchoBackend,
    EchoConnection,
    EchoServer,
    EchoServerProcess,
    LoopEchoServer,
    ServiceModel,
    StubBackend,
    echo_execute,
    encode_echo_message,
    parse_address,
)
from tailharness.config import BenchmarkConfig
from tailharness.driver import run_benchmark
from tailharness.errors import BackendError, ValidationError
from tailharness.runtime import Loop, clock, run
from tailharness.workload import noop_request


async def timed(conn, req, n):
    out = []
    for _ in range(n):
        t0 = clock()
        resp = await conn.execute(req)
        out.append((clock() - t0, resp))
    return out


def test_stub_fixed_mean_within_ten_percent():
    conn = StubBackend(ServiceModel(FIXED, d_ns=100_000)).connect(0, 1)
    res = run(timed(conn, noop_request(), 3000))
    mean = statistics.fmean(t for t, _ in res)
    assert mean == pytest.approx(100_000, rel=0.10)
    assert all(r.status == "ok" and r.rows_returned == 0 for _, r in res)


def test_bimodal_without_slow_is_fixed_fast():
    m = ServiceModel(BIMODAL, d_fast_ns=7, d_slow_ns=1000, p_slow=0.0)
    rng = random.Random(0)
    assert {m.draw(rng) for _ in range(1000)} == {7}


def test_lognormal_median():
    m = ServiceModel(LOGNORMAL, mu=11.0, sigma=0.8)
    rng = random.Random(3)
    draws = [m.draw(rng) for _ in range(100_000)]
    assert statistics.median(draws) == pytest.approx(math.exp(11.0), rel=0.05)


def test_stub_draws_reproducible_given_seed():
    m = ServiceModel(BIMODAL, d_fast_ns=10, d_slow_ns=20, p_slow=0.3)
    a = StubBackend(m).connect(2, 9).rng
    b = StubBackend(m).connect(2, 9).rng
    assert [m.draw(a) for _ in range(500)] == [m.draw(b) for _ in range(500)]


@pytest.mark.parametrize("kwargs", [
    {"kind": FIXED, "d_ns": 0}, {"kind": LOGNORMAL, "sigma": -1}, {"kind": BIMODAL, "d_fast_ns": 1, "d_slow_ns": 0},
    {"kind": BIMODAL, "d_fast_ns": 1, "d_slow_ns": 1, "p_slow": 1.5}, {"kind": "gamma"},
])
def test_service_model_validation(kwargs):
    with pytest.raises(ValidationError):
        ServiceModel(**kwargs)


def test_echo_wire_format():
    assert encode_echo_message(b";") == b"\x00\x00\x00\x01;"
    assert ACK == b"\x06"
    with pytest.raises(ValidationError):
        encode_echo_message(b"x" * ((1 << 20) + 1))


def test_parse_address():
    assert parse_address("127.0.0.1:80") == ("127.0.0.1", 80)
    assert parse_address("[::1]:5") == ("::1", 5)
    with pytest.raises(ValidationError):
        parse_address("nope")


def test_echo_round_trip_is_sub_millisecond():
    with EchoServer() as srv:
        conn = EchoConnection(srv.address)
        res = run(timed(conn, noop_request(), 200))
        conn.close()
    assert all(r.status == "ok" for _, r in res)
    assert statistics.median(t for t, _ in res) < 1_000_000


def test_echo_reply_delay_is_a_lower_bound():
    with EchoServer(reply_delay_ns=5_000_000) as srv:
        conn = EchoConnection(srv.address)
        res = run(timed(conn, noop_request(), 5))
        conn.close()
    assert all(t >= 5_000_000 for t, _ in res)


def test_echo_raw_protocol():
    with EchoServer() as srv:
        with socket.create_connection(srv.address) as s:
            s.sendall(b"\x00\x00\x00\x03abc")
            assert s.recv(1) == b"\x06"


@pytest.mark.parametrize("size", [0, 1, 65536, 1 << 20])
def test_echo_payload_sizes(size):
    with EchoServer() as srv:
        conn = EchoConnection(srv.address)
        resp = run(echo_execute(conn, b"z" * size))
        conn.close()
    assert resp.status == "ok"


def test_server_survives_a_reset_connection():
    with EchoServer() as srv:
        rude = socket.create_connection(srv.address)
        rude.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER, b"\x01\x00\x00\x00\x00\x00\x00\x00")
        rude.sendall(b"\x00\x00")
        rude.close()
        conn = EchoConnection(srv.address)
        assert run(conn.execute(noop_request())).status == "ok"
        conn.close()


def test_connect_failure_is_backend_error():
    with EchoServer() as srv:
        addr = srv.address
    with pytest.raises(BackendError):
        EchoConnection(addr)


def test_server_stopped_mid_run_yields_error_samples():
    srv = EchoServer().start()
    cfg = BenchmarkConfig.model_validate({"workers": 2, "warmup": 0, "measure": "600ms",
                                          "backend": {"kind": "echo"}})
    stopper = threading.Timer(0.25, srv.stop)
    stopper.start()
    try:
        arts = run_benchmark(cfg, EchoBackend(srv.address))
    finally:
        stopper.join()
    statuses = [s.status for s in arts.trace]
    assert "ok" in statuses and "error" in statuses
    assert statuses.index("error") > 0
    assert arts.run_meta.degraded


def test_server_process_mode():
    with EchoServerProcess(reply_delay_ns=1_000_000) as srv:
        conn = EchoConnection(srv.address)
        res = run(timed(conn, noop_request(), 10))
        conn.close()
    assert all(r.status == "ok" and t >= 1_000_000 for t, r in res)


def test_in_loop_server():
    with LoopEchoServer(reply_delay_ns=200_000) as srv:
        backend = EchoBackend(srv.address, srv)
        conns = [backend.connect(i, 0) for i in range(3)]
        loop = Loop()
        backend.attach(loop)
        tasks = [loop.spawn(timed(c, noop_request(), 20)) for c in conns]
        loop.run()
        for c in conns:
            c.close()
    for t in tasks:
        assert all(r.status == "ok" and lat >= 200_000 for lat, r in t.result)
