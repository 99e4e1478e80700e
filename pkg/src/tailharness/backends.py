"""Execution targets: an in-process stub, a TCP echo server and client, and a
PostgreSQL simple-query client (see :mod:`tailharness.pgwire`).

Every connection's ``execute`` is a coroutine that completes only after the
whole response has been received, which is what makes the driver's loop
closed. Each worker owns exactly one connection.
"""

from __future__ import annotations

import logging
import math
import random
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from typing import NamedTuple, Protocol

from .errors import BackendError, ValidationError
from .model import ERROR, OK
from .runtime import clock, readable, reduce_timer_slack, sleep_until, sock_recv, sock_sendall
from .workload import Request, derive_seed

log = logging.getLogger(__name__)

ACK = b"\x06"
MAX_ECHO_PAYLOAD = 1 << 20


class Response(NamedTuple):
    status: str
    rows_returned: int = 0
    server_message: str | None = None


OK_RESPONSE = Response(OK)


class Connection(Protocol):
    supports_sql: bool
    supports_scan: bool

    async def execute(self, request: Request) -> Response: ...

    def close(self) -> None: ...


class Backend(Protocol):
    name: str

    def connect(self, worker_id: int, seed: int) -> Connection: ...


# --- stub -------------------------------------------------------------------

FIXED = "fixed"
LOGNORMAL = "lognormal"
BIMODAL = "bimodal"


@dataclass(frozen=True)
class ServiceModel:
    """Synthetic service time. ``mu``/``sigma`` parameterise ln(latency_ns)."""

    kind: str = FIXED
    d_ns: int = 100_000
    mu: float = 0.0
    sigma: float = 0.0
    d_fast_ns: int = 0
    d_slow_ns: int = 0
    p_slow: float = 0.0

    def __post_init__(self):
        if self.kind == FIXED:
            if self.d_ns <= 0:
                raise ValidationError(f"service time must be > 0, got {self.d_ns}")
        elif self.kind == LOGNORMAL:
            if self.sigma < 0 or not math.isfinite(self.mu):
                raise ValidationError("lognormal service model needs finite mu and sigma >= 0")
        elif self.kind == BIMODAL:
            if self.d_fast_ns <= 0 or self.d_slow_ns <= 0:
                raise ValidationError("bimodal service times must be > 0")
            if not 0 <= self.p_slow <= 1:
                raise ValidationError(f"p_slow must be in [0, 1], got {self.p_slow}")
        else:
            raise ValidationError(f"unknown service model {self.kind!r}")

    def draw(self, rng: random.Random) -> int:
        if self.kind == FIXED:
            return self.d_ns
        if self.kind == LOGNORMAL:
            return max(1, round(rng.lognormvariate(self.mu, self.sigma)))
        return self.d_slow_ns if rng.random() < self.p_slow else self.d_fast_ns

    def describe(self) -> str:
        if self.kind == FIXED:
            return f"fixed:{self.d_ns}ns"
        if self.kind == LOGNORMAL:
            return f"lognormal:{self.mu}:{self.sigma}"
        return f"bimodal:{self.d_fast_ns}ns:{self.d_slow_ns}ns:{self.p_slow}"


async def stub_execute(request: Request, model: ServiceModel, rng: random.Random) -> Response:
    """Hold the calling worker for one drawn service time, then succeed.

    The wait is served by the loop's hybrid timer (sleep, then spin for the
    last 200 us), accurate to about a microsecond on an idle host.
    """
    await sleep_until(clock() + model.draw(rng))
    return OK_RESPONSE


class StubConnection:
    supports_sql = True
    supports_scan = True

    def __init__(self, model: ServiceModel, rng: random.Random):
        self.model = model
        self.rng = rng
        self._fixed = model.d_ns if model.kind == FIXED else None

    async def execute(self, request: Request) -> Response:
        if self._fixed is not None:
            await sleep_until(clock() + self._fixed)
            return OK_RESPONSE
        return await stub_execute(request, self.model, self.rng)

    def close(self) -> None:
        pass


class StubBackend:
    name = "stub"

    def __init__(self, model: ServiceModel):
        self.model = model

    def connect(self, worker_id: int, seed: int) -> StubConnection:
        return StubConnection(self.model, random.Random(derive_seed(seed, "stub", worker_id)))


# --- echo -------------------------------------------------------------------


def parse_address(address: str | tuple) -> tuple[str, int]:
    if isinstance(address, tuple):
        return address[0], int(address[1])
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValidationError(f"address must be host:port, got {address!r}")
    return host.strip("[]"), int(port)


def encode_echo_message(payload: bytes) -> bytes:
    if len(payload) > MAX_ECHO_PAYLOAD:
        raise ValidationError(f"echo payload of {len(payload)} bytes exceeds 1 MiB")
    return len(payload).to_bytes(4, "big") + payload


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:])
        if k == 0:
            return None
        got += k
    return bytes(buf)


class _EchoHandler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        delay_s = self.server.reply_delay_ns / 1e9
        if delay_s:
            reduce_timer_slack()  # per thread
        self.server.active.add(sock)
        try:
            while True:
                header = _recv_exact(sock, 4)
                if header is None:
                    return
                size = int.from_bytes(header, "big")
                if size > MAX_ECHO_PAYLOAD:
                    log.warning("echo: %s sent oversized message (%d bytes), closing", self.client_address, size)
                    return
                if size and _recv_exact(sock, size) is None:
                    return
                if delay_s:
                    # A plain sleep: never shorter than the delay, and it
                    # leaves the CPU to the client on small machines.
                    time.sleep(delay_s)
                sock.sendall(ACK)
        except OSError as exc:
            log.info("echo: connection %s ended: %s", self.client_address, exc)
        finally:
            self.server.active.discard(sock)


class _EchoTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, reply_delay_ns: int):
        self.reply_delay_ns = reply_delay_ns
        self.active: set[socket.socket] = set()
        super().__init__(address, _EchoHandler)

    def drop_connections(self) -> None:
        for sock in list(self.active):
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class EchoServer:
    """Echo server running on a background thread of this process."""

    def __init__(self, address: str | tuple = ("127.0.0.1", 0), reply_delay_ns: int = 0):
        self._server = _EchoTCPServer(parse_address(address), reply_delay_ns)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "EchoServer":
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,),
                                        name="echo-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._server.drop_connections()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def echo_serve(address: str | tuple, reply_delay_ns: int = 0, ready=None) -> None:
    """Serve until interrupted. ``ready`` (optional) receives the bound address."""
    reduce_timer_slack()
    with _EchoTCPServer(parse_address(address), reply_delay_ns) as server:
        if ready is not None:
            ready(server.server_address[:2])
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


def _serve_in_child(address, reply_delay_ns, conn):
    def ready(addr):
        conn.send(addr)
        conn.close()

    echo_serve(address, reply_delay_ns, ready)


class EchoServerProcess:
    """Echo server in a separate process, so its work does not share the
    harness interpreter."""

    def __init__(self, address: str | tuple = ("127.0.0.1", 0), reply_delay_ns: int = 0):
        import multiprocessing as mp

        ctx = mp.get_context("fork") if hasattr(socket, "AF_UNIX") else mp.get_context()
        parent, child = ctx.Pipe(duplex=False)
        self._proc = ctx.Process(target=_serve_in_child, args=(parse_address(address), reply_delay_ns, child),
                                 name="echo-server", daemon=True)
        self._proc.start()
        child.close()
        if not parent.poll(10):
            self._proc.kill()
            raise BackendError("echo server process did not start")
        self.address = tuple(parent.recv())

    def stop(self) -> None:
        if self._proc.is_alive():
            self._proc.terminate()
        self._proc.join(5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


async def _echo_session(sock: socket.socket, reply_delay_ns: int) -> None:
    buf = bytearray()
    try:
        while True:
            chunk = await sock_recv(sock, 65536)
            if not chunk:
                return
            buf += chunk
            while len(buf) >= 4:
                size = int.from_bytes(buf[:4], "big")
                if size > MAX_ECHO_PAYLOAD:
                    log.warning("echo: oversized message (%d bytes), closing", size)
                    return
                if len(buf) < 4 + size:
                    break
                del buf[:4 + size]
                if reply_delay_ns:
                    await sleep_until(clock() + reply_delay_ns)
                await sock_sendall(sock, ACK)
    except OSError as exc:
        log.info("echo: connection ended: %s", exc)
    finally:
        sock.close()


class LoopEchoServer:
    """Echo server whose sessions are coroutines on the driver's own loop.

    Requests still cross loopback TCP, but no second process competes for
    the CPU, which removes most cross-process scheduling jitter on machines
    with one or two cores. The listener is bound at construction, so clients
    can connect before :meth:`attach` is called.
    """

    def __init__(self, address: str | tuple = ("127.0.0.1", 0), reply_delay_ns: int = 0):
        self.reply_delay_ns = reply_delay_ns
        self._listener = socket.create_server(parse_address(address), backlog=128)
        self._listener.setblocking(False)
        self.address = self._listener.getsockname()[:2]

    async def _accept(self, loop) -> None:
        while True:
            await readable(self._listener)
            try:
                sock, _ = self._listener.accept()
            except BlockingIOError:
                continue
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.setblocking(False)
            loop.spawn(_echo_session(sock, self.reply_delay_ns), "echo-session", daemon=True)

    def attach(self, loop) -> None:
        loop.spawn(self._accept(loop), "echo-accept", daemon=True)

    def close(self) -> None:
        self._listener.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class EchoConnection:
    supports_sql = True
    supports_scan = True

    def __init__(self, address: str | tuple, connect_timeout: float = 5.0):
        self.address = parse_address(address)
        self.connect_timeout = connect_timeout
        self.sock: socket.socket | None = None
        self._open()

    def _open(self) -> None:
        try:
            sock = socket.create_connection(self.address, timeout=self.connect_timeout)
        except OSError as exc:
            raise BackendError(f"cannot connect to echo server {self.address[0]}:{self.address[1]}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.setblocking(False)
        self.sock = sock

    def _drop(self) -> None:
        if self.sock is not None:
            self.sock.close()
            self.sock = None

    async def execute(self, request: Request) -> Response:
        return await echo_execute(self, request)

    def close(self) -> None:
        self._drop()


async def echo_execute(conn: EchoConnection, request: Request | bytes) -> Response:
    payload = request if isinstance(request, (bytes, bytearray)) else request.wire_bytes()
    msg = encode_echo_message(payload)
    if conn.sock is None:
        # Reconnect attempts block the loop briefly; this is the failure path.
        try:
            conn._open()
        except BackendError as exc:
            return Response(ERROR, 0, str(exc))
    sock = conn.sock
    try:
        await sock_sendall(sock, msg)
        await readable(sock)
        reply = sock.recv(1)
    except OSError as exc:
        conn._drop()
        return Response(ERROR, 0, f"echo connection failed: {exc}")
    if reply != ACK:
        conn._drop()
        return Response(ERROR, 0, "echo connection closed" if not reply else f"unexpected reply {reply!r}")
    return OK_RESPONSE


class EchoBackend:
    name = "echo"

    def __init__(self, address: str | tuple, server: LoopEchoServer | None = None):
        self.address = parse_address(address)
        self.server = server

    def attach(self, loop) -> None:
        """Hook called by the driver once its loop exists."""
        if self.server is not None:
            self.server.attach(loop)

    def connect(self, worker_id: int, seed: int) -> EchoConnection:
        return EchoConnection(self.address)
