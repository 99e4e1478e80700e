"""Minimal PostgreSQL frontend: startup handshake and the simple-query flow.

Only trust and cleartext-password authentication are supported, and no TLS.
The startup exchange is blocking; queries run on the driver's loop.
"""

from __future__ import annotations

import logging
import socket
import struct

from .backends import Response
from .errors import BackendError
from .model import ERROR, OK
from .runtime import readable, sock_sendall
from .workload import Request

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 196608  # 3.0
ISOLATION_SQL = {
    "serializable": "SET SESSION CHARACTERISTICS AS TRANSACTION ISOLATION LEVEL SERIALIZABLE",
    "repeatable read": "SET SESSION CHARACTERISTICS AS TRANSACTION ISOLATION LEVEL REPEATABLE READ",
    "read committed": "SET SESSION CHARACTERISTICS AS TRANSACTION ISOLATION LEVEL READ COMMITTED",
}

_AUTH_OK = 0
_AUTH_CLEARTEXT = 3


def startup_message(user: str, database: str) -> bytes:
    body = struct.pack("!i", PROTOCOL_VERSION)
    for key, value in (("user", user), ("database", database)):
        body += key.encode() + b"\0" + value.encode() + b"\0"
    body += b"\0"
    return struct.pack("!i", len(body) + 4) + body


def query_message(sql: str) -> bytes:
    payload = sql.encode("utf-8") + b"\0"
    return b"Q" + struct.pack("!i", len(payload) + 4) + payload


def password_message(password: str) -> bytes:
    payload = password.encode("utf-8") + b"\0"
    return b"p" + struct.pack("!i", len(payload) + 4) + payload


def error_fields(body: bytes) -> dict[str, str]:
    """Fields of an ErrorResponse/NoticeResponse body, keyed by type code."""
    out = {}
    for part in body.split(b"\0"):
        if part:
            out[chr(part[0])] = part[1:].decode("utf-8", "replace")
    return out


def format_error(fields: dict[str, str]) -> str:
    sev = fields.get("S", "ERROR")
    code = fields.get("C")
    msg = fields.get("M", "unknown error")
    return f"{sev}: {msg}" + (f" ({code})" if code else "")


class _Buffer:
    """Accumulates socket bytes and splits them into (type, body) messages."""

    def __init__(self):
        self.data = bytearray()

    def pop(self):
        if len(self.data) < 5:
            return None
        length = struct.unpack_from("!i", self.data, 1)[0]
        if length < 4:
            raise BackendError(f"protocol violation: message length {length}")
        end = 1 + length
        if len(self.data) < end:
            return None
        kind = chr(self.data[0])
        body = bytes(self.data[5:end])
        del self.data[:end]
        return kind, body


class PgConnection:
    supports_sql = True
    supports_scan = True

    def __init__(self, host: str = "127.0.0.1", port: int = 5432, user: str = "postgres",
                 database: str = "postgres", password: str | None = None,
                 isolation: str | None = "serializable", connect_timeout: float = 5.0):
        try:
            sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise BackendError(f"cannot connect to {host}:{port}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self.buf = _Buffer()
        self.parameters: dict[str, str] = {}
        self.backend_key: tuple[int, int] | None = None
        try:
            self._startup(user, database, password)
            if isolation:
                self._set_isolation(isolation)
        except (OSError, BackendError) as exc:
            sock.close()
            if isinstance(exc, BackendError):
                raise
            raise BackendError(f"startup with {host}:{port} failed: {exc}") from exc
        sock.setblocking(False)

    # Blocking helpers used during startup only.
    def _read_message_blocking(self):
        while (msg := self.buf.pop()) is None:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise BackendError("server closed the connection during startup")
            self.buf.data += chunk
        return msg

    def _startup(self, user, database, password) -> None:
        self.sock.sendall(startup_message(user, database))
        while True:
            kind, body = self._read_message_blocking()
            if kind == "R":
                code = struct.unpack_from("!i", body)[0]
                if code == _AUTH_OK:
                    continue
                if code == _AUTH_CLEARTEXT:
                    if password is None:
                        raise BackendError("server requested a password but none is configured")
                    self.sock.sendall(password_message(password))
                    continue
                raise BackendError(f"unsupported authentication method (code {code})")
            if kind == "S":
                name, value, _ = body.split(b"\0", 2)
                self.parameters[name.decode()] = value.decode()
            elif kind == "K":
                self.backend_key = struct.unpack("!ii", body[:8])
            elif kind == "E":
                raise BackendError(f"startup rejected: {format_error(error_fields(body))}")
            elif kind == "Z":
                return
            elif kind != "N":
                raise BackendError(f"protocol violation during startup: message {kind!r}")

    def _set_isolation(self, isolation: str) -> None:
        sql = ISOLATION_SQL.get(isolation.lower())
        if sql is None:
            raise BackendError(f"unknown isolation level {isolation!r}")
        self.sock.sendall(query_message(sql))
        failure = None
        while True:
            kind, body = self._read_message_blocking()
            if kind == "E":
                failure = format_error(error_fields(body))
            elif kind == "Z":
                break
        if failure:
            log.warning("isolation setting not applied: %s", failure)

    async def _read_message(self):
        while (msg := self.buf.pop()) is None:
            await readable(self.sock)
            try:
                chunk = self.sock.recv(65536)
            except BlockingIOError:
                continue
            if not chunk:
                raise BackendError("server closed the connection")
            self.buf.data += chunk
        return msg

    async def execute(self, request: Request | str) -> Response:
        sql = request if isinstance(request, str) else request.sql_text
        if sql is None:
            raise BackendError(f"request {request.txn_type} has no SQL rendering")
        return await pg_simple_query(self, sql)

    def close(self) -> None:
        try:
            self.sock.setblocking(True)
            self.sock.sendall(b"X\0\0\0\4")
        except OSError:
            pass
        self.sock.close()


async def pg_simple_query(conn: PgConnection, sql: str) -> Response:
    """Run one simple query and consume everything up to ReadyForQuery.

    Data rows are counted, not decoded. An ErrorResponse turns into an error
    response carrying the server message; any unexpected message type is a
    protocol violation and raises :class:`BackendError`.
    """
    try:
        await sock_sendall(conn.sock, query_message(sql))
    except OSError as exc:
        raise BackendError(f"send failed: {exc}") from exc
    rows = 0
    failure = None
    while True:
        kind, body = await conn._read_message()
        if kind == "D":
            rows += 1
        elif kind == "E":
            failure = format_error(error_fields(body))
        elif kind == "Z":
            break
        elif kind not in "TCINSA":
            raise BackendError(f"protocol violation: unexpected message {kind!r} during query")
    if failure is not None:
        return Response(ERROR, 0, failure)
    return Response(OK, rows)


class PgBackend:
    name = "sql"

    def __init__(self, host: str = "127.0.0.1", port: int = 5432, user: str = "postgres",
                 database: str = "postgres", password: str | None = None,
                 isolation: str | None = "serializable"):
        self.params = dict(host=host, port=port, user=user, database=database,
                           password=password, isolation=isolation)

    def connect(self, worker_id: int, seed: int) -> PgConnection:
        return PgConnection(**self.params)
