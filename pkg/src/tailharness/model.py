"""Core domain types, trace containers and the trace CSV format.

All timestamps are integer nanoseconds on a monotonic clock, relative to the
run origin. The wall-clock instant of that origin is kept once, in
:class:`RunMeta`, so traces can be lined up with external logs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import IO, Iterable, NamedTuple, Sequence

from .errors import ParseError, ValidationError

TRACE_HEADER = ("worker_id", "txn_type", "start_ns", "latency_ns", "status")

OK = "ok"
ERROR = "error"
STATUSES = (OK, ERROR)

# Closed label set, in tie-break order. Labels outside this tuple are allowed
# and sort after the known ones, lexicographically.
TXN_TYPES = (
    "NoOp",
    "Read",
    "Insert",
    "Scan",
    "Update",
    "Delete",
    "ReadModifyWrite",
    "NewOrder",
    "Payment",
    "OrderStatus",
    "Delivery",
    "StockLevel",
)
_TXN_ORDER = {name: i for i, name in enumerate(TXN_TYPES)}


def txn_order(label: str) -> tuple[int, str]:
    return (_TXN_ORDER.get(label, len(TXN_TYPES)), label)


class LatencySample(NamedTuple):
    """Timing record of one request."""

    worker_id: int
    txn_type: str
    start_ns: int
    latency_ns: int
    status: str = OK

    @property
    def end_ns(self) -> int:
        return self.start_ns + self.latency_ns

    def validate(self) -> None:
        if self.worker_id < 0:
            raise ValidationError(f"negative worker_id {self.worker_id}")
        if self.start_ns < 0:
            raise ValidationError(f"negative start_ns {self.start_ns}")
        if self.latency_ns < 0:
            raise ValidationError(f"negative latency_ns {self.latency_ns}")
        if self.status not in STATUSES:
            raise ValidationError(f"unknown status {self.status!r}")
        if not self.txn_type or "," in self.txn_type or "\n" in self.txn_type:
            raise ValidationError(f"invalid txn_type {self.txn_type!r}")


def sample_key(s: LatencySample) -> tuple:
    return (s.start_ns, s.worker_id, txn_order(s.txn_type))


class NoiseEvent(NamedTuple):
    """One harness-side pause interval.

    ``source`` is ``injected`` for ground-truth pauses produced by the noise
    injector and ``jvm_log`` for pauses parsed from runtime logs. Events parsed
    from external logs may start before the run origin, so ``start_ns`` can be
    negative.
    """

    start_ns: int
    duration_ns: int
    source: str
    kind: str

    @property
    def end_ns(self) -> int:
        return self.start_ns + self.duration_ns

    def validate(self) -> None:
        if self.duration_ns <= 0:
            raise ValidationError(f"non-positive duration_ns {self.duration_ns}")
        if self.source not in NOISE_SOURCES:
            raise ValidationError(f"unknown noise source {self.source!r}")


INJECTED = "injected"
JVM_LOG = "jvm_log"
NOISE_SOURCES = (INJECTED, JVM_LOG)


@dataclass(frozen=True)
class RunMeta:
    benchmark: str
    backend: str
    warmup_s: float = 10.0
    measure_s: float = 60.0
    workers: int = 10
    seed: int = 0
    noise: str = "off"
    started_at_ns: int = 0  # wall clock (epoch ns) at the run origin
    degraded: bool = False
    error_rate: float = 0.0
    connections: str = "one dedicated connection per worker"
    affinity: str = "none"

    def __post_init__(self):
        if self.warmup_s < 0:
            raise ValidationError(f"warmup_s must be >= 0, got {self.warmup_s}")
        if not self.measure_s > 0:
            raise ValidationError(f"measure_s must be > 0, got {self.measure_s}")
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunMeta":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class LatencyTrace:
    """Samples sorted by ``(start_ns, worker_id, txn_type)``.

    Construct through :meth:`from_samples` when the input order is unknown.
    """

    samples: tuple[LatencySample, ...] = ()
    run_meta: RunMeta | None = None

    def __post_init__(self):
        if not isinstance(self.samples, tuple):
            object.__setattr__(self, "samples", tuple(self.samples))
        prev = None
        for s in self.samples:
            k = sample_key(s)
            if prev is not None and k < prev:
                raise ValidationError("samples are not sorted by start_ns")
            prev = k

    @classmethod
    def from_samples(cls, samples: Iterable[LatencySample], run_meta: RunMeta | None = None):
        return cls(tuple(sorted(samples, key=sample_key)), run_meta)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_worker(self) -> dict[int, list[LatencySample]]:
        out: dict[int, list[LatencySample]] = {}
        for s in self.samples:
            out.setdefault(s.worker_id, []).append(s)
        return out


def closed_loop_violations(trace: LatencyTrace) -> list[tuple[LatencySample, LatencySample]]:
    """Return consecutive same-worker pairs where the next request started
    before the previous one completed."""
    last: dict[int, LatencySample] = {}
    bad = []
    for s in trace.samples:
        prev = last.get(s.worker_id)
        if prev is not None and s.start_ns < prev.end_ns:
            bad.append((prev, s))
        last[s.worker_id] = s
    return bad


def write_trace(trace: LatencyTrace, sink: IO[str]) -> None:
    try:
        sink.write(",".join(TRACE_HEADER) + "\n")
        sink.writelines(
            f"{s.worker_id},{s.txn_type},{s.start_ns},{s.latency_ns},{s.status}\n"
            for s in trace.samples
        )
    except OSError as exc:
        raise OSError(f"failed writing trace CSV: {exc}") from exc


def encode_trace(trace: LatencyTrace) -> bytes:
    buf = io.StringIO(newline="")
    write_trace(trace, buf)
    return buf.getvalue().encode("utf-8")


def _int_field(value: str, name: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"{name} is not an integer: {value!r}", lineno) from None


def decode_trace(data: bytes | str, run_meta: RunMeta | None = None) -> LatencyTrace:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    reader = csv.reader(io.StringIO(text, newline=""))
    samples = []
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row:
            continue
        if not header_seen:
            if tuple(row) != TRACE_HEADER:
                raise ParseError(f"expected header {','.join(TRACE_HEADER)}", lineno)
            header_seen = True
            continue
        if len(row) != len(TRACE_HEADER):
            raise ParseError(f"expected {len(TRACE_HEADER)} fields, got {len(row)}", lineno)
        s = LatencySample(
            _int_field(row[0], "worker_id", lineno),
            row[1],
            _int_field(row[2], "start_ns", lineno),
            _int_field(row[3], "latency_ns", lineno),
            row[4],
        )
        try:
            s.validate()
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        samples.append(s)
    if not header_seen:
        raise ParseError("missing header", 1)
    return LatencyTrace.from_samples(samples, run_meta)


def read_trace(path, run_meta: RunMeta | None = None) -> LatencyTrace:
    with open(path, "rb") as fh:
        return decode_trace(fh.read(), run_meta)


def merge_traces(traces: Sequence[LatencyTrace]) -> LatencyTrace:
    if not traces:
        return LatencyTrace()
    meta = traces[0].run_meta
    for t in traces[1:]:
        if t.run_meta != meta:
            raise ValidationError("cannot merge traces with different run metadata")
    merged = [s for t in traces for s in t.samples]
    return LatencyTrace.from_samples(merged, meta)


def fmt_ns(ns: float) -> str:
    """Human-readable duration, e.g. ``17.0us``."""
    if ns is None or (isinstance(ns, float) and math.isnan(ns)):
        return "n/a"
    for unit, scale in (("s", 1e9), ("ms", 1e6), ("us", 1e3)):
        if abs(ns) >= scale:
            return f"{ns / scale:.3g}{unit}"
    return f"{ns:.0f}ns"


__all__ = [
    "ERROR",
    "INJECTED",
    "JVM_LOG",
    "LatencySample",
    "LatencyTrace",
    "NoiseEvent",
    "OK",
    "RunMeta",
    "TRACE_HEADER",
    "TXN_TYPES",
    "closed_loop_violations",
    "decode_trace",
    "encode_trace",
    "merge_traces",
    "read_trace",
    "write_trace",
]
