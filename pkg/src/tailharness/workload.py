"""Seeded request generators for the NoOp, YCSB-style and TPC-C-style workloads.

Every generator is a pure function of its configuration and seed; one
instance is created per worker and never shared.
"""

from __future__ import annotations

import hashlib
import math
import random
from array import array
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import accumulate
from typing import Mapping

from .errors import ValidationError

YCSB_MIX = {
    "Read": 0.50,
    "Insert": 0.05,
    "Scan": 0.15,
    "Update": 0.10,
    "Delete": 0.10,
    "ReadModifyWrite": 0.10,
}

# Minimum percentages mandated by the TPC-C specification, with the remainder
# assigned to NewOrder.
TPCC_MIX = {
    "NewOrder": 0.45,
    "Payment": 0.43,
    "OrderStatus": 0.04,
    "Delivery": 0.04,
    "StockLevel": 0.04,
}

EMPTY_STATEMENT = ";"


def derive_seed(seed: int, *parts) -> int:
    """Stable 64-bit sub-seed, independent of PYTHONHASHSEED."""
    h = hashlib.blake2b(repr((seed,) + parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True, slots=True)
class Request:
    txn_type: str
    keys: tuple[int, ...] = ()
    scan_length: int | None = None
    payload: tuple[str, ...] | None = None
    sql_text: str | None = None
    warehouse_id: int | None = None

    def wire_bytes(self) -> bytes:
        """Bytes sent by non-SQL transports (the echo backend)."""
        if self.sql_text is not None:
            return self.sql_text.encode()
        parts = [self.txn_type, *map(str, self.keys)]
        if self.scan_length is not None:
            parts.append(f"len={self.scan_length}")
        return " ".join(parts).encode()


class OpMix:
    """Weighted choice over transaction labels.

    Weights must be non-negative and sum to 1 within 1e-9. Label order is
    preserved and is part of the seeded behaviour.
    """

    def __init__(self, weights: Mapping[str, float]):
        if not weights:
            raise ValidationError("operation mix is empty")
        for name, w in weights.items():
            if not (w >= 0 and math.isfinite(w)):
                raise ValidationError(f"weight for {name} must be finite and >= 0, got {w}")
        total = math.fsum(weights.values())
        if total == 0:
            raise ValidationError("operation mix weights sum to 0")
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"operation mix weights sum to {total}, expected 1")
        self.weights = dict(weights)
        self.labels = [k for k, w in weights.items() if w > 0]
        cum = list(accumulate(weights[k] for k in self.labels))
        self._cum = [c / cum[-1] for c in cum]

    def __repr__(self):
        return f"OpMix({self.weights!r})"


def sample_op_type(mix: OpMix, rng: random.Random) -> str:
    i = bisect_right(mix._cum, rng.random())
    return mix.labels[min(i, len(mix.labels) - 1)]


@lru_cache(maxsize=8)
def _zipf_table(n: int, s: float) -> array:
    # Unnormalized cumulative weights sum_{j<=k} j^-s; shared by all workers.
    return array("d", accumulate(k ** -s for k in range(1, n + 1)))


class ZipfianState:
    """Inverse-CDF sampler over ranks 1..n with P(k) = k^-s / H(n, s)."""

    def __init__(self, n: int, s: float = 0.99, seed: int = 0):
        if n < 1:
            raise ValidationError(f"zipfian key count must be >= 1, got {n}")
        if not (s >= 0 and math.isfinite(s)):
            raise ValidationError(f"zipfian exponent must be >= 0, got {s}")
        self.n = n
        self.s = s
        self._cum = _zipf_table(n, float(s))
        self.H = self._cum[-1]
        self.rng = random.Random(seed)

    def pmf(self, k: int) -> float:
        return k ** -self.s / self.H


def zipfian_next(state: ZipfianState) -> int:
    u = state.rng.random() * state.H
    return min(bisect_right(state._cum, u) + 1, state.n)


_ASCII = bytes(range(0x21, 0x7F))
_ASCII_TABLE = bytes(_ASCII[b % len(_ASCII)] for b in range(256))


@dataclass
class YcsbConfig:
    record_count: int = 1_200_000
    mix: Mapping[str, float] = field(default_factory=lambda: dict(YCSB_MIX))
    zipfian_s: float = 0.99
    max_scan_length: int = 100
    field_count: int = 10
    field_length: int = 100
    render_sql: bool = True


class YcsbGenerator:
    def __init__(self, config: YcsbConfig, seed: int = 0, worker_id: int = 0, workers: int = 1):
        if config.record_count <= 0:
            raise ValidationError("record_count must be > 0")
        if config.max_scan_length < 1:
            raise ValidationError("max_scan_length must be >= 1")
        self.config = config
        self.mix = OpMix(config.mix)
        self.rng = random.Random(derive_seed(seed, "ycsb", worker_id))
        self.zipf = ZipfianState(config.record_count, config.zipfian_s, derive_seed(seed, "zipf", worker_id))
        # Insert ids are striped by worker so no coordination is needed.
        self._next_insert = config.record_count + worker_id
        self._insert_stride = workers

    def _fields(self) -> tuple[str, ...]:
        n, length = self.config.field_count, self.config.field_length
        raw = self.rng.randbytes(n * length).translate(_ASCII_TABLE).decode()
        return tuple(raw[i * length:(i + 1) * length] for i in range(n))

    def _key(self) -> int:
        return zipfian_next(self.zipf) - 1

    def next(self) -> Request:
        op = sample_op_type(self.mix, self.rng)
        scan_length = payload = None
        if op == "Insert":
            key = self._next_insert
            self._next_insert += self._insert_stride
            payload = self._fields()
        else:
            key = self._key()
            if op == "Scan":
                scan_length = self.rng.randint(1, self.config.max_scan_length)
            elif op in ("Update", "ReadModifyWrite"):
                payload = self._fields()
        sql = render_ycsb_sql(op, key, scan_length, payload) if self.config.render_sql else None
        return Request(op, (key,), scan_length, payload, sql)


def _quote(v: str) -> str:
    return "'" + v.replace("'", "''") + "'"


def render_ycsb_sql(op: str, key: int, scan_length: int | None, payload) -> str:
    where = f"WHERE ycsb_key = {key}"
    if op == "Read":
        return f"SELECT * FROM usertable {where}"
    if op == "Scan":
        return f"SELECT * FROM usertable WHERE ycsb_key >= {key} ORDER BY ycsb_key LIMIT {scan_length}"
    if op == "Delete":
        return f"DELETE FROM usertable {where}"
    if op == "Insert":
        return f"INSERT INTO usertable VALUES ({key}, {', '.join(map(_quote, payload))})"
    sets = ", ".join(f"field{i + 1} = {_quote(v)}" for i, v in enumerate(payload))
    update = f"UPDATE usertable SET {sets} {where}"
    if op == "Update":
        return update
    if op == "ReadModifyWrite":
        # Two statements in one simple-query message run as one implicit transaction.
        return f"SELECT * FROM usertable {where}; {update}"
    raise ValidationError(f"unknown YCSB operation {op!r}")


@dataclass(frozen=True)
class WarehouseBinding:
    """Warehouses owned by each worker."""

    owned: Mapping[int, tuple[int, ...]]

    def __getitem__(self, worker_id: int) -> tuple[int, ...]:
        try:
            return self.owned[worker_id]
        except KeyError:
            raise ValidationError(f"worker {worker_id} has no warehouse binding") from None

    def warehouse_of(self, worker_id: int) -> int:
        """Single warehouse of a worker; only valid when it owns exactly one."""
        owned = self[worker_id]
        if len(owned) != 1:
            raise ValidationError(f"worker {worker_id} owns {len(owned)} warehouses")
        return owned[0]


def assign_warehouses(warehouses: int, workers: int) -> WarehouseBinding:
    if warehouses < 1 or workers < 1:
        raise ValidationError(f"need >= 1 warehouse and worker, got {warehouses}, {workers}")
    if workers >= warehouses:
        owned = {i: (i % warehouses,) for i in range(workers)}
    else:
        owned = {i: tuple(range(i, warehouses, workers)) for i in range(workers)}
    return WarehouseBinding(owned)


@dataclass
class TpccConfig:
    warehouses: int = 10
    districts: int = 10
    customers: int = 3000
    mix: Mapping[str, float] = field(default_factory=lambda: dict(TPCC_MIX))


class TpccGenerator:
    def __init__(self, config: TpccConfig, binding: WarehouseBinding, worker_id: int, seed: int = 0):
        self.config = config
        self.mix = OpMix(config.mix)
        self.owned = binding[worker_id]
        self.worker_id = worker_id
        self.rng = random.Random(derive_seed(seed, "tpcc", worker_id))

    def next(self) -> Request:
        return next_tpcc_txn(self)


def next_tpcc_txn(gen: TpccGenerator, binding: WarehouseBinding | None = None,
                  worker_id: int | None = None) -> Request:
    owned = gen.owned if binding is None else binding[gen.worker_id if worker_id is None else worker_id]
    rng = gen.rng
    op = sample_op_type(gen.mix, rng)
    wh = owned[0] if len(owned) == 1 else owned[rng.randrange(len(owned))]
    district = rng.randint(1, gen.config.districts)
    customer = rng.randint(1, gen.config.customers)
    return Request(op, (wh, district, customer), warehouse_id=wh)


_NOOP = Request("NoOp", sql_text=EMPTY_STATEMENT)


def noop_request() -> Request:
    return _NOOP


class NoopGenerator:
    def next(self) -> Request:
        return _NOOP


def check_request(req: Request, record_count: int) -> list[str]:
    """Invariant violations of a YCSB request (empty when valid)."""
    problems = []
    if (req.scan_length is not None) != (req.txn_type == "Scan"):
        problems.append("scan_length present iff Scan")
    if req.scan_length is not None and req.scan_length < 1:
        problems.append("scan_length < 1")
    for k in req.keys:
        if req.txn_type == "Insert":
            if k < record_count:
                problems.append(f"insert key {k} inside loaded keyspace")
        elif not 0 <= k < record_count:
            problems.append(f"key {k} outside [0, {record_count})")
    return problems
