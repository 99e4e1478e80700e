"""Percentile summaries, time series and tail attribution over latency traces."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .model import OK, LatencyTrace, NoiseEvent

log = logging.getLogger(__name__)

# (json name, percentile) in reporting order
SUMMARY_PERCENTILES = (
    ("min", 0),
    ("p50", 50),
    ("p95", 95),
    ("p99", 99),
    ("p99.9", "99.9"),
    ("p99.975", "99.975"),
    ("max", 100),
)

# Plot defaults per benchmark: (rate, lower pct, upper pct)
PLOT_DEFAULTS = {
    "noop": (0.00001, "0.025", "99.975"),
    "ycsb": (0.0005, "0.025", "99.975"),
    "tpcc": (0.005, "0.25", "99.75"),
}


def _exact(p) -> Fraction:
    # Floats go through their shortest repr so that 99.9 means 999/10.
    if isinstance(p, float):
        return Fraction(repr(p))
    return Fraction(p)


def nearest_rank(p, n: int) -> int:
    """1-based rank of the p-th percentile among n values: ceil(p/100 * n),
    with p = 0 mapped to rank 1."""
    if n < 1:
        raise ValidationError("percentile of an empty sequence")
    q = _exact(p)
    if not 0 <= q <= 100:
        raise ValidationError(f"percentile must be in [0, 100], got {p}")
    return max(1, math.ceil(q * n / 100))


def percentile(latencies: Sequence[int] | np.ndarray, p) -> int:
    a = np.asarray(latencies)
    n = a.size
    if n == 0:
        raise ValidationError("percentile of an empty sequence")
    r = nearest_rank(p, n)
    return int(np.partition(a, r - 1)[r - 1])


def percentiles_sorted(sorted_values: np.ndarray, ps) -> list[int]:
    n = sorted_values.size
    return [int(sorted_values[nearest_rank(p, n) - 1]) for p in ps]


@dataclass(frozen=True)
class TraceColumns:
    worker_id: np.ndarray
    txn_type: np.ndarray  # object array of labels
    start_ns: np.ndarray
    latency_ns: np.ndarray
    ok: np.ndarray

    @classmethod
    def of(cls, trace: LatencyTrace) -> "TraceColumns":
        samples = trace.samples
        n = len(samples)
        if n == 0:
            empty = np.empty(0, dtype=np.int64)
            return cls(empty, np.empty(0, dtype=object), empty, empty, np.empty(0, dtype=bool))
        w, t, s, lat, st = zip(*samples)
        return cls(
            np.fromiter(w, dtype=np.int64, count=n),
            np.array(t, dtype=object),
            np.fromiter(s, dtype=np.int64, count=n),
            np.fromiter(lat, dtype=np.int64, count=n),
            np.array([x == OK for x in st], dtype=bool),
        )


@dataclass
class PercentileSummary:
    count: int
    error_count: int
    min: int
    p50: int
    p95: int
    p99: int
    p99_9: int
    p99_975: int
    max: int
    overall_rps: float
    by_type: dict[str, "PercentileSummary"] = field(default_factory=dict)
    benchmark: str | None = None
    backend: str | None = None

    def values(self) -> dict[str, int]:
        return {
            "min": self.min, "p50": self.p50, "p95": self.p95, "p99": self.p99,
            "p99.9": self.p99_9, "p99.975": self.p99_975, "max": self.max,
        }

    def to_dict(self) -> dict:
        d = {"count": self.count, "error_count": self.error_count, **self.values(),
             "overall_rps": self.overall_rps}
        if self.benchmark is not None:
            d["benchmark"] = self.benchmark
        if self.backend is not None:
            d["backend"] = self.backend
        if self.by_type:
            d["by_type"] = {k: v.to_dict() for k, v in self.by_type.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PercentileSummary":
        try:
            return cls(
                count=d["count"], error_count=d["error_count"], min=d["min"], p50=d["p50"],
                p95=d["p95"], p99=d["p99"], p99_9=d["p99.9"], p99_975=d["p99.975"], max=d["max"],
                overall_rps=d["overall_rps"],
                by_type={k: cls.from_dict(v) for k, v in d.get("by_type", {}).items()},
                benchmark=d.get("benchmark"), backend=d.get("backend"),
            )
        except KeyError as exc:
            raise ValidationError(f"summary is missing field {exc.args[0]!r}") from None


def _summary_of(lat: np.ndarray, errors: int, seconds: float) -> PercentileSummary:
    v = percentiles_sorted(np.sort(lat), [p for _, p in SUMMARY_PERCENTILES])
    return PercentileSummary(lat.size, errors, *v, overall_rps=lat.size / seconds)


def summarize_run(trace: LatencyTrace, include_errors: bool = False,
                  measure_s: float | None = None) -> PercentileSummary:
    """Summary over ok samples (all samples with ``include_errors``), with a
    per-transaction-type breakdown. Throughput is count / measure_s."""
    cols = TraceColumns.of(trace)
    meta = trace.run_meta
    if measure_s is None:
        if meta is not None:
            measure_s = meta.measure_s
        elif len(cols.start_ns):
            span = int((cols.start_ns + cols.latency_ns).max() - cols.start_ns.min())
            measure_s = max(span, 1) / 1e9
        else:
            measure_s = 1.0
    keep = np.ones(cols.ok.size, dtype=bool) if include_errors else cols.ok
    if not keep.any():
        raise ValidationError("trace has no ok samples to summarize")
    errors = int((~cols.ok).sum())
    summary = _summary_of(cols.latency_ns[keep], errors, measure_s)
    for label in sorted(set(cols.txn_type.tolist())):
        of_type = cols.txn_type == label
        sel = of_type & keep
        if sel.any():
            summary.by_type[label] = _summary_of(cols.latency_ns[sel], int((of_type & ~cols.ok).sum()), measure_s)
    if meta is not None:
        summary.benchmark, summary.backend = meta.benchmark, meta.backend
    return summary


def throughput_series(trace: LatencyTrace, bucket_ns: int = 1_000_000_000, origin_ns: int = 0,
                      n_buckets: int | None = None) -> np.ndarray:
    """Requests per bucket, keyed by floor((start_ns - origin_ns) / bucket_ns)."""
    if bucket_ns <= 0:
        raise ValidationError("bucket must be > 0")
    starts = TraceColumns.of(trace).start_ns - origin_ns
    if starts.size and starts.min() < 0:
        raise ValidationError("trace has samples before the series origin")
    idx = starts // bucket_ns
    length = max(n_buckets or 0, int(idx.max()) + 1 if idx.size else 0)
    return np.bincount(idx, minlength=length).astype(np.int64)


def sliding_mean(values: Sequence[float] | np.ndarray, window: int = 1000) -> np.ndarray:
    """Trailing mean: element i averages values[max(0, i - window + 1) : i + 1]."""
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    a = np.asarray(values)
    if a.size == 0:
        return np.empty(0)
    # Integer prefix sums are exact, so long traces do not lose precision.
    exact = np.issubdtype(a.dtype, np.integer)
    csum = np.concatenate(([0], np.cumsum(a, dtype=np.int64 if exact else np.float64)))
    i = np.arange(1, a.size + 1)
    lo = np.maximum(i - window, 0)
    return (csum[i] - csum[lo]) / (i - lo)


STANDARD = "standard"
EXTREME = "extreme"


@dataclass
class PlotSeries:
    t_ns: np.ndarray
    latency_ns: np.ndarray
    extreme: np.ndarray  # bool per point
    mean_t_ns: np.ndarray
    mean_ns: np.ndarray
    lower_bound_ns: int = 0
    upper_bound_ns: int = 0

    def points(self):
        for t, lat, ext in zip(self.t_ns.tolist(), self.latency_ns.tolist(), self.extreme.tolist()):
            yield t, lat, EXTREME if ext else STANDARD

    def write_points(self, sink) -> None:
        sink.write("t_ns,latency_ns,class\n")
        sink.writelines(f"{t},{lat},{c}\n" for t, lat, c in self.points())

    def write_mean(self, sink) -> None:
        sink.write("t_ns,mean_ns\n")
        sink.writelines(f"{t},{m!r}\n" for t, m in zip(self.mean_t_ns.tolist(), self.mean_ns.tolist()))


def downsample_for_plot(trace: LatencyTrace, rate: float, lower_pct="0.025", upper_pct="99.975",
                        seed: int = 0, txn_type: str | None = None, window: int = 1000,
                        include_errors: bool = False) -> PlotSeries:
    """Keep every sample outside [p(lower), p(upper)] and a Bernoulli(rate)
    subsample of the rest. ``txn_type`` restricts the series, and its bounds,
    to one transaction type."""
    if not 0 < rate <= 1:
        raise ValidationError(f"rate must be in (0, 1], got {rate}")
    lo_q, hi_q = _exact(lower_pct), _exact(upper_pct)
    if not 0 <= lo_q < hi_q <= 100:
        raise ValidationError(f"need 0 <= lower < upper <= 100, got {lower_pct}, {upper_pct}")
    cols = TraceColumns.of(trace)
    sel = np.ones(cols.ok.size, dtype=bool) if include_errors else cols.ok.copy()
    if txn_type is not None:
        sel &= cols.txn_type == txn_type
    t, lat = cols.start_ns[sel], cols.latency_ns[sel]
    if lat.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return PlotSeries(empty, empty, np.empty(0, dtype=bool), empty, np.empty(0))
    s = np.sort(lat)
    lower, upper = percentiles_sorted(s, [lo_q, hi_q])
    extreme = (lat > upper) | (lat < lower)
    draws = np.random.default_rng(seed).random(lat.size)
    keep = extreme | (draws < rate)
    return PlotSeries(t[keep], lat[keep], extreme[keep], t, sliding_mean(lat, window), lower, upper)


@dataclass
class AttributionReport:
    overlapped: np.ndarray  # per sample, trace order
    event_kind: list  # per sample, kind of an overlapping event or None
    tail_pct: float
    tail_threshold_ns: int
    tail_count: int
    tail_overlapped: int
    attribution_fraction: float
    max_latency_ns: int
    max_overlapped: bool
    events_total: int
    events_matched: int
    no_noise: bool
    tail_samples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tail_pct": self.tail_pct,
            "tail_threshold_ns": self.tail_threshold_ns,
            "tail_count": self.tail_count,
            "tail_overlapped": self.tail_overlapped,
            "attribution_fraction": self.attribution_fraction,
            "max_latency_ns": self.max_latency_ns,
            "max_overlapped": self.max_overlapped,
            "events_total": self.events_total,
            "events_matched": self.events_matched,
            "samples_overlapped": int(self.overlapped.sum()),
            "no_noise": self.no_noise,
            "tail_samples": self.tail_samples,
        }


def _check_sorted(events: Sequence[NoiseEvent]) -> None:
    for a, b in zip(events, events[1:]):
        if b.start_ns < a.start_ns:
            raise ValidationError("noise events must be sorted by start_ns")


def attribute_noise(trace: LatencyTrace, events: Sequence[NoiseEvent], tail_pct=99.9,
                    include_errors: bool = False) -> AttributionReport:
    """Flag samples whose in-flight interval [start, start + latency) meets
    some event interval [start, start + duration), then report which share of
    the tail (latency above the tail_pct percentile) is flagged.

    A zero-latency sample is treated as occupying its start nanosecond.
    """
    events = list(events)
    _check_sorted(events)
    cols = TraceColumns.of(trace)
    n = cols.start_ns.size
    a = cols.start_ns
    b = np.maximum(a + cols.latency_ns, a + 1)
    overlapped = np.zeros(n, dtype=bool)
    kinds: list = [None] * n
    matched = 0
    if events and n:
        es = np.fromiter((e.start_ns for e in events), dtype=np.int64, count=len(events))
        ee = es + np.fromiter((e.duration_ns for e in events), dtype=np.int64, count=len(events))
        # Running max of event ends (and which event attains it) over events
        # sorted by start answers "does any event with start < b end after a?"
        run_max = np.maximum.accumulate(ee)
        arg = np.arange(len(events))
        arg = np.maximum.accumulate(np.where(ee == run_max, arg, 0))
        j = np.searchsorted(es, b, side="left")
        has = j > 0
        jj = np.where(has, j - 1, 0)
        overlapped = has & (run_max[jj] > a)
        event_kinds = [e.kind for e in events]
        for i in np.flatnonzero(overlapped).tolist():
            kinds[i] = event_kinds[arg[jj[i]]]
        # Symmetric question per event, using samples sorted by start.
        b_max = np.maximum.accumulate(b)
        k = np.searchsorted(a, ee, side="left")
        matched = int(((k > 0) & (b_max[np.maximum(k - 1, 0)] > es)).sum())
    keep = np.ones(n, dtype=bool) if include_errors else cols.ok
    lat = cols.latency_ns[keep]
    if lat.size == 0:
        raise ValidationError("trace has no samples to attribute")
    thr = percentile(lat, tail_pct)
    tail = keep & (cols.latency_ns > thr)
    tail_count = int(tail.sum())
    tail_over = int((tail & overlapped).sum())
    idx_keep = np.flatnonzero(keep)
    imax = int(idx_keep[np.argmax(lat)])
    tail_rows = []
    for i in np.flatnonzero(tail).tolist():
        s = trace.samples[i]
        tail_rows.append({"worker_id": s.worker_id, "txn_type": s.txn_type, "start_ns": s.start_ns,
                          "latency_ns": s.latency_ns, "overlapped": bool(overlapped[i]), "kind": kinds[i]})
    return AttributionReport(
        overlapped=overlapped,
        event_kind=kinds,
        tail_pct=float(tail_pct),
        tail_threshold_ns=thr,
        tail_count=tail_count,
        tail_overlapped=tail_over,
        attribution_fraction=tail_over / tail_count if tail_count and events else 0.0,
        max_latency_ns=int(cols.latency_ns[imax]),
        max_overlapped=bool(overlapped[imax]),
        events_total=len(events),
        events_matched=matched,
        no_noise=not events,
        tail_samples=tail_rows,
    )


RATIO_FIELDS = ("p50", "p95", "p99", "p99.9", "p99.975", "max")


@dataclass
class DistortionReport:
    ratios: dict[str, float]
    throughput_ratio: float
    tail_only: bool
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ratios": self.ratios, "throughput_ratio": self.throughput_ratio,
                "tail_only": self.tail_only, "warnings": self.warnings}


def _ratio(perturbed: Real, baseline: Real) -> float:
    if baseline == 0:
        return 1.0 if perturbed == 0 else math.inf
    return perturbed / baseline


def compare_runs(baseline: PercentileSummary, perturbed: PercentileSummary,
                 max_factor: float = 10.0, bulk_factor: float = 1.2) -> DistortionReport:
    """Ratios perturbed/baseline. ``tail_only`` is set when the maximum grew by
    at least ``max_factor`` while p50 and p95 stayed within ``bulk_factor``."""
    warnings = []
    for attr in ("benchmark", "backend"):
        b, p = getattr(baseline, attr), getattr(perturbed, attr)
        if b is not None and p is not None and b != p:
            warnings.append(f"{attr} differs: baseline {b!r}, perturbed {p!r}")
    for w in warnings:
        log.warning("compare_runs: %s", w)
    bv, pv = baseline.values(), perturbed.values()
    ratios = {k: _ratio(pv[k], bv[k]) for k in RATIO_FIELDS}
    tail_only = ratios["max"] >= max_factor and ratios["p50"] <= bulk_factor and ratios["p95"] <= bulk_factor
    return DistortionReport(ratios, _ratio(perturbed.overall_rps, baseline.overall_rps), tail_only, warnings)


__all__ = [
    "AttributionReport",
    "DistortionReport",
    "PercentileSummary",
    "PlotSeries",
    "attribute_noise",
    "compare_runs",
    "downsample_for_plot",
    "percentile",
    "sliding_mean",
    "summarize_run",
    "throughput_series",
]

