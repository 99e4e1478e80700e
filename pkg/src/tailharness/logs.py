"""Readers and writers for noise-event files.

Two inputs end up as :class:`~tailharness.model.NoiseEvent` sequences on the
run time base: the injector's own ground-truth CSV and HotSpot unified-logging
safepoint records (``-Xlog:safepoint=info``). Local and global safepoints are
treated alike.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from datetime import datetime, timezone
from decimal import Decimal
from typing import IO, Iterable, Sequence

from .errors import ParseError, ValidationError
from .model import JVM_LOG, NOISE_SOURCES, NoiseEvent

log = logging.getLogger(__name__)

NOISE_HEADER = ("start_ns", "duration_ns", "source", "kind")


def write_noise_log(events: Iterable[NoiseEvent], sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(NOISE_HEADER)
    for ev in events:
        w.writerow((ev.start_ns, ev.duration_ns, ev.source, ev.kind))


def encode_noise_log(events: Iterable[NoiseEvent]) -> bytes:
    buf = io.StringIO(newline="")
    write_noise_log(events, buf)
    return buf.getvalue().encode("utf-8")


def parse_noise_log(text: str | bytes) -> list[NoiseEvent]:
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    events = []
    header_seen = False
    for lineno, row in enumerate(csv.reader(io.StringIO(text, newline="")), start=1):
        if not row:
            continue
        if not header_seen:
            if tuple(row) != NOISE_HEADER:
                raise ParseError(f"expected header {','.join(NOISE_HEADER)}", lineno)
            header_seen = True
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", lineno)
        try:
            start, duration = int(row[0]), int(row[1])
        except ValueError:
            raise ParseError(f"non-integer time field in {row!r}", lineno) from None
        ev = NoiseEvent(start, duration, row[2], row[3])
        if ev.source not in NOISE_SOURCES:
            raise ParseError(f"unknown source {ev.source!r}", lineno)
        if ev.duration_ns <= 0:
            raise ValidationError(f"line {lineno}: non-positive duration_ns {ev.duration_ns}")
        events.append(ev)
    if not header_seen:
        raise ParseError("missing header", 1)
    return sorted(events)


def read_noise_log(path) -> list[NoiseEvent]:
    with open(path, "rb") as fh:
        return parse_noise_log(fh.read())


# --- HotSpot unified logging ---------------------------------------------------

_SAFEPOINT = re.compile(r'^(?P<decor>(?:\[[^\]]*\])*)\s*Safepoint "(?P<name>[^"]+)"(?P<rest>.*)$')
_FIELD = re.compile(r"([A-Za-z][A-Za-z ]*?):\s*(\d+) ns")
_DECOR = re.compile(r"\[([^\]]*)\]")
_ISO = re.compile(r"^\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d(?:\.\d+)?(?:[+-]\d{4}|Z)?$")
_UPTIME_S = re.compile(r"^(\d+(?:\.\d+)?)s$")
_INT_UNIT = re.compile(r"^(\d+)(ms|ns)$")

# Values above these are epoch-based (timemillis / timenanos), not uptime.
_EPOCH_MS = 10**11
_EPOCH_NS = 10**17

_PHASES = ("Reaching safepoint", "Cleanup", "At safepoint", "Leaving safepoint")


def iso_to_epoch_ns(text: str) -> int:
    if text.endswith("Z"):
        text = text[:-1] + "+0000"
    fmt = "%Y-%m-%dT%H:%M:%S.%f%z" if "." in text else "%Y-%m-%dT%H:%M:%S%z"
    if not re.search(r"[+-]\d{4}$", text):
        fmt = fmt[:-2]
    dt = datetime.strptime(text, fmt)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86_400 + delta.seconds) * 10**9 + delta.microseconds * 1_000


def _decorations(decor: str) -> tuple[int | None, int | None]:
    """(wall-clock epoch ns, JVM uptime ns) found in a line's decorations."""
    wall = uptime = None
    for item in _DECOR.findall(decor):
        item = item.strip()
        if _ISO.match(item):
            wall = iso_to_epoch_ns(item)
        elif m := _UPTIME_S.match(item):
            uptime = int(Decimal(m.group(1)) * 10**9)
        elif m := _INT_UNIT.match(item):
            value, unit = int(m.group(1)), m.group(2)
            if unit == "ms":
                if value > _EPOCH_MS:
                    wall = value * 1_000_000
                else:
                    uptime = value * 1_000_000
            elif value > _EPOCH_NS:
                wall = value
            else:
                uptime = value
    return wall, uptime


def _duration(fields: dict[str, int]) -> int:
    if "Total" in fields:
        return fields["Total"]
    return sum(fields.get(p, 0) for p in _PHASES)


def parse_safepoint_records(text: str) -> tuple[list[dict], int]:
    """Raw records and the number of skipped non-safepoint lines."""
    records = []
    skipped = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        m = _SAFEPOINT.match(line.strip())
        if not m:
            skipped += 1
            continue
        fields = {k.strip(): int(v) for k, v in _FIELD.findall(m.group("rest"))}
        if "Reaching safepoint" not in fields or "At safepoint" not in fields:
            skipped += 1
            continue
        wall, uptime = _decorations(m.group("decor"))
        records.append({
            "line": lineno,
            "name": m.group("name"),
            "wall_ns": wall,
            "uptime_ns": uptime,
            "duration_ns": _duration(fields),
            "fields": fields,
        })
    return records, skipped


def parse_hotspot_safepoint_log(text: str, run_origin_wallclock_ns: int = 0,
                                jvm_start_wallclock_ns: int | None = None) -> list[NoiseEvent]:
    """Safepoint pauses from a HotSpot ``-Xlog:safepoint`` log.

    A record is written when its safepoint ends, so an event starts at the
    record's timestamp minus its total safepoint time (reaching, optional
    cleanup, at-safepoint and, on newer JDKs, leaving).

    Timestamps come from a wall-clock decoration (``time``, ``utctime``,
    ``timemillis``, ``timenanos``) when present, else from ``jvm_start`` plus
    the uptime decoration. ``jvm_start`` defaults to the anchor implied by any
    line carrying both decorations; without one, uptime is used as is, and
    ``run_origin_wallclock_ns`` must then be given on the JVM-uptime axis.
    """
    records, skipped = parse_safepoint_records(text)
    if skipped:
        log.warning("skipped %d line(s) not matching the safepoint record grammar", skipped)
    if not records:
        if text.strip():
            raise ParseError("no safepoint records found in non-empty log")
        return []
    if jvm_start_wallclock_ns is None:
        jvm_start_wallclock_ns = next(
            (r["wall_ns"] - r["uptime_ns"] for r in records
             if r["wall_ns"] is not None and r["uptime_ns"] is not None), 0)
    events = []
    for r in records:
        if r["wall_ns"] is not None:
            at = r["wall_ns"]
        elif r["uptime_ns"] is not None:
            at = jvm_start_wallclock_ns + r["uptime_ns"]
        else:
            raise ParseError("safepoint record has no time decoration", r["line"])
        dur = r["duration_ns"]
        if dur <= 0:
            # Zero-length records carry no pause; keep the invariant duration > 0.
            dur = 1
        events.append(NoiseEvent(at - dur - run_origin_wallclock_ns, dur, JVM_LOG, r["name"]))
    return sorted(events)


def combine_events(*groups: Sequence[NoiseEvent]) -> list[NoiseEvent]:
    return sorted(ev for g in groups for ev in g)
