"""Emulated stop-the-world pauses with an exact ground-truth schedule.

A schedule is a sorted list of non-overlapping :class:`NoiseEvent` on the run
time base. Workers consult it through a :class:`NoiseGate` at fixed points of
their request loop; a worker that checks the gate while an event is active is
held until the event ends. The gate is polled, not preemptive: a worker that
is waiting on its backend only notices the pause at its next check.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_right
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import ValidationError
from .model import INJECTED, NoiseEvent
from .units import format_duration, parse_duration

OFF = "off"
PERIODIC = "periodic"
POISSON = "poisson"
GENERATIONAL = "generational"
KINDS = (OFF, PERIODIC, POISSON, GENERATIONAL)

BEFORE_SEND = "before_send"
BEFORE_RECORD = "before_record"
BOTH = "both"
INJECT_POINTS = (BEFORE_SEND, BEFORE_RECORD, BOTH)

NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class Durations:
    """Fixed pause length, or lognormal with ``mu``/``sigma`` of ln(ns)."""

    fixed_ns: int | None = None
    mu: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if self.fixed_ns is not None:
            if self.fixed_ns <= 0:
                raise ValidationError(f"pause duration must be > 0, got {self.fixed_ns}")
        elif self.mu is None or self.sigma is None or self.sigma < 0:
            raise ValidationError("lognormal pause durations need mu and sigma >= 0")

    def draw(self, rng: random.Random) -> int:
        if self.fixed_ns is not None:
            return self.fixed_ns
        return max(1, round(rng.lognormvariate(self.mu, self.sigma)))

    def describe(self) -> str:
        if self.fixed_ns is not None:
            return format_duration(self.fixed_ns)
        return f"lognormal:{self.mu}:{self.sigma}"


@dataclass(frozen=True)
class PauseModel:
    kind: str = OFF
    period_ns: int = 0
    duration: Durations | None = None
    rate: float = 0.0  # events per second (poisson)
    minor_rate: float = 1.0
    minor: Durations = Durations(5_000_000)
    major_rate: float = 1 / 60
    major: Durations = Durations(50_000_000)
    inject_point: str = BEFORE_RECORD

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown pause model {self.kind!r}")
        if self.inject_point not in INJECT_POINTS:
            raise ValidationError(f"unknown inject point {self.inject_point!r}")
        for name in ("rate", "minor_rate", "major_rate"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValidationError(f"{name} must be >= 0, got {v}")
        if self.kind == PERIODIC:
            if self.period_ns <= 0:
                raise ValidationError("periodic model needs period > 0")
            if self.duration is None or self.duration.fixed_ns is None:
                raise ValidationError("periodic model needs a fixed duration")
        if self.kind == POISSON and self.duration is None:
            raise ValidationError("poisson model needs a duration")

    @property
    def enabled(self) -> bool:
        return self.kind != OFF

    def describe(self) -> str:
        if self.kind == OFF:
            body = OFF
        elif self.kind == PERIODIC:
            body = f"periodic:{format_duration(self.period_ns)}:{self.duration.describe()}"
        elif self.kind == POISSON:
            body = f"poisson:{self.rate:g}:{self.duration.describe()}"
        else:
            body = (f"generational:{self.minor_rate:g}:{self.minor.describe()}"
                    f":{self.major_rate:g}:{self.major.describe()}")
        return f"{body}@{self.inject_point}"


def _parse_durations(parts: list[str]) -> Durations:
    if parts and parts[0] == "lognormal":
        if len(parts) != 3:
            raise ValidationError("lognormal durations take lognormal:<mu>:<sigma>")
        return Durations(mu=float(parts[1]), sigma=float(parts[2]))
    if len(parts) != 1:
        raise ValidationError(f"bad duration spec {':'.join(parts)!r}")
    return Durations(parse_duration(parts[0]))


def _parse_rate(text: str) -> float:
    # "2" is two events per second; "1/60" also accepted.
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_pause_model(spec: str) -> PauseModel:
    """Parse the compact model syntax used by the CLI and config files.

    ``off``, ``periodic:<period>:<duration>``, ``poisson:<rate>:<duration>``,
    ``poisson:<rate>:lognormal:<mu>:<sigma>``, ``generational`` or
    ``generational:<minor rate>:<minor dur>:<major rate>:<major dur>``, each
    optionally followed by ``@before_send|before_record|both``.
    """
    spec = spec.strip()
    inject = BEFORE_RECORD
    if "@" in spec:
        spec, inject = spec.rsplit("@", 1)
    kind, *rest = spec.split(":")
    try:
        if kind == OFF and not rest:
            return PauseModel(OFF, inject_point=inject)
        if kind == PERIODIC and len(rest) == 2:
            return PauseModel(PERIODIC, period_ns=parse_duration(rest[0]),
                              duration=_parse_durations(rest[1:]), inject_point=inject)
        if kind == POISSON and len(rest) >= 2:
            return PauseModel(POISSON, rate=_parse_rate(rest[0]),
                              duration=_parse_durations(rest[1:]), inject_point=inject)
        if kind == GENERATIONAL and not rest:
            return PauseModel(GENERATIONAL, inject_point=inject)
        if kind == GENERATIONAL and len(rest) == 4:
            return PauseModel(GENERATIONAL,
                              minor_rate=_parse_rate(rest[0]), minor=Durations(parse_duration(rest[1])),
                              major_rate=_parse_rate(rest[2]), major=Durations(parse_duration(rest[3])),
                              inject_point=inject)
    except ValueError as exc:
        raise ValidationError(f"bad pause model {spec!r}: {exc}") from None
    raise ValidationError(f"bad pause model {spec!r}")


def _poisson_starts(rate: float, horizon_ns: int, rng: random.Random) -> list[int]:
    if rate <= 0:
        return []
    out = []
    t = 0.0
    while True:
        t += rng.expovariate(rate) * NS_PER_S
        if t >= horizon_ns:
            return out
        out.append(int(t))


def merge_overlapping(events: Sequence[NoiseEvent]) -> list[NoiseEvent]:
    """Coalesce overlapping events. A merged event keeps the kind of its
    longest constituent."""
    merged: list[NoiseEvent] = []
    longest: list[int] = []
    for ev in sorted(events):
        if merged and ev.start_ns < merged[-1].end_ns:
            last = merged[-1]
            end = max(last.end_ns, ev.end_ns)
            kind = last.kind
            if ev.duration_ns > longest[-1]:
                kind, longest[-1] = ev.kind, ev.duration_ns
            merged[-1] = last._replace(duration_ns=end - last.start_ns, kind=kind)
        else:
            merged.append(ev)
            longest.append(ev.duration_ns)
    return merged


def generate_noise_schedule(model: PauseModel, horizon_ns: int, seed: int = 0) -> list[NoiseEvent]:
    if horizon_ns <= 0:
        raise ValidationError(f"horizon must be > 0, got {horizon_ns}")
    if model.kind == OFF:
        return []
    rng = random.Random(seed)
    raw: list[NoiseEvent] = []
    if model.kind == PERIODIC:
        d = model.duration.fixed_ns
        raw = [NoiseEvent(t, d, INJECTED, PERIODIC)
               for t in range(model.period_ns, horizon_ns, model.period_ns)]
    elif model.kind == POISSON:
        for t in _poisson_starts(model.rate, horizon_ns, rng):
            raw.append(NoiseEvent(t, model.duration.draw(rng), INJECTED, POISSON))
    else:
        # Independent streams, each with its own RNG so that changing one
        # stream's parameters leaves the other's draws untouched.
        minor_rng = random.Random(rng.getrandbits(64))
        major_rng = random.Random(rng.getrandbits(64))
        for t in _poisson_starts(model.minor_rate, horizon_ns, minor_rng):
            raw.append(NoiseEvent(t, model.minor.draw(minor_rng), INJECTED, "minor"))
        for t in _poisson_starts(model.major_rate, horizon_ns, major_rng):
            raw.append(NoiseEvent(t, model.major.draw(major_rng), INJECTED, "major"))
    return merge_overlapping(raw)


class NoiseGate:
    """Read-only view of a schedule, shifted onto an absolute clock.

    ``offset_ns`` is the absolute clock reading of the run origin. The gate
    holds no mutable state, so any number of workers can consult it.
    """

    def __init__(self, schedule: Sequence[NoiseEvent], offset_ns: int = 0,
                 inject_point: str = BEFORE_RECORD):
        prev_end = None
        for ev in schedule:
            if prev_end is not None and ev.start_ns < prev_end:
                raise ValidationError("noise schedule must be sorted and non-overlapping")
            prev_end = ev.end_ns
        self.schedule = tuple(schedule)
        self._starts = [ev.start_ns + offset_ns for ev in schedule]
        self._ends = [ev.end_ns + offset_ns for ev in schedule]
        self.inject_point = inject_point
        self.before_send = bool(schedule) and inject_point in (BEFORE_SEND, BOTH)
        self.before_record = bool(schedule) and inject_point in (BEFORE_RECORD, BOTH)

    def resume_time(self, now_ns: int) -> int | None:
        """End of the pause covering ``now_ns``, or None if the gate is open.

        Contiguous events are chained, so the returned instant is always
        outside every event.
        """
        i = bisect_right(self._starts, now_ns) - 1
        if i < 0 or now_ns >= self._ends[i]:
            return None
        end = self._ends[i]
        while i + 1 < len(self._starts) and self._starts[i + 1] <= end:
            i += 1
            end = max(end, self._ends[i])
        return end


def gate_wait(gate: NoiseGate, now_ns: int, sleep_until=None) -> int:
    """Block until the gate is open and return the resume time.

    ``sleep_until`` is a blocking callable taking an absolute deadline; the
    driver's event loop supplies a cooperative version of this, see
    :func:`tailharness.runtime.gate_wait_async`.
    """
    resume = gate.resume_time(now_ns)
    if resume is None:
        return now_ns
    if sleep_until is None:
        from .runtime import precise_sleep_until as sleep_until
    sleep_until(resume)
    return resume


def with_inject_point(model: PauseModel, inject_point: str) -> PauseModel:
    return replace(model, inject_point=inject_point)
