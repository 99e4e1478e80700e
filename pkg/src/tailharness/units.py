"""Duration strings with ``ns|us|ms|s`` suffixes."""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation

from .errors import ValidationError

_SCALE = {"ns": 1, "us": 1_000, "µs": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(ns|us|µs|ms|s)?\s*$")


def parse_duration(value: str | int, default_unit: str = "ns") -> int:
    """Return integer nanoseconds. Bare integers use ``default_unit``.

    >>> parse_duration("50ms")
    50000000
    >>> parse_duration("1.5s")
    1500000000
    """
    if isinstance(value, bool):
        raise ValidationError(f"not a duration: {value!r}")
    if isinstance(value, (int, float)):
        value = repr(value)
    m = _RE.match(value)
    if not m:
        raise ValidationError(f"not a duration: {value!r}")
    try:
        ns = Decimal(m.group(1)) * _SCALE[m.group(2) or default_unit]
    except InvalidOperation:
        raise ValidationError(f"not a duration: {value!r}") from None
    if ns != ns.to_integral_value():
        raise ValidationError(f"duration {value!r} is not a whole number of nanoseconds")
    return int(ns)


def format_duration(ns: int) -> str:
    for unit in ("s", "ms", "us"):
        scale = _SCALE[unit]
        if ns and ns % scale == 0:
            return f"{ns // scale}{unit}"
    return f"{ns}ns"
