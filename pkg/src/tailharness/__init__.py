"""Closed-loop database benchmark harness with tail-latency attribution.

Workers measure requests against a stub, an echo server or a PostgreSQL
server; a pause injector emulates stop-the-world harness pauses with a
ground-truth log; the analysis module relates the resulting tails to those
pauses or to pauses parsed from HotSpot safepoint logs.
"""

from .errors import BackendError, HarnessError, ParseError, ValidationError
from .model import LatencySample, LatencyTrace, NoiseEvent, RunMeta

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "HarnessError",
    "LatencySample",
    "LatencyTrace",
    "NoiseEvent",
    "ParseError",
    "RunMeta",
    "ValidationError",
]
