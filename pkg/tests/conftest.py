import random

import pytest
from hypothesis import HealthCheck, settings

from tailharness.model import TXN_TYPES, LatencySample, LatencyTrace

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_trace(n: int, seed: int = 0, workers: int = 4, max_latency: int = 10**6, meta=None) -> LatencyTrace:
    """Closed-loop trace: each worker issues back-to-back requests with small gaps."""
    rng = random.Random(seed)
    clocks = [rng.randrange(1000) for _ in range(workers)]
    samples = []
    for _ in range(n):
        w = rng.randrange(workers)
        lat = rng.randrange(max_latency)
        samples.append(LatencySample(w, rng.choice(TXN_TYPES), clocks[w], lat,
                                     "ok" if rng.random() > 0.01 else "error"))
        clocks[w] += lat + rng.randrange(50)
    return LatencyTrace.from_samples(samples, meta)


@pytest.fixture
def make_trace():
    return random_trace


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
