"""Closed-loop benchmark execution.

All workers run as coroutines on one :class:`~tailharness.runtime.Loop`, each
owning one backend connection. A worker issues its next request only after
the previous response has been consumed and recorded. Timestamps come from
the monotonic clock and are stored relative to the run origin, which is taken
after every connection is up.
"""

from __future__ import annotations

import contextlib
import gc
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from .analysis import throughput_series
from .backends import Backend, EchoBackend, EchoServerProcess, LoopEchoServer, StubBackend
from .config import BenchmarkConfig, make_generator
from .errors import BackendError
from .model import ERROR, LatencySample, LatencyTrace, NoiseEvent, RunMeta
from .noise import NoiseGate, generate_noise_schedule
from .runtime import Loop, clock, gate_wait_async, reduce_timer_slack
from .workload import derive_seed

log = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000


@dataclass
class RunArtifacts:
    trace: LatencyTrace
    throughput_series: np.ndarray
    injected_noise: list[NoiseEvent]
    run_meta: RunMeta


async def issue_and_measure(conn, request, worker_id: int, gate: NoiseGate | None = None,
                            now=clock) -> tuple[int, int, str]:
    """Time one request: (absolute start, latency, status).

    The end stamp is taken after the response has been consumed and after
    the post-receive gate, so a pause that lands while the response sits
    unrecorded is charged to this request.
    """
    start = now()
    response = await conn.execute(request)
    if gate is not None and gate.before_record:
        await gate_wait_async(gate, now())
    return start, now() - start, response.status


async def _worker(worker_id, conn, gen, gate, measure_start, end, out):
    gate_send = gate.before_send
    gate_record = gate.before_record
    execute = conn.execute
    next_request = gen.next
    append = out.append
    while True:
        if gate_send:
            await gate_wait_async(gate, clock())
        request = next_request()
        start = clock()
        if start >= end:
            return
        response = await execute(request)
        if gate_record:
            await gate_wait_async(gate, clock())
        stop = clock()
        if start >= measure_start:
            append((start, stop - start, request.txn_type, response.status))


@contextlib.contextmanager
def open_backend(cfg: BenchmarkConfig):
    """Yield a :class:`Backend` for the config, starting an echo server
    process first when ``spawn_server`` is set."""
    b = cfg.backend
    if b.kind == "stub":
        yield StubBackend(b.service.build())
    elif b.kind == "echo":
        if b.server == "process":
            with EchoServerProcess(b.address, b.reply_delay) as server:
                yield EchoBackend(server.address)
        elif b.server == "in_loop":
            with LoopEchoServer(b.address, b.reply_delay) as server:
                yield EchoBackend(server.address, server)
        else:
            yield EchoBackend(b.address)
    else:
        from .pgwire import PgBackend

        yield PgBackend(b.host, b.port, b.user, b.database, b.password, b.isolation)


def _apply_affinity(cpus: list[int] | None) -> str:
    if not cpus:
        return "none"
    if not hasattr(os, "sched_setaffinity"):
        log.warning("CPU affinity requested but not supported on this platform")
        return f"requested {sorted(set(cpus))}, unsupported"
    try:
        os.sched_setaffinity(0, set(cpus))
    except OSError as exc:
        log.warning("could not set CPU affinity to %s: %s", cpus, exc)
        return f"requested {sorted(set(cpus))}, failed: {exc}"
    return f"process pinned to {sorted(os.sched_getaffinity(0))}"


def run_benchmark(config: BenchmarkConfig, backend: Backend | None = None) -> RunArtifacts:
    """Execute warm-up then measurement with ``config.workers`` closed-loop
    workers. ``backend`` overrides the one described by the config."""
    with contextlib.ExitStack() as stack:
        if backend is None:
            backend = stack.enter_context(open_backend(config))
        return _run(config, backend)


def _run(config: BenchmarkConfig, backend: Backend) -> RunArtifacts:
    model = config.pause_model
    affinity = _apply_affinity(config.cpus)
    conns = []
    try:
        for wid in range(config.workers):
            conns.append(backend.connect(wid, config.seed))
    except BackendError:
        for c in conns:
            c.close()
        raise
    gens = [make_generator(config, wid) for wid in range(config.workers)]
    schedule = generate_noise_schedule(model, config.warmup + config.measure,
                                       derive_seed(config.seed, "noise"))

    reduce_timer_slack()
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    outs: list[list] = [[] for _ in conns]
    try:
        origin = clock()
        wall = time.time_ns()
        gate = NoiseGate(schedule, origin, model.inject_point)
        measure_start = origin + config.warmup
        end = measure_start + config.measure
        loop = Loop()
        if hasattr(backend, "attach"):
            backend.attach(loop)
        for wid, (conn, gen) in enumerate(zip(conns, gens)):
            loop.spawn(_worker(wid, conn, gen, gate, measure_start, end, outs[wid]), f"worker-{wid}")
        loop.run()
    finally:
        for c in conns:
            c.close()
        if gc_was_enabled:
            gc.enable()

    samples = [LatencySample(wid, t, start - origin, lat, status)
               for wid, out in enumerate(outs) for start, lat, t, status in out]
    errors = sum(1 for s in samples if s.status == ERROR)
    error_rate = errors / len(samples) if samples else 0.0
    degraded = error_rate > config.error_threshold
    if degraded:
        log.warning("run degraded: error rate %.4f exceeds threshold %.4f", error_rate, config.error_threshold)
    meta = RunMeta(
        benchmark=config.benchmark,
        backend=backend.name,
        warmup_s=config.warmup / NS_PER_S,
        measure_s=config.measure / NS_PER_S,
        workers=config.workers,
        seed=config.seed,
        noise=model.describe(),
        started_at_ns=wall,
        degraded=degraded,
        error_rate=error_rate,
        affinity=affinity,
    )
    trace = LatencyTrace.from_samples(samples, meta)
    n_buckets = -(-config.measure // NS_PER_S)
    series = throughput_series(trace, NS_PER_S, config.warmup, n_buckets)
    return RunArtifacts(trace, series, schedule, meta)
