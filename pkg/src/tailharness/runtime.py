"""Single-threaded cooperative scheduler for worker contexts.

Workers are ``async def`` coroutines that await three primitives:
:func:`sleep_until` (absolute monotonic deadline, in ns), :func:`readable`
and :func:`writable` (socket readiness). One :class:`Loop` drives them.

asyncio is not used because its selector timeouts have millisecond
granularity and its per-step overhead caps a 10-worker closed loop well below
100k requests/s. Here timers are served by a hybrid wait: a coarse sleep until
``spin_ns`` before the deadline, then a spin on the monotonic clock. Thread
wake-ups are avoided entirely, which is what keeps microsecond-scale service
times accurate on small machines.
"""

from __future__ import annotations

import ctypes
import itertools
import os
import selectors
import sys
import time
import types
from collections import deque
from heapq import heappop, heappush

from .errors import HarnessError

clock = time.monotonic_ns

_SLEEP = 0
_READ = 1
_WRITE = 2

# Spin window for timers when no socket is pending, in ns.
SPIN_NS = 200_000
# With sockets pending the selector is used for waits; epoll timeouts are in
# whole milliseconds, so anything closer than this is polled.
IO_POLL_NS = 2_000_000


@types.coroutine
def sleep_until(deadline_ns: int):
    yield (_SLEEP, deadline_ns)


@types.coroutine
def readable(sock):
    yield (_READ, sock)


@types.coroutine
def writable(sock):
    yield (_WRITE, sock)


async def sleep_for(ns: int) -> None:
    await sleep_until(clock() + ns)


async def gate_wait_async(gate, now_ns: int) -> int:
    """Cooperative counterpart of :func:`tailharness.noise.gate_wait`."""
    resume = gate.resume_time(now_ns)
    if resume is None:
        return now_ns
    await sleep_until(resume)
    return resume


def precise_sleep_until(deadline_ns: int, spin_ns: int = SPIN_NS) -> None:
    """Blocking hybrid wait for code running outside a :class:`Loop`."""
    remaining = deadline_ns - clock()
    if remaining > spin_ns:
        time.sleep((remaining - spin_ns) / 1e9)
    while clock() < deadline_ns:
        pass


def reduce_timer_slack() -> bool:
    """Ask Linux for 1 ns timer slack on the calling thread (best effort).

    The default 50 us slack would otherwise dominate sub-millisecond sleeps.
    """
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(None, use_errno=True)
        return libc.prctl(29, 1, 0, 0, 0) == 0  # PR_SET_TIMERSLACK
    except (OSError, AttributeError):
        return False


class Task:
    __slots__ = ("coro", "name", "result", "exception", "done", "daemon")

    def __init__(self, coro, name: str, daemon: bool = False):
        self.coro = coro
        self.name = name
        self.daemon = daemon
        self.result = None
        self.exception: BaseException | None = None
        self.done = False

    def __repr__(self):
        return f"<Task {self.name} done={self.done}>"


class Loop:
    def __init__(self, spin_ns: int = SPIN_NS):
        self.spin_ns = spin_ns
        self.tasks: list[Task] = []
        self._ready: deque[Task] = deque()
        self._timers: list = []
        self._seq = itertools.count()
        self._selector = selectors.DefaultSelector()
        self._io_waiting = 0
        self._live = 0
        self._failed: Task | None = None

    def spawn(self, coro, name: str | None = None, daemon: bool = False) -> Task:
        """Schedule ``coro``. The loop runs until every non-daemon task is
        done; daemon tasks still pending at that point are closed."""
        task = Task(coro, name or f"task-{len(self.tasks)}", daemon)
        self.tasks.append(task)
        self._ready.append(task)
        if not daemon:
            self._live += 1
        return task

    def _step(self, task: Task) -> None:
        try:
            kind, arg = task.coro.send(None)
        except StopIteration as stop:
            task.result = stop.value
            task.done = True
            self._live -= not task.daemon
            return
        except BaseException as exc:  # noqa: BLE001 - re-raised by run()
            task.exception = exc
            task.done = True
            self._live -= not task.daemon
            if self._failed is None:
                self._failed = task
            return
        if kind == _SLEEP:
            heappush(self._timers, (arg, next(self._seq), task))
        elif kind == _READ or kind == _WRITE:
            events = selectors.EVENT_READ if kind == _READ else selectors.EVENT_WRITE
            self._selector.register(arg, events, task)
            self._io_waiting += 1
        else:
            task.coro.close()
            task.exception = HarnessError(f"task {task.name} awaited an unsupported object {kind!r}")
            task.done = True
            self._live -= not task.daemon
            if self._failed is None:
                self._failed = task

    def _poll(self, timeout) -> None:
        for key, _ in self._selector.select(timeout):
            self._selector.unregister(key.fileobj)
            self._io_waiting -= 1
            self._ready.append(key.data)

    def run(self) -> None:
        """Run until every task finishes. The first task exception cancels the
        remaining tasks and is re-raised."""
        ready, timers, step = self._ready, self._timers, self._step
        try:
            while self._live:
                while ready:
                    step(ready.popleft())
                if self._failed is not None:
                    raise self._failed.exception
                if not self._live:
                    break
                now = clock()
                if timers and timers[0][0] <= now:
                    while timers and timers[0][0] <= now:
                        ready.append(heappop(timers)[2])
                    if self._io_waiting:
                        self._poll(0)
                    continue
                if self._io_waiting:
                    if not timers:
                        self._poll(None)
                        continue
                    remaining = timers[0][0] - now
                    if remaining > IO_POLL_NS:
                        self._poll((remaining - IO_POLL_NS // 2) / 1e9)
                    else:
                        os.sched_yield()
                        self._poll(0)
                elif timers:
                    remaining = timers[0][0] - now
                    if remaining > self.spin_ns:
                        time.sleep((remaining - self.spin_ns) / 1e9)
                else:  # pragma: no cover - every wait registers a timer or a socket
                    raise HarnessError("all tasks are blocked with nothing to wait for")
        finally:
            self._close()

    def _close(self) -> None:
        for task in self.tasks:
            if not task.done:
                task.coro.close()
                task.done = True
        for key in list(self._selector.get_map().values()):
            self._selector.unregister(key.fileobj)
        self._selector.close()
        self._timers.clear()
        self._ready.clear()


def run(coro):
    """Run a single coroutine to completion on a fresh loop."""
    loop = Loop()
    task = loop.spawn(coro)
    loop.run()
    return task.result


def gather(*coros):
    loop = Loop()
    tasks = [loop.spawn(c) for c in coros]
    loop.run()
    return [t.result for t in tasks]


async def sock_sendall(sock, data) -> None:
    view = memoryview(data)
    while view:
        try:
            n = sock.send(view)
        except BlockingIOError:
            await writable(sock)
            continue
        view = view[n:]


async def sock_recv(sock, bufsize: int, wait_first: bool = True) -> bytes:
    """Receive up to ``bufsize`` bytes; ``b""`` means the peer closed.

    ``wait_first`` skips the optimistic read when data is not expected yet.
    """
    if wait_first:
        await readable(sock)
    while True:
        try:
            return sock.recv(bufsize)
        except BlockingIOError:
            await readable(sock)
