import pytest

from tailharness.errors import HarnessError
from tailharness.runtime import Loop, clock, gather, precise_sleep_until, run, sleep_for, sleep_until


def test_sleep_until_accuracy():
    async def go():
        errs = []
        for _ in range(200):
            deadline = clock() + 100_000
            await sleep_until(deadline)
            errs.append(clock() - deadline)
        return errs

    errs = sorted(run(go()))
    assert errs[0] >= 0
    assert errs[len(errs) // 2] < 20_000


def test_precise_sleep_until_never_early():
    for d in (0, 50_000, 500_000):
        deadline = clock() + d
        precise_sleep_until(deadline)
        assert clock() >= deadline


def test_gather_interleaves_tasks():
    order = []

    async def worker(name, delay):
        for i in range(3):
            await sleep_for(delay)
            order.append(name)
        return name

    assert gather(worker("a", 1_000_000), worker("b", 1_500_000)) == ["a", "b"]
    assert order.count("a") == 3 and order[0] == "a" and order[-1] == "b"


def test_first_exception_cancels_others():
    closed = []

    async def boom():
        await sleep_for(1000)
        raise RuntimeError("boom")

    async def forever():
        try:
            while True:
                await sleep_for(100_000)
        finally:
            closed.append(True)

    with pytest.raises(RuntimeError, match="boom"):
        gather(boom(), forever())
    assert closed == [True]


def test_daemon_tasks_do_not_keep_the_loop_alive():
    loop = Loop()
    closed = []

    async def daemon():
        try:
            while True:
                await sleep_for(10_000)
        finally:
            closed.append(True)

    async def short():
        await sleep_for(1_000_000)
        return 5

    loop.spawn(daemon(), daemon=True)
    t = loop.spawn(short())
    loop.run()
    assert t.result == 5 and closed == [True]


def test_deadlock_detected():
    import types

    @types.coroutine
    def bogus():
        yield (99, None)

    async def stuck():
        await bogus()

    with pytest.raises(HarnessError):
        run(stuck())
