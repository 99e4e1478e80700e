import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tailharness.errors import ValidationError
from tailharness.model import NoiseEvent
from tailharness.noise import (
    BEFORE_RECORD,
    BEFORE_SEND,
    BOTH,
    Durations,
    NoiseGate,
    PauseModel,
    gate_wait,
    generate_noise_schedule,
    merge_overlapping,
    parse_pause_model,
)
from tailharness.runtime import clock

S = 1_000_000_000
MS = 1_000_000


def test_off_is_empty():
    assert generate_noise_schedule(parse_pause_model("off"), 10 * S, 1) == []


def test_periodic_arithmetic():
    events = generate_noise_schedule(parse_pause_model("periodic:1s:50ms"), 5 * S, 1)
    assert [e.start_ns for e in events] == [S, 2 * S, 3 * S, 4 * S]
    assert all(e.duration_ns == 50 * MS and e.kind == "periodic" and e.source == "injected" for e in events)


def test_poisson_mean_count():
    model = parse_pause_model("poisson:2:10ms")
    counts = [len(generate_noise_schedule(model, 100 * S, seed)) for seed in range(100)]
    assert statistics.mean(counts) == pytest.approx(200, rel=0.10)


def test_schedule_deterministic_given_seed():
    m = parse_pause_model("generational")
    assert generate_noise_schedule(m, 600 * S, 7) == generate_noise_schedule(m, 600 * S, 7)
    assert generate_noise_schedule(m, 600 * S, 7) != generate_noise_schedule(m, 600 * S, 8)


def test_generational_defaults_and_kinds():
    m = PauseModel("generational")
    assert (m.minor_rate, m.minor.fixed_ns, m.major_rate, m.major.fixed_ns) == (1.0, 5 * MS, 1 / 60, 50 * MS)
    events = generate_noise_schedule(m, 3600 * S, 3)
    kinds = {e.kind for e in events}
    assert kinds == {"minor", "major"}


@given(st.sampled_from(["poisson:50:lognormal:15:1", "poisson:20:30ms", "generational:30:20ms:5:100ms"]),
       st.integers(0, 10**6))
def test_schedule_sorted_non_overlapping_positive(spec, seed):
    events = generate_noise_schedule(parse_pause_model(spec), 5 * S, seed)
    for a, b in zip(events, events[1:]):
        assert a.end_ns <= b.start_ns
    assert all(e.duration_ns > 0 and 0 <= e.start_ns < 5 * S for e in events)


def test_merge_keeps_longest_kind():
    raw = [NoiseEvent(0, 10, "injected", "minor"), NoiseEvent(5, 50, "injected", "major"),
           NoiseEvent(100, 5, "injected", "minor")]
    assert merge_overlapping(raw) == [NoiseEvent(0, 55, "injected", "major"), NoiseEvent(100, 5, "injected", "minor")]


@pytest.mark.parametrize("spec", [
    "periodic:1s", "periodic:0s:5ms", "periodic:1s:0ms", "poisson:-1:5ms", "bogus", "off@nowhere",
    "generational:1:5ms:1", "poisson:1:lognormal:1",
])
def test_bad_specs(spec):
    with pytest.raises(ValidationError):
        parse_pause_model(spec)


@pytest.mark.parametrize("spec", ["off", "periodic:1s:50ms", "poisson:2:10ms@both",
                                  "generational:1:5ms:0.2:500ms@before_send", "poisson:0.5:lognormal:14:0.5"])
def test_describe_reparses(spec):
    m = parse_pause_model(spec)
    assert parse_pause_model(m.describe()) == m


def test_rate_fraction_syntax():
    assert parse_pause_model("generational:1:5ms:1/60:50ms").major_rate == pytest.approx(1 / 60)


def test_durations_validation():
    with pytest.raises(ValidationError):
        Durations(0)
    with pytest.raises(ValidationError):
        Durations(mu=1.0, sigma=-1.0)


def test_zero_horizon_rejected():
    with pytest.raises(ValidationError):
        generate_noise_schedule(parse_pause_model("periodic:1s:5ms"), 0, 0)


def test_gate_resume_times():
    gate = NoiseGate([NoiseEvent(100, 50, "injected", "p")], offset_ns=1000)
    assert gate.resume_time(1099) is None
    assert gate.resume_time(1100) == 1150
    assert gate.resume_time(1125) == 1150
    assert gate.resume_time(1150) is None


def test_gate_chains_contiguous_events():
    gate = NoiseGate([NoiseEvent(0, 10, "injected", "a"), NoiseEvent(10, 10, "injected", "b"),
                      NoiseEvent(25, 5, "injected", "c")])
    assert gate.resume_time(5) == 20
    assert gate.resume_time(22) is None


def test_gate_rejects_overlapping_schedule():
    with pytest.raises(ValidationError):
        NoiseGate([NoiseEvent(0, 10, "injected", "a"), NoiseEvent(5, 10, "injected", "b")])


@pytest.mark.parametrize("point,send,record", [(BEFORE_SEND, True, False), (BEFORE_RECORD, False, True),
                                               (BOTH, True, True)])
def test_gate_inject_points(point, send, record):
    gate = NoiseGate([NoiseEvent(0, 10, "injected", "a")], inject_point=point)
    assert (gate.before_send, gate.before_record) == (send, record)
    empty = NoiseGate([], inject_point=point)
    assert not empty.before_send and not empty.before_record


def test_gate_wait_returns_immediately_outside_events():
    gate = NoiseGate([NoiseEvent(10 * S, MS, "injected", "a")], offset_ns=clock())
    t0 = clock()
    gate_wait(gate, clock())
    assert clock() - t0 < MS


def test_gate_wait_blocks_for_remaining_half():
    now = clock()
    d = 40 * MS
    gate = NoiseGate([NoiseEvent(0, d, "injected", "a")], offset_ns=now - d // 2)
    t0 = clock()
    resume = gate_wait(gate, t0)
    waited = clock() - t0
    assert resume == now + d // 2
    assert d // 2 - MS <= waited < d // 2 + 5 * MS
