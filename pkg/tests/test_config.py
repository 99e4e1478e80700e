import json

import pydantic
import pytest

from tailharness.config import BenchmarkConfig, bundled_config_path, load_config, make_generator


def test_default_phase_lengths_and_workers():
    c = BenchmarkConfig()
    assert (c.workers, c.warmup, c.measure) == (10, 10 * 10**9, 60 * 10**9)
    assert c.workload.record_count == 1_200_000 and c.workload.warehouses == 10
    assert c.backend.isolation == "serializable"


def test_durations_persist_as_ns():
    c = BenchmarkConfig.model_validate({"warmup": "1.5s", "measure": "250ms", "backend": {"service": {"d": "100us"}}})
    eff = c.effective()
    assert eff["warmup"] == 1_500_000_000 and eff["measure"] == 250_000_000
    assert eff["backend"]["service"]["d"] == 100_000


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"backend": {"kind": "stub", "colour": "red"}},
    {"benchmark": "tpcc", "backend": {"kind": "sql"}},
    {"measure": "0s"},
    {"warmup": "-1s"},
    {"workers": 0},
    {"noise": "periodic:1s"},
    {"workload": {"mix": {"Read": 0.4}}},
    {"backend": {"service": {"kind": "bimodal", "d_fast": "1ms", "d_slow": 0}}},
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(pydantic.ValidationError):
        BenchmarkConfig.model_validate(raw)


def test_effective_config_round_trip_reproduces_streams(tmp_path):
    c = BenchmarkConfig.model_validate({"benchmark": "ycsb", "seed": 9, "workload": {"record_count": 500},
                                        "noise": "generational"})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(c.effective()))
    again = load_config(path)
    assert again == c
    g1, g2 = make_generator(c, 3), make_generator(again, 3)
    assert [g1.next() for _ in range(100)] == [g2.next() for _ in range(100)]


def test_noise_spec_is_normalised():
    assert BenchmarkConfig(noise="periodic:1s:50ms").noise == "periodic:1s:50ms@before_record"


@pytest.mark.parametrize("name", ["noop-echo", "noop-stub", "ycsb-stub", "tpcc-stub", "noop-sql"])
def test_bundled_configs_validate(name):
    load_config(bundled_config_path(name))


def test_unknown_bundled_name():
    with pytest.raises(FileNotFoundError):
        bundled_config_path("nope")
