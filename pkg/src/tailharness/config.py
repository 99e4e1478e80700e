"""Run configuration schema (JSON) and the builders that turn it into objects.

Durations accept ``ns|us|ms|s`` suffixes and are stored as integer
nanoseconds, so the effective config written next to a run is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator

from . import workload as wl
from .backends import BIMODAL, FIXED, LOGNORMAL, ServiceModel
from .noise import PauseModel, parse_pause_model
from .units import parse_duration

DurationNs = Annotated[int, BeforeValidator(parse_duration), Field(ge=0)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ServiceConfig(_Strict):
    kind: Literal["fixed", "lognormal", "bimodal"] = FIXED
    d: DurationNs = 100_000
    mu: float = 0.0
    sigma: float = 0.0
    d_fast: DurationNs = 0
    d_slow: DurationNs = 0
    p_slow: float = 0.0

    def build(self) -> ServiceModel:
        if self.kind == LOGNORMAL:
            return ServiceModel(LOGNORMAL, mu=self.mu, sigma=self.sigma)
        if self.kind == BIMODAL:
            return ServiceModel(BIMODAL, d_fast_ns=self.d_fast, d_slow_ns=self.d_slow, p_slow=self.p_slow)
        return ServiceModel(FIXED, d_ns=self.d)

    @model_validator(mode="after")
    def _valid(self):
        self.build()
        return self


class BackendConfig(_Strict):
    kind: Literal["stub", "echo", "sql"] = "stub"
    service: ServiceConfig = ServiceConfig()
    # echo
    address: str = "127.0.0.1:7070"
    # external: connect to ``address``; process: spawn a server process;
    # in_loop: host the server on the driver's loop
    server: Literal["external", "process", "in_loop"] = "external"
    reply_delay: DurationNs = 0
    # sql
    host: str = "127.0.0.1"
    port: int = Field(5432, ge=1, le=65535)
    user: str = "postgres"
    database: str = "postgres"
    password: str | None = None
    isolation: Literal["serializable", "repeatable read", "read committed"] | None = "serializable"


class WorkloadConfig(_Strict):
    record_count: int = Field(1_200_000, ge=1)
    mix: dict[str, float] | None = None
    zipfian_s: float = Field(0.99, gt=0)
    max_scan_length: int = Field(100, ge=1)
    warehouses: int = Field(10, ge=1)


class BenchmarkConfig(_Strict):
    benchmark: Literal["noop", "ycsb", "tpcc"] = "noop"
    backend: BackendConfig = BackendConfig()
    workers: int = Field(10, ge=1)
    warmup: DurationNs = 10_000_000_000
    measure: DurationNs = 60_000_000_000
    seed: int = 0
    noise: str = "off"
    error_threshold: float = Field(0.01, ge=0, le=1)
    cpus: list[int] | None = None
    workload: WorkloadConfig = WorkloadConfig()

    @field_validator("measure")
    @classmethod
    def _positive_measure(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("measure must be > 0")
        return v

    @field_validator("noise")
    @classmethod
    def _noise_spec(cls, v: str) -> str:
        return parse_pause_model(v).describe()

    @model_validator(mode="after")
    def _combination(self):
        if self.benchmark == "tpcc" and self.backend.kind == "sql":
            raise ValueError("tpcc has no SQL rendering; use the stub or echo backend")
        if self.workload.mix is not None:
            wl.OpMix(self.workload.mix)
        return self

    @property
    def pause_model(self) -> PauseModel:
        return parse_pause_model(self.noise)

    def effective(self) -> dict:
        """Fully resolved config; feeding it back reproduces the run."""
        return self.model_dump(mode="json")


def load_config(path: str | Path) -> BenchmarkConfig:
    with open(path, encoding="utf-8") as fh:
        return BenchmarkConfig.model_validate(json.load(fh))


def bundled_config_path(name: str) -> Path:
    path = Path(__file__).parent / "configs" / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return path


def make_generator(cfg: BenchmarkConfig, worker_id: int):
    w = cfg.workload
    if cfg.benchmark == "noop":
        return wl.NoopGenerator()
    if cfg.benchmark == "ycsb":
        ycsb = wl.YcsbConfig(record_count=w.record_count, mix=w.mix or dict(wl.YCSB_MIX),
                             zipfian_s=w.zipfian_s, max_scan_length=w.max_scan_length)
        return wl.YcsbGenerator(ycsb, cfg.seed, worker_id, cfg.workers)
    tpcc = wl.TpccConfig(warehouses=w.warehouses, mix=w.mix or dict(wl.TPCC_MIX))
    return wl.TpccGenerator(tpcc, wl.assign_warehouses(w.warehouses, cfg.workers), worker_id, cfg.seed)
