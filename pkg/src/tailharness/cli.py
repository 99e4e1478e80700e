"""Command-line interface.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
runtime failures such as an unreachable backend or an unparseable input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pydantic

from . import analysis
from .errors import BackendError, HarnessError, ParseError, ValidationError
from .units import parse_duration

log = logging.getLogger("tailharness")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_timestamp(text: str) -> int:
    """Wall-clock instant as epoch ns: an ISO-8601 time, a bare integer of
    nanoseconds, or a duration such as ``1.5s``."""
    from .logs import iso_to_epoch_ns

    text = text.strip()
    if "T" in text:
        try:
            return iso_to_epoch_ns(text)
        except ValueError as exc:
            raise UsageError(f"bad timestamp {text!r}: {exc}") from None
    try:
        return parse_duration(text)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _load_meta(path: Path | None):
    from .model import RunMeta

    if path is None or not path.exists():
        return None, {}
    raw = json.loads(path.read_text(encoding="utf-8"))
    return RunMeta.from_dict(raw.get("run_meta", {})) if raw.get("run_meta") else None, raw


# --- subcommands -----------------------------------------------------------


def cmd_run(args) -> int:
    from .config import BenchmarkConfig, bundled_config_path, load_config
    from .driver import run_benchmark
    from .logs import write_noise_log
    from .model import write_trace

    path = Path(args.config)
    if not path.exists():
        try:
            path = bundled_config_path(args.config)
        except FileNotFoundError:
            raise UsageError(f"config {args.config!r} is neither a file nor a bundled config name") from None
    try:
        cfg = load_config(path)
        overrides = {k: getattr(args, k) for k in ("warmup", "measure", "seed", "workers")
                     if getattr(args, k) is not None}
        if overrides:
            cfg = BenchmarkConfig.model_validate({**cfg.effective(), **overrides})
    except (pydantic.ValidationError, ValueError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arts = run_benchmark(cfg)
    with open(out / "trace.csv", "w", encoding="utf-8", newline="") as fh:
        write_trace(arts.trace, fh)
    with open(out / "noise.csv", "w", encoding="utf-8", newline="") as fh:
        write_noise_log(arts.injected_noise, fh)
    _write_json(out / "meta.json", {
        "run_meta": arts.run_meta.to_dict(),
        "config": cfg.effective(),
        "throughput_series": arts.throughput_series.tolist(),
    })
    summary = analysis.summarize_run(arts.trace)
    _write_json(out / "summary.json", summary.to_dict())
    print(f"{summary.count} requests, {summary.overall_rps:.0f} req/s, p50 {summary.p50} ns, "
          f"max {summary.max} ns -> {out}", file=sys.stderr)
    return EXIT_OK


def cmd_serve_echo(args) -> int:
    from .backends import echo_serve

    delay = parse_duration(args.delay, "ns")

    def ready(addr):
        print(f"echo server listening on {addr[0]}:{addr[1]}", file=sys.stderr, flush=True)

    try:
        echo_serve(args.listen, delay, ready)
    except OSError as exc:
        raise BackendError(f"cannot listen on {args.listen}: {exc}") from exc
    return EXIT_OK


def _read_trace_with_meta(trace_path: str, meta_path: str | None):
    from .model import read_trace

    tp = Path(trace_path)
    mp = Path(meta_path) if meta_path else tp.with_name("meta.json")
    meta, raw = _load_meta(mp)
    return read_trace(tp, meta), raw


def cmd_analyze(args) -> int:
    trace, _ = _read_trace_with_meta(args.trace, args.meta)
    out = Path(args.out) if args.out else Path(args.trace).parent
    out.mkdir(parents=True, exist_ok=True)
    do_summary = args.summary or not args.plot
    if do_summary:
        summary = analysis.summarize_run(trace, include_errors=args.include_errors)
        _write_json(out / "summary.json", summary.to_dict())
    if args.plot:
        bench = trace.run_meta.benchmark if trace.run_meta else "noop"
        rate, lower, upper = analysis.PLOT_DEFAULTS.get(bench, analysis.PLOT_DEFAULTS["noop"])
        series = analysis.downsample_for_plot(
            trace,
            rate=args.rate if args.rate is not None else rate,
            lower_pct=args.lower if args.lower is not None else lower,
            upper_pct=args.upper if args.upper is not None else upper,
            seed=args.seed,
            txn_type=args.txn_type,
            window=args.window,
            include_errors=args.include_errors,
        )
        suffix = f"_{args.txn_type}" if args.txn_type else ""
        with open(out / f"plot_points{suffix}.csv", "w", encoding="utf-8", newline="") as fh:
            series.write_points(fh)
        with open(out / f"plot_mean{suffix}.csv", "w", encoding="utf-8", newline="") as fh:
            series.write_mean(fh)
    return EXIT_OK


def cmd_attribute(args) -> int:
    from .logs import combine_events, parse_hotspot_safepoint_log, read_noise_log

    trace, raw = _read_trace_with_meta(args.trace, args.meta)
    groups = [read_noise_log(p) for p in args.noise]
    if args.jvm_log:
        if args.origin is not None:
            origin = parse_timestamp(args.origin)
        elif trace.run_meta is not None and trace.run_meta.started_at_ns:
            origin = trace.run_meta.started_at_ns
        else:
            raise UsageError("--jvm-log needs --origin (or a meta.json with the run's wall-clock start)")
        jvm_start = parse_timestamp(args.jvm_start) if args.jvm_start is not None else None
        text = Path(args.jvm_log).read_text(encoding="utf-8", errors="replace")
        groups.append(parse_hotspot_safepoint_log(text, origin, jvm_start))
    events = combine_events(*groups)
    report = analysis.attribute_noise(trace, events, args.tail_pct, include_errors=args.include_errors)
    out = Path(args.out) if args.out else Path(args.trace).with_name("attribution.json")
    _write_json(out, report.to_dict())
    print(f"attribution fraction {report.attribution_fraction:.4f} "
          f"({report.tail_overlapped}/{report.tail_count} tail samples)", file=sys.stderr)
    return EXIT_OK


def cmd_compare(args) -> int:
    def load(p):
        try:
            return analysis.PercentileSummary.from_dict(json.loads(Path(p).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{p}: not JSON: {exc}") from None

    report = analysis.compare_runs(load(args.baseline), load(args.perturbed))
    out = Path(args.out) if args.out else Path(args.perturbed).with_name("distortion.json")
    _write_json(out, report.to_dict())
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_gen_noise(args) -> int:
    from .logs import encode_noise_log
    from .noise import generate_noise_schedule, parse_pause_model

    try:
        model = parse_pause_model(args.model)
        horizon = parse_duration(args.horizon, "s")
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    if horizon <= 0:
        raise UsageError("horizon must be > 0")
    data = encode_noise_log(generate_noise_schedule(model, horizon, args.seed))
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tailharness", description="Closed-loop benchmark harness and tail-latency attribution.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="execute a benchmark run")
    r.add_argument("--config", required=True, help="JSON config file, or the name of a bundled config")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--warmup", help="override the warm-up duration")
    r.add_argument("--measure", help="override the measurement duration")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("serve-echo", help="run the echo backend server until interrupted")
    e.add_argument("--listen", default="127.0.0.1:7070")
    e.add_argument("--delay", default="0", help="reply delay, e.g. 2ms")
    e.set_defaults(func=cmd_serve_echo)

    a = sub.add_parser("analyze", help="summaries and plot series for a trace")
    a.add_argument("--trace", required=True)
    a.add_argument("--meta", help="meta.json (default: next to the trace)")
    a.add_argument("--out", help="output directory (default: next to the trace)")
    a.add_argument("--summary", action="store_true")
    a.add_argument("--plot", action="store_true")
    a.add_argument("--rate", type=float)
    a.add_argument("--lower", help="lower percentile bound for extreme values")
    a.add_argument("--upper", help="upper percentile bound for extreme values")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--txn-type", help="restrict the plot series to one transaction type")
    a.add_argument("--window", type=int, default=1000)
    a.add_argument("--include-errors", action="store_true")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("attribute", help="attribute tail latencies to noise events")
    t.add_argument("--trace", required=True)
    t.add_argument("--meta")
    t.add_argument("--noise", nargs="*", default=[], help="noise CSV files")
    t.add_argument("--jvm-log", help="HotSpot -Xlog:safepoint output")
    t.add_argument("--origin", help="run origin wall clock (ISO-8601 or epoch ns)")
    t.add_argument("--jvm-start", help="JVM start wall clock, for logs with uptime decorations only")
    t.add_argument("--tail-pct", default="99.9")
    t.add_argument("--out")
    t.add_argument("--include-errors", action="store_true")
    t.set_defaults(func=cmd_attribute)

    c = sub.add_parser("compare", help="distortion of a perturbed run against a baseline")
    c.add_argument("--baseline", required=True)
    c.add_argument("--perturbed", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gen-noise", help="write a noise schedule without running a benchmark")
    g.add_argument("--model", required=True, help="e.g. periodic:1s:50ms or generational")
    g.add_argument("--horizon", required=True, help="schedule length, e.g. 70s")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_noise)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "tail_pct", None) is not None:
            try:
                float(args.tail_pct)
            except ValueError:
                raise UsageError(f"--tail-pct must be a number, got {args.tail_pct!r}") from None
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, ParseError, ValidationError, HarnessError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
