"""Wall-clock benchmarks: throughput, latency and maximum sustainable rate.

A run injects synthetic records at a fixed rate for ``duration`` seconds into
the pipelined runtime. Event time follows the schedule: a record scheduled
``s`` seconds into the run has timestamp ``floor(s / tick)``.

Latency of an output is its emission instant minus the scheduled injection
instant of its last contributing input. Measuring from the schedule (rather
than from when the source managed to hand the record over) charges an
overloaded pipeline for its backlog. For outputs produced by a window, the
watermark that closed the window also counts as a contributing input; its
instant is when the schedule reached the watermark's event time.
"""

from __future__ import annotations

import csv
import math
import random
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, TextIO

from aggflow.core import Tuple
from aggflow.harness.workload import WorkloadConfig
from aggflow.pipelines import build_pipeline
from aggflow.registry import Functions
from aggflow.runtime.ingress import IngressConfig, iter_ingress
from aggflow.runtime.pipelined import run_pipelined

__all__ = [
    "CSV_HEADER",
    "MetricsRow",
    "BenchResult",
    "run_bench",
    "measure_capacity",
    "find_max_sustainable",
    "write_csv",
    "read_csv",
    "percentile",
]

CSV_HEADER = ("second", "injected_rate", "throughput", "p99_latency_ms")

# Small channels keep the backlog behind an overloaded operator short, so
# unthrottled runs drain quickly once the sources stop.
CHANNEL_CAPACITY = 128


@dataclass(frozen=True)
class MetricsRow:
    """Measurements of one elapsed second of a run."""

    second: int
    injected_rate: float
    throughput: float
    p99_latency_ms: float


@dataclass
class BenchResult:
    """Rows of a run plus summary figures.

    Attributes:
        rows: One row per second outside warmup and cooldown.
        mean_throughput: Mean of the rows' throughput.
        p99_latency_ms: 99th percentile over every measured latency in the rows' seconds.
        violations: Seconds whose p99 latency, or source lag, exceeded the cap.
        sustainable: ``violations <= max_violations``.
        ingested: Records handed to the pipeline during the whole run.
        outputs: Tuples delivered during the whole run.
        elapsed: Seconds from start until the pipeline drained.
    """

    cfg: WorkloadConfig
    rows: list[MetricsRow]
    mean_throughput: float
    p99_latency_ms: float
    violations: int
    sustainable: bool
    ingested: int
    outputs: int
    lag_ms: list[float] = field(default_factory=list)
    elapsed: float = 0.0

    def summary(self) -> str:
        c = self.cfg
        return (
            f"op={c.operator} mode={c.mode} rate={c.rate:g} D={c.watermark_period} "
            f"throughput={self.mean_throughput:.1f} p99_ms={self.p99_latency_ms:.1f} "
            f"violations={self.violations} sustainable={self.sustainable}"
        )


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; NaN for no values."""
    if not values:
        return math.nan
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return ordered[rank - 1]


class _Clock:
    """Per-second counters shared between source, operator and sink threads."""

    def __init__(self, seconds: int) -> None:
        self.start = time.perf_counter()
        self.n = seconds + 64
        self.ingested = [[0] * self.n for _ in range(2)]
        self.lag = [0.0] * self.n
        self.comparisons = [0] * self.n
        self.latencies: list[tuple[float, float]] = []
        self.outputs = 0


def _paced_records(
    clock: _Clock, stream: int, streams: int, rate: Optional[float], nominal_rate: float, duration: float,
    tick_s: float, cfg: WorkloadConfig,
) -> Iterator[Tuple]:
    # rate None: inject as fast as possible; event time still follows the
    # nominal rate.
    rng = random.Random(cfg.seed * 1_000_003 + stream)
    per_stream = (rate or nominal_rate) / streams
    ingested = clock.ingested[stream]
    i = 0
    keys = cfg.key_cardinality
    while True:
        scheduled = i / per_stream
        now = time.perf_counter() - clock.start
        if now >= duration or (rate is not None and scheduled >= duration):
            return
        if rate is not None and scheduled > now + 0.0005:
            time.sleep(scheduled - now)
            now = scheduled
        sec = min(int(now), clock.n - 1)
        ingested[sec] += 1
        lag = now - scheduled
        if rate is not None and lag > clock.lag[sec]:
            clock.lag[sec] = lag
        yield Tuple(int(scheduled / tick_s), (i * streams + stream, rng.randrange(keys), rng.random(),
                                              rng.randrange(100)))
        i += 1


def _counted(fns: Functions, clock: _Clock) -> Functions:
    if fns.f_p is None:
        return fns
    f_p = fns.f_p
    counts = clock.comparisons
    start = clock.start
    last = clock.n - 1
    perf = time.perf_counter

    def counted_p(t1: Tuple, t2: Tuple) -> bool:
        s = int(perf() - start)
        counts[s if s < last else last] += 1
        return f_p(t1, t2)

    return replace(fns, f_p=counted_p)


def _contributors(op: str) -> Callable[[Tuple], Iterable[int]]:
    if op == "J":
        # join attributes: (ts1, id1, key, u, v, ts2, id2, key, u, v)
        return lambda t: (t.attrs[1], t.attrs[6])
    if op == "O":
        return lambda t: ()
    return lambda t: (t.attrs[0],)


def run_bench(cfg: WorkloadConfig, *, paced: bool = True) -> BenchResult:
    """Run ``cfg`` in the pipelined runtime and collect per-second metrics.

    With ``paced=False`` records are injected as fast as the pipeline accepts
    them for ``duration`` seconds (capacity measurement); event time still
    advances at ``cfg.rate`` records per second.
    """
    cfg.validate()
    streams = 2 if cfg.operator == "J" else 1
    clock = _Clock(int(math.ceil(cfg.duration)))
    fns = _counted(cfg.functions(), clock)
    graph = build_pipeline(cfg.operator, cfg.mode, fns, cfg.options())
    tick_s = cfg.tick_ms / 1000.0
    d = cfg.watermark_period
    windowed = cfg.mode != "dedicated"
    contributors = _contributors(cfg.operator)
    per_stream = cfg.rate / streams
    icfg = IngressConfig(d, 0, graph.horizon)
    rate = cfg.rate if paced else None
    inputs = {
        name: iter_ingress(_paced_records(clock, k, streams, rate, cfg.rate, cfg.duration, tick_s, cfg), icfg)
        for k, name in enumerate(cfg.ingress_names())
    }
    lock = threading.Lock()

    def on_egress(_: str, el: object, now: float) -> None:
        if type(el) is not Tuple:
            return
        base = 0.0
        for ident in contributors(el):
            base = max(base, (ident // streams) / per_stream)
        if windowed:
            trigger = -(-(el.ts + 1) // d) * d
            base = max(base, trigger * tick_s)
        elapsed = now - clock.start
        with lock:
            clock.outputs += 1
            clock.latencies.append((elapsed, max(0.0, elapsed - base) * 1000.0))

    run_pipelined(graph, inputs, parallelism=cfg.parallelism or None, capacity=CHANNEL_CAPACITY,
                  on_egress=on_egress, timeout=cfg.duration * 10 + 120)
    result = _summarize(cfg, clock, paced)
    result.elapsed = time.perf_counter() - clock.start
    return result


def _summarize(cfg: WorkloadConfig, clock: _Clock, paced: bool) -> BenchResult:
    first = int(math.floor(cfg.warmup))
    last = int(math.ceil(cfg.duration - cfg.cooldown))
    by_second: dict[int, list[float]] = {}
    for elapsed, lat in clock.latencies:
        by_second.setdefault(int(elapsed), []).append(lat)
    rows: list[MetricsRow] = []
    measured: list[float] = []
    violations = 0
    cap = cfg.latency_cap_ms
    injected = cfg.rate if paced else math.nan
    for s in range(first, last):
        lats = by_second.get(s, [])
        measured.extend(lats)
        if cfg.operator == "J":
            throughput = float(clock.comparisons[s])
        else:
            throughput = float(sum(c[s] for c in clock.ingested))
        p99 = percentile(lats, 99)
        rows.append(MetricsRow(s, injected, throughput, p99))
        if (not math.isnan(p99) and p99 > cap) or clock.lag[s] * 1000.0 > cap:
            violations += 1
    mean = sum(r.throughput for r in rows) / len(rows) if rows else math.nan
    return BenchResult(
        cfg=cfg,
        rows=rows,
        mean_throughput=mean,
        p99_latency_ms=percentile(measured, 99),
        violations=violations,
        sustainable=violations <= cfg.max_violations,
        ingested=sum(sum(c) for c in clock.ingested),
        outputs=clock.outputs,
        lag_ms=[clock.lag[s] * 1000.0 for s in range(first, last)],
    )


def measure_capacity(cfg: WorkloadConfig) -> float:
    """Input records per second the pipeline absorbs when injected unthrottled.

    Work still queued when the sources stop counts too: the rate is the
    number of ingested records over the time until the pipeline drained.
    """
    result = run_bench(cfg, paced=False)
    return result.ingested / result.elapsed


def find_max_sustainable(
    cfg: WorkloadConfig,
    rate_grid: Sequence[float],
    *,
    runner: Callable[[WorkloadConfig], BenchResult] = run_bench,
) -> Optional[float]:
    """Largest grid rate whose run stays within the latency cap.

    The grid is scanned upwards and the scan stops at the first rate that is
    not sustainable. Returns ``None`` when even the first rate fails.
    """
    if list(rate_grid) != sorted(rate_grid):
        raise ValueError("rate grid must be ascending")
    best = None
    for rate in rate_grid:
        if not runner(replace(cfg, rate=rate)).sustainable:
            break
        best = rate
    return best


def write_csv(rows: Sequence[MetricsRow], dest: str | Path | TextIO) -> None:
    """Write rows under :data:`CSV_HEADER` to a path or an open text stream."""
    if hasattr(dest, "write"):
        _write_rows(rows, dest)
        return
    with open(dest, "w", newline="") as fh:
        _write_rows(rows, fh)


def _write_rows(rows: Sequence[MetricsRow], fh: TextIO) -> None:
    writer = csv.writer(fh)
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow((r.second, f"{r.injected_rate:g}", f"{r.throughput:g}", f"{r.p99_latency_ms:.3f}"))


def read_csv(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [
            MetricsRow(int(r["second"]), float(r["injected_rate"]), float(r["throughput"]),
                       float(r["p99_latency_ms"]))
            for r in reader
        ]
