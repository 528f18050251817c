"""The selectivity x cost x operator experiment grid, run in every mode."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from aggflow.harness.bench import BenchResult, measure_capacity, run_bench, write_csv
from aggflow.harness.workload import WorkloadConfig

__all__ = ["SweepCell", "SWEEP_CELLS", "SweepEntry", "SweepReport", "run_sweep", "SUMMARY_HEADER"]

SWEEP_MODES = ("dedicated", "agg", "agg-plus")
LOAD_FACTOR = 0.25

SUMMARY_HEADER = (
    "cell", "operator", "selectivity", "cost", "mode", "watermark_period", "capacity", "capacity_ratio",
    "rate", "throughput", "p99_latency_ms",
)


@dataclass(frozen=True)
class SweepCell:
    """One experiment: an operator at a selectivity and cost level."""

    name: str
    operator: str
    selectivity: float
    cost: int


def _cells() -> tuple[SweepCell, ...]:
    # FM selectivity is outputs per input; J selectivity is matches per comparison.
    levels = {
        "FM": (("l", 0.2), ("a", 1.0), ("h", 3.0)),
        "J": (("l", 1e-4), ("a", 1e-3), ("h", 3e-3)),
    }
    costs = (("l", 0), ("h", 200))
    cells = []
    for op, sels in levels.items():
        suffix = "f" if op == "FM" else "j"
        for cname, cost in costs:
            for sname, sel in sels:
                cells.append(SweepCell(f"{sname}{cname}{suffix}", op, sel, cost))
    return tuple(cells)


SWEEP_CELLS = _cells()


@dataclass
class SweepEntry:
    cell: SweepCell
    mode: str
    capacity: float
    capacity_ratio: float
    bench: BenchResult


@dataclass
class SweepReport:
    """Every (cell, mode) entry plus the informational trend checks."""

    entries: list[SweepEntry]
    latency_order_cells: int
    fm_high_selectivity_order: Optional[bool]

    def entry(self, cell: str, mode: str) -> SweepEntry:
        for e in self.entries:
            if e.cell.name == cell and e.mode == mode:
                return e
        raise KeyError((cell, mode))

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            lines.append(
                f"{e.cell.name:4s} {e.mode:9s} capacity={e.capacity:10.1f} ratio={e.capacity_ratio:5.2f} "
                f"rate={e.bench.cfg.rate:9.1f} p99_ms={e.bench.p99_latency_ms:8.2f}"
            )
        cells = len({e.cell.name for e in self.entries})
        lines.append(f"latency order D <= A+ <= A in {self.latency_order_cells}/{cells} cells")
        if self.fm_high_selectivity_order is not None:
            lines.append(f"FM high selectivity: A ratio <= A+ ratio: {self.fm_high_selectivity_order}")
        return "\n".join(lines)


def _cell_config(base: WorkloadConfig, cell: SweepCell) -> WorkloadConfig:
    cfg = replace(base, operator=cell.operator, selectivity=cell.selectivity, cost=cell.cost, function=None)
    if cell.operator == "J":
        # All tuples share one key so every pair in a window is compared.
        cfg = replace(cfg, key_cardinality=1)
    return cfg.validate()


def _nan_le(a: float, b: float) -> bool:
    if math.isnan(a):
        return True
    return not math.isnan(b) and a <= b


def run_sweep(
    base: WorkloadConfig,
    out_dir: str | Path,
    *,
    cells: Sequence[SweepCell] = SWEEP_CELLS,
    modes: Sequence[str] = SWEEP_MODES,
    progress: Optional[Callable[[str], None]] = None,
) -> SweepReport:
    """Run every cell in every mode and write one CSV per run plus ``summary.csv``.

    For each cell, the capacity of every mode is measured first (unthrottled
    injection of ``base.rate * base.duration`` records). Each mode then runs
    paced at a quarter of the smallest capacity, so latencies of all modes are
    compared at one rate every mode sustains.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries: list[SweepEntry] = []
    ordered = 0
    fm_high: Optional[bool] = None
    for cell in cells:
        cfg = _cell_config(base, cell)
        caps = {m: measure_capacity(replace(cfg, mode=m)) for m in modes}
        rate = max(1.0, LOAD_FACTOR * min(caps.values()))
        reference = caps.get("dedicated", math.nan)
        lat: dict[str, float] = {}
        ratio: dict[str, float] = {}
        for m in modes:
            result = run_bench(replace(cfg, mode=m, rate=rate))
            write_csv(result.rows, out / f"{cell.name}-{m}.csv")
            ratio[m] = caps[m] / reference if reference else math.nan
            entries.append(SweepEntry(cell, m, caps[m], ratio[m], result))
            lat[m] = result.p99_latency_ms
            if progress is not None:
                progress(f"{cell.name} {m} capacity={caps[m]:.1f} p99_ms={result.p99_latency_ms:.2f}")
        if {"dedicated", "agg", "agg-plus"} <= set(modes):
            if _nan_le(lat["dedicated"], lat["agg-plus"]) and _nan_le(lat["agg-plus"], lat["agg"]):
                ordered += 1
            if cell.operator == "FM" and cell.selectivity > 1 and cell.cost == 0:
                fm_high = ratio["agg"] <= ratio["agg-plus"]
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for e in entries:
            writer.writerow((
                e.cell.name, e.cell.operator, f"{e.cell.selectivity:g}", e.cell.cost, e.mode,
                base.watermark_period, f"{e.capacity:.1f}", f"{e.capacity_ratio:.3f}",
                f"{e.bench.cfg.rate:.1f}", f"{e.bench.mean_throughput:.1f}", f"{e.bench.p99_latency_ms:.3f}",
            ))
    return SweepReport(entries, ordered, fm_high)
