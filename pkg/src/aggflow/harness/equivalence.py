"""Oracle-equivalence runs: the same input through every mode of one operator."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

from aggflow.aggbased import StatefulOConfig, StateFold
from aggflow.core import Tuple
from aggflow.harness.workload import WorkloadConfig, generate_workload
from aggflow.pipelines import build_pipeline
from aggflow.runtime.deterministic import LOOP_FIRST, RunResult, run_deterministic
from aggflow.runtime.graph import LOOP, OperatorGraph
from aggflow.runtime.ingress import IngressConfig, IngressStats, ingress_stream

__all__ = [
    "LoopStats",
    "EquivalenceReport",
    "loop_stats",
    "fold_oracle",
    "prepare_inputs",
    "run_equivalence",
    "random_config",
    "modes_for",
]

DIFF_CAP = 10


@dataclass
class LoopStats:
    """Loop and window invariants observed in one run.

    Attributes:
        loop_drops: Tuples entering a loop producer that no window accepted.
        late_after_guard: Tuples that reached a loop output consumer below its
            watermark.
        open_successors: Successor-count entries left in guards after the run.
        observation_violations: Firings that emitted a timestamp smaller than
            one of their inputs.
        max_contributions: Largest number of times one input was folded by
            the periodic operator (1 when every input is folded exactly once).
    """

    loop_drops: int = 0
    late_after_guard: int = 0
    open_successors: int = 0
    observation_violations: int = 0
    max_contributions: int = 0

    @property
    def clean(self) -> bool:
        return (
            self.loop_drops == 0
            and self.late_after_guard == 0
            and self.open_successors == 0
            and self.observation_violations == 0
            and self.max_contributions <= 1
        )


def loop_stats(graph: OperatorGraph, result: RunResult) -> LoopStats:
    stats = LoopStats()
    producers = {e.src for e in graph.edges if e.kind == LOOP}
    consumers = set()
    for e in graph.edges:
        if e.kind == LOOP:
            continue
        if e.src in producers and graph.nodes[e.dst].kind != "c3-guard":
            consumers.add(e.dst)
        if graph.nodes[e.src].kind == "c3-guard":
            consumers.add(e.dst)
    for name, ops in result.instances.items():
        for op in ops:
            stats.observation_violations += getattr(op, "observation_violations", 0)
            if name in producers:
                stats.loop_drops += op.late_dropped
            if name in consumers:
                stats.late_after_guard += getattr(op, "late_seen", 0)
            succ = getattr(op, "succ", None)
            if succ is not None:
                stats.open_successors += len(succ)
            if isinstance(getattr(op, "f_o", None), StateFold) and op.f_o.contributions:
                stats.max_contributions = max(stats.max_contributions, max(op.f_o.contributions.values()))
    return stats


def fold_oracle(records: Sequence[Tuple], cfg: StatefulOConfig, flush: int) -> Counter:
    """Brute-force outputs of the periodic operator.

    Per key, from the period holding the key's earliest input, emit
    ``f_o(fold of inputs with ts < s)`` at every multiple ``s`` of the period
    with ``s < flush``, folding inputs in timestamp order.
    """
    p = cfg.period
    by_key: dict[Any, list[Tuple]] = {}
    for t in records:
        by_key.setdefault(cfg.f_k(t), []).append(t)
    out: Counter = Counter()
    for items in by_key.values():
        items = sorted(items, key=lambda t: t.ts)
        s = (items[0].ts // p) * p + p
        i = 0
        state = None
        while s < flush:
            while i < len(items) and items[i].ts < s:
                state = cfg.f_c(items[i]) if state is None else cfg.f_a(state, items[i])
                i += 1
            result = cfg.f_o(state)
            if result is not None:
                out[Tuple(s, tuple(result))] += 1
            s += p
    return out


def prepare_inputs(
    records: Mapping[str, Sequence[Tuple]],
    graphs: Sequence[OperatorGraph],
    cfg: WorkloadConfig,
    flush_at: Optional[int] = None,
) -> tuple[dict[str, list], int, IngressStats]:
    """Interleave watermarks into every stream, all flushed to one common watermark.

    The flush defaults to the largest timestamp plus the largest horizon of
    ``graphs``, which fires every window of every graph.
    """
    horizon = max(g.horizon for g in graphs)
    max_ts = max((t.ts for stream in records.values() for t in stream), default=0)
    flush = max_ts + horizon if flush_at is None else flush_at
    icfg = IngressConfig(cfg.watermark_period, cfg.disorder, horizon)
    stats = IngressStats()
    inputs = {name: ingress_stream(stream, icfg, flush_at=flush, stats=stats) for name, stream in records.items()}
    return inputs, flush, stats


def modes_for(operator: str) -> tuple[str, ...]:
    return ("dedicated", "agg") if operator == "O" else ("dedicated", "agg", "agg-plus")


@dataclass
class EquivalenceReport:
    """Outcome of one equivalence run.

    ``outputs`` holds each mode's output multiset; ``missing`` and ``extra``
    list (capped) tuples a mode lacks or adds relative to the reference.
    """

    cfg: WorkloadConfig
    passed: bool
    counts: dict[str, int]
    stats: dict[str, LoopStats]
    missing: dict[str, list[Tuple]] = field(default_factory=dict)
    extra: dict[str, list[Tuple]] = field(default_factory=dict)
    ingress_dropped: int = 0
    flush: int = 0
    steps: int = 0

    def summary(self) -> str:
        c = self.cfg
        head = (
            f"{'PASS' if self.passed else 'FAIL'} op={c.operator} seed={c.seed} records={c.records} "
            f"wa={c.wa} ws={c.ws} D={c.watermark_period} keys={c.key_cardinality} "
            + " ".join(f"{m}={n}" for m, n in self.counts.items())
        )
        lines = [head]
        for mode, st in self.stats.items():
            if not st.clean:
                lines.append(f"  {mode}: {st}")
        for mode in self.missing:
            if self.missing[mode] or self.extra[mode]:
                lines.append(f"  {mode}: missing {self.missing[mode]}")
                lines.append(f"  {mode}: extra {self.extra[mode]}")
        return "\n".join(lines)


def run_equivalence(
    cfg: WorkloadConfig,
    modes: Optional[Sequence[str]] = None,
    *,
    records: Optional[Mapping[str, Sequence[Tuple]]] = None,
    policy: str = LOOP_FIRST,
    ingress_batch: Optional[int] = 1,
    parallelism: Optional[Mapping[str, int] | int] = None,
    flush_at: Optional[int] = None,
) -> EquivalenceReport:
    """Run one input through several modes and compare output multisets.

    The first mode is the reference (``dedicated`` by default). For operator
    O the brute-force fold oracle is checked as well. A run passes iff every
    multiset matches the reference and every loop invariant held.
    """
    modes = tuple(modes or modes_for(cfg.operator))
    fns = cfg.functions()
    graphs = {m: build_pipeline(cfg.operator, m, fns, replace(cfg, mode=m).options()) for m in modes}
    if records is None:
        records = generate_workload(cfg)
    inputs, flush, istats = prepare_inputs(records, list(graphs.values()), cfg, flush_at)
    outputs: dict[str, Counter] = {}
    stats: dict[str, LoopStats] = {}
    steps = 0
    for mode, g in graphs.items():
        result = run_deterministic(
            g, inputs, policy=policy, ingress_batch=ingress_batch, parallelism=parallelism, seed=cfg.seed
        )
        steps += result.steps
        outputs[mode] = Counter(result.tuples())
        stats[mode] = loop_stats(g, result)
    reference = outputs[modes[0]]
    if cfg.operator == "O":
        admitted = [e for stream in inputs.values() for e in stream if type(e) is Tuple]
        reference_oracle = fold_oracle(admitted, fns.fold, flush)
        outputs["oracle"] = reference_oracle
    missing: dict[str, list[Tuple]] = {}
    extra: dict[str, list[Tuple]] = {}
    passed = True
    for mode, out in outputs.items():
        if mode == modes[0]:
            continue
        lost = reference - out
        added = out - reference
        missing[mode] = sorted(lost.elements())[:DIFF_CAP]
        extra[mode] = sorted(added.elements())[:DIFF_CAP]
        if lost or added:
            passed = False
    if any(not st.clean for st in stats.values()):
        passed = False
    return EquivalenceReport(
        cfg=cfg,
        passed=passed,
        counts={m: sum(o.values()) for m, o in outputs.items()},
        stats=stats,
        missing=missing,
        extra=extra,
        ingress_dropped=istats.dropped_late,
        flush=flush,
        steps=steps,
    )


def random_config(rng: random.Random, operator: str, *, max_records: int = 2000) -> WorkloadConfig:
    """A randomized equivalence configuration for ``operator``.

    Window shapes and watermark periods are drawn from [1, 8] and [1, 10],
    key cardinality from [1, 16], and record counts log-uniformly up to
    ``max_records`` (so small and large inputs are both common).
    """
    ws = rng.randint(1, 8)
    wa = rng.randint(1, ws)
    d = rng.randint(1, 10)
    size = int(round(max_records ** rng.random())) if rng.random() < 0.97 else rng.randint(0, 3)
    selectivity = {
        "F": rng.random(),
        "M": 1.0,
        "FM": rng.choice([0.0, 0.3, 1.0, 1.5, 3.0, rng.uniform(0, 6)]),
        "J": rng.choice([0.05, 0.2, 0.5, 1.0]),
        "O": 1.0,
    }[operator]
    return WorkloadConfig(
        operator=operator,
        mode="agg",
        selectivity=selectivity,
        wa=wa,
        ws=ws,
        period=rng.randint(2, 8),
        fold=rng.choice(["sum", "max", "count"]),
        key_cardinality=rng.randint(1, 16),
        watermark_period=d,
        disorder=rng.randint(0, d) if rng.random() < 0.3 else 0,
        records=size // 2 if operator == "J" else size,
        density=rng.choice([0.3, 1.0, 2.0, 4.0]),
        seed=rng.getrandbits(63),
    ).validate()
