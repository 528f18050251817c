"""Single-threaded, replayable execution of a physical plan."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional

from aggflow.core import InvariantViolation, Tuple, Watermark, WatermarkRegression
from aggflow.runtime.graph import OperatorGraph
from aggflow.runtime.plan import PhysicalPlan, Routing, parallelize

__all__ = ["RunResult", "SchedulerStall", "run_deterministic", "LOOP_FIRST", "LOOP_LAST", "RANDOM"]

LOOP_FIRST = "loop-first"
LOOP_LAST = "loop-last"
RANDOM = "random"
_POLICIES = (LOOP_FIRST, LOOP_LAST, RANDOM)


class SchedulerStall(InvariantViolation):
    """The step budget ran out before the graph quiesced.

    ``in_flight`` maps every instance with queued input to the number of
    queued elements and the first few of them.
    """

    def __init__(self, steps: int, in_flight: dict[str, Any]) -> None:
        super().__init__(f"no quiescence after {steps} steps; in flight: {in_flight}")
        self.steps = steps
        self.in_flight = in_flight


@dataclass
class RunResult:
    """What a run produced.

    Attributes:
        outputs: Per egress binding, the delivered elements in order. Tuples
            appear as emitted; watermarks appear whenever the minimum over the
            egress node's instances increases.
        instances: Per node, the operator object of each physical instance,
            for inspecting counters and guard state after the run.
        steps: Number of elements processed by operators.
    """

    outputs: dict[str, list]
    instances: dict[str, list[Any]]
    steps: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    def tuples(self, egress: str = "out") -> list[Tuple]:
        return [e for e in self.outputs[egress] if type(e) is Tuple]

    def watermarks(self, egress: str = "out") -> list[int]:
        return [e.ts for e in self.outputs[egress] if type(e) is Watermark]


class _Channel:
    __slots__ = ("queue", "last", "loop", "port", "label")

    def __init__(self, port: int, loop: bool, label: str) -> None:
        self.queue: deque = deque()
        self.last = 0
        self.loop = loop
        self.port = port
        self.label = label


class _Sink:
    """Collects one egress binding, merging watermarks across instances."""

    def __init__(self, n: int) -> None:
        self.out: list = []
        self.last = [0] * n
        self.merged = 0

    def deliver(self, el: Any, src_index: int) -> None:
        if type(el) is Watermark:
            if el.ts < self.last[src_index]:
                raise WatermarkRegression(f"egress watermark {el.ts} after {self.last[src_index]}")
            self.last[src_index] = el.ts
            merged = min(self.last)
            if merged > self.merged:
                self.merged = merged
                self.out.append(Watermark(merged))
        else:
            self.out.append(el)


class _Instance:
    __slots__ = ("name", "index", "op", "order", "inputs", "wm_inputs", "pending", "watermark", "routes", "sinks")

    def __init__(self, name: str, index: int, op: Any, order: int) -> None:
        self.name = name
        self.index = index
        self.op = op
        self.order = order
        self.inputs: list[_Channel] = []
        self.wm_inputs: list[_Channel] = []
        self.pending = 0
        self.watermark = 0
        self.routes: list[tuple[Routing, list[tuple["_Instance", _Channel]]]] = []
        self.sinks: list[_Sink] = []


class _Engine:
    def __init__(self, plan: PhysicalPlan, policy: str, seed: int, budget: int) -> None:
        if policy not in _POLICIES:
            raise ValueError(f"unknown scheduling policy {policy!r}")
        self.policy = policy
        self.rng = random.Random(seed)
        self.budget = budget
        self.steps = 0
        graph = plan.graph
        order = graph.topological_order()
        self.by_node: dict[str, list[_Instance]] = {}
        self.ordered: list[_Instance] = []
        for name in order:
            insts = [
                _Instance(name, i, graph.nodes[name].factory(), len(self.ordered) + i)
                for i in range(plan.parallelism[name])
            ]
            self.by_node[name] = insts
            self.ordered.extend(insts)
        for name in order:
            for inst in self.by_node[name]:
                for r in plan.routes[name]:
                    r = replace(r, _rr={})
                    targets = []
                    for dst in self.by_node[r.dst]:
                        ch = _Channel(r.port, r.loop, f"{name}[{inst.index}]")
                        dst.inputs.append(ch)
                        if not r.loop:
                            dst.wm_inputs.append(ch)
                        targets.append((dst, ch))
                    inst.routes.append((r, targets))
        self.sources: list[tuple[str, Routing, list[tuple[_Instance, _Channel]]]] = []
        for ing_name, r in plan.ingress_routes.items():
            targets = []
            for dst in self.by_node[r.dst]:
                ch = _Channel(r.port, False, f"ingress:{ing_name}")
                dst.inputs.append(ch)
                dst.wm_inputs.append(ch)
                targets.append((dst, ch))
            self.sources.append((ing_name, r, targets))
        self.sinks: dict[str, _Sink] = {}
        for egress, node in graph.egress.items():
            sink = _Sink(len(self.by_node[node]))
            self.sinks[egress] = sink
            for inst in self.by_node[node]:
                inst.sinks.append(sink)
        self.cursor = 0

    # -- delivery ---------------------------------------------------------

    def _send(self, routes: list, el: Any, src_index: int, from_order: int) -> None:
        if type(el) is Watermark:
            for r, targets in routes:
                if r.loop:
                    continue
                for dst, ch in targets:
                    ch.queue.append(el)
                    dst.pending += 1
                    if dst.order < self.cursor:
                        self.cursor = dst.order
            return
        for r, targets in routes:
            dst, ch = targets[r.target(el, src_index)] if len(targets) > 1 else targets[0]
            ch.queue.append(el)
            dst.pending += 1
            if dst.order < self.cursor:
                self.cursor = dst.order

    def inject(self, source_index: int, el: Any) -> None:
        _, r, targets = self.sources[source_index]
        self._send([(r, targets)], el, 0, -1)
        self.cursor = 0

    def _process(self, inst: _Instance, ch: _Channel) -> None:
        el = ch.queue.popleft()
        inst.pending -= 1
        self.steps += 1
        op = inst.op
        if type(el) is Watermark:
            if el.ts < ch.last:
                raise WatermarkRegression(f"{inst.name}[{inst.index}] got watermark {el.ts} after {ch.last} from {ch.label}")
            ch.last = el.ts
            merged = min(c.last for c in inst.wm_inputs)
            if merged <= inst.watermark:
                return
            inst.watermark = merged
            outs = op.on_watermark(merged)
        else:
            outs = op.on_tuple(el, ch.port)
        if not outs:
            return
        routes = inst.routes
        for out in outs:
            if routes:
                self._send(routes, out, inst.index, inst.order)
            for sink in inst.sinks:
                sink.deliver(out, inst.index)

    # -- scheduling -------------------------------------------------------

    def _pick_channel(self, inst: _Instance, loops_allowed: bool = True) -> Optional[_Channel]:
        policy = self.policy
        if policy == RANDOM:
            ready = [c for c in inst.inputs if c.queue]
            return self.rng.choice(ready) if ready else None
        first_loop = None
        first_other = None
        for c in inst.inputs:
            if c.queue:
                if c.loop:
                    if first_loop is None:
                        first_loop = c
                elif first_other is None:
                    first_other = c
        if policy == LOOP_FIRST:
            return first_loop or first_other
        if first_other is not None:
            return first_other
        return first_loop if loops_allowed else None

    def run_to_quiescence(self) -> None:
        ordered = self.ordered
        budget = self.budget
        if self.policy == RANDOM:
            while True:
                ready = [inst for inst in ordered if inst.pending]
                if not ready:
                    return
                inst = self.rng.choice(ready)
                self._process(inst, self._pick_channel(inst))
                if self.steps > budget:
                    raise SchedulerStall(self.steps, self.dump())
        if self.policy == LOOP_LAST:
            # Run everything that is not loop traffic first; touch loop
            # channels only when nothing else is left anywhere.
            while True:
                progressed = False
                for inst in ordered:
                    while inst.pending:
                        ch = self._pick_channel(inst, loops_allowed=False)
                        if ch is None:
                            break
                        self._process(inst, ch)
                        progressed = True
                        if self.steps > budget:
                            raise SchedulerStall(self.steps, self.dump())
                if progressed:
                    continue
                waiting = [inst for inst in ordered if inst.pending]
                if not waiting:
                    return
                inst = waiting[0]
                self._process(inst, self._pick_channel(inst))
        # Loop-first: always run the earliest instance (in topological order)
        # that has input, so loop traffic flows back before its producer moves on.
        self.cursor = 0
        n = len(ordered)
        while self.cursor < n:
            inst = ordered[self.cursor]
            if not inst.pending:
                self.cursor += 1
                continue
            self._process(inst, self._pick_channel(inst))
            if self.steps > budget:
                raise SchedulerStall(self.steps, self.dump())

    def dump(self) -> dict[str, Any]:
        return {
            f"{inst.name}[{inst.index}]": {
                c.label: (len(c.queue), list(c.queue)[:3]) for c in inst.inputs if c.queue
            }
            for inst in self.ordered
            if inst.pending
        }


def run_deterministic(
    graph: OperatorGraph | PhysicalPlan,
    inputs: Mapping[str, Iterable[Any]],
    *,
    parallelism: Optional[Mapping[str, int] | int] = None,
    policy: str = LOOP_FIRST,
    ingress_batch: Optional[int] = 1,
    seed: int = 0,
    step_budget: int = 50_000_000,
) -> RunResult:
    """Execute a graph single-threaded until every queue is empty.

    Args:
        graph: A validated graph, or a plan from :func:`parallelize`.
        inputs: Per ingress binding, its element sequence (tuples and
            watermarks, e.g. from :func:`~aggflow.runtime.ingress.ingress_stream`).
        parallelism: Instance counts when ``graph`` is not already a plan.
        policy: ``loop-first`` (default) always runs the earliest pending
            instance in topological order and prefers loop input, so loop
            traffic is drained before its producer sees the next watermark.
            ``loop-last`` starves loop edges as long as anything else can run.
            ``random`` picks instances and channels with a seeded RNG; it is
            used to exercise guards under arbitrary interleavings.
        ingress_batch: Elements taken from each ingress (round-robin) before
            running to quiescence. ``None`` injects everything up front.
        seed: Seed for the ``random`` policy.
        step_budget: Processing steps allowed before the run is aborted with
            :class:`SchedulerStall`.

    The same inputs and options always produce the same output sequence.
    """
    plan = graph if isinstance(graph, PhysicalPlan) else parallelize(graph, parallelism)
    missing = set(plan.graph.ingress) - set(inputs)
    if missing:
        raise ValueError(f"no input for ingress {sorted(missing)}")
    engine = _Engine(plan, policy, seed, step_budget)
    iters = [iter(inputs[name]) for name, _, _ in engine.sources]
    live = list(range(len(iters)))
    while live:
        for si in list(live):
            it = iters[si]
            taken = 0
            while ingress_batch is None or taken < ingress_batch:
                el = next(it, None)
                if el is None:
                    live.remove(si)
                    break
                engine.inject(si, el)
                taken += 1
        engine.run_to_quiescence()
    engine.run_to_quiescence()
    return RunResult(
        outputs={name: sink.out for name, sink in engine.sinks.items()},
        instances={name: [inst.op for inst in insts] for name, insts in engine.by_node.items()},
        steps=engine.steps,
    )
