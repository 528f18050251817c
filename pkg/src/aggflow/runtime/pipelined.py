"""Threaded execution: one thread per operator instance, bounded FIFO channels."""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import replace
from typing import Any, Callable, Iterable, Mapping, Optional

from aggflow.core import Tuple, Watermark, WatermarkRegression
from aggflow.runtime.deterministic import RunResult, SchedulerStall
from aggflow.runtime.graph import OperatorGraph
from aggflow.runtime.plan import PhysicalPlan, Routing, parallelize

__all__ = ["run_pipelined"]

EgressHook = Callable[[str, Any, float], None]


class _Channel:
    __slots__ = ("queue", "loop", "port", "last", "label")

    def __init__(self, port: int, loop: bool, label: str) -> None:
        self.queue: deque = deque()
        self.loop = loop
        self.port = port
        self.last = 0
        self.label = label


class _Inbox:
    """All input channels of one instance behind a single condition variable.

    Normal channels block their producer when full; loop channels never do,
    so the Unfold cycle cannot deadlock under backpressure.
    """

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.cond = threading.Condition()
        self.channels: list[_Channel] = []
        self.count = 0
        self.closed = False
        self._next = 0

    def add_channel(self, port: int, loop: bool, label: str) -> _Channel:
        ch = _Channel(port, loop, label)
        self.channels.append(ch)
        return ch

    def put(self, ch: _Channel, el: Any) -> None:
        with self.cond:
            while not ch.loop and len(ch.queue) >= self.capacity and not self.closed:
                self.cond.wait()
            ch.queue.append(el)
            self.count += 1
            self.cond.notify_all()

    def get(self) -> Optional[tuple[_Channel, Any]]:
        with self.cond:
            while self.count == 0 and not self.closed:
                self.cond.wait()
            if self.count == 0:
                return None
            chosen = None
            for ch in self.channels:
                if ch.loop and ch.queue:
                    chosen = ch
                    break
            if chosen is None:
                n = len(self.channels)
                for k in range(n):
                    ch = self.channels[(self._next + k) % n]
                    if ch.queue:
                        chosen = ch
                        self._next = (self._next + k + 1) % n
                        break
            el = chosen.queue.popleft()
            self.count -= 1
            self.cond.notify_all()
            return chosen, el

    def close(self) -> None:
        with self.cond:
            self.closed = True
            self.cond.notify_all()


class _Tracker:
    """Counts elements handed to an inbox and not yet fully processed."""

    def __init__(self) -> None:
        self.cond = threading.Condition()
        self.in_flight = 0
        self.error: Optional[BaseException] = None

    def add(self, n: int = 1) -> None:
        with self.cond:
            self.in_flight += n

    def done(self) -> None:
        with self.cond:
            self.in_flight -= 1
            if self.in_flight == 0:
                self.cond.notify_all()

    def fail(self, exc: BaseException) -> None:
        with self.cond:
            if self.error is None:
                self.error = exc
            self.cond.notify_all()


class _Sink:
    def __init__(self, name: str, n: int, hook: Optional[EgressHook]) -> None:
        self.name = name
        self.out: list = []
        self.last = [0] * n
        self.merged = 0
        self.lock = threading.Lock()
        self.hook = hook

    def deliver(self, el: Any, src_index: int) -> None:
        now = time.perf_counter()
        with self.lock:
            if type(el) is Watermark:
                if el.ts < self.last[src_index]:
                    raise WatermarkRegression(f"egress watermark {el.ts} after {self.last[src_index]}")
                self.last[src_index] = el.ts
                merged = min(self.last)
                if merged <= self.merged:
                    return
                self.merged = merged
                el = Watermark(merged)
            self.out.append(el)
        if self.hook is not None:
            self.hook(self.name, el, now)


class _Worker:
    def __init__(self, name: str, index: int, op: Any, inbox: _Inbox, tracker: _Tracker) -> None:
        self.name = name
        self.index = index
        self.op = op
        self.inbox = inbox
        self.tracker = tracker
        self.watermark = 0
        self.wm_channels: list[_Channel] = []
        self.routes: list[tuple[Routing, list[tuple[_Inbox, _Channel]]]] = []
        self.sinks: list[_Sink] = []
        self.thread = threading.Thread(target=self._run, name=f"{name}[{index}]", daemon=True)

    def send(self, el: Any) -> None:
        tracker = self.tracker
        if type(el) is Watermark:
            for r, targets in self.routes:
                if r.loop:
                    continue
                for inbox, ch in targets:
                    tracker.add()
                    inbox.put(ch, el)
        else:
            for r, targets in self.routes:
                inbox, ch = targets[r.target(el, self.index)] if len(targets) > 1 else targets[0]
                tracker.add()
                inbox.put(ch, el)
        for sink in self.sinks:
            sink.deliver(el, self.index)

    def _run(self) -> None:
        op = self.op
        try:
            while True:
                item = self.inbox.get()
                if item is None:
                    return
                ch, el = item
                try:
                    if type(el) is Watermark:
                        if el.ts < ch.last:
                            raise WatermarkRegression(
                                f"{self.name}[{self.index}] got watermark {el.ts} after {ch.last} from {ch.label}"
                            )
                        ch.last = el.ts
                        merged = min(c.last for c in self.wm_channels)
                        outs = ()
                        if merged > self.watermark:
                            self.watermark = merged
                            outs = op.on_watermark(merged)
                    else:
                        outs = op.on_tuple(el, ch.port)
                    for out in outs:
                        self.send(out)
                finally:
                    self.tracker.done()
        except BaseException as exc:  # surfaced by run_pipelined
            self.tracker.fail(exc)


def run_pipelined(
    graph: OperatorGraph | PhysicalPlan,
    inputs: Mapping[str, Iterable[Any]],
    *,
    parallelism: Optional[Mapping[str, int] | int] = None,
    capacity: int = 1024,
    on_egress: Optional[EgressHook] = None,
    timeout: Optional[float] = None,
) -> RunResult:
    """Execute a graph with one thread per operator instance.

    Args:
        graph: A validated graph, or a plan from :func:`parallelize`.
        inputs: Per ingress binding, its element sequence. Each ingress is
            driven by its own thread, so a generator may pace itself (sleep)
            to inject at a wall-clock rate.
        parallelism: Instance counts when ``graph`` is not already a plan.
        capacity: Bound of every normal channel. Loop channels are unbounded.
        on_egress: Called as ``hook(egress_name, element, perf_counter_time)``
            for every delivered element.
        timeout: Seconds to wait for quiescence before raising
            :class:`SchedulerStall`.

    The output multiset equals that of :func:`run_deterministic`; the order
    of tuples may differ.
    """
    plan = graph if isinstance(graph, PhysicalPlan) else parallelize(graph, parallelism)
    g = plan.graph
    missing = set(g.ingress) - set(inputs)
    if missing:
        raise ValueError(f"no input for ingress {sorted(missing)}")
    tracker = _Tracker()
    order = g.topological_order()
    workers: dict[str, list[_Worker]] = {}
    for name in order:
        workers[name] = [
            _Worker(name, i, g.nodes[name].factory(), _Inbox(capacity), tracker)
            for i in range(plan.parallelism[name])
        ]
    for name in order:
        for w in workers[name]:
            for r in plan.routes[name]:
                r = replace(r, _rr={})
                targets = []
                for dst in workers[r.dst]:
                    ch = dst.inbox.add_channel(r.port, r.loop, f"{name}[{w.index}]")
                    if not r.loop:
                        dst.wm_channels.append(ch)
                    targets.append((dst.inbox, ch))
                w.routes.append((r, targets))
    sinks: dict[str, _Sink] = {}
    for egress, node in g.egress.items():
        sink = sinks[egress] = _Sink(egress, len(workers[node]), on_egress)
        for w in workers[node]:
            w.sinks.append(sink)

    def drive(ing_name: str, routing: Routing, targets: list[tuple[_Inbox, _Channel]], elements: Iterable) -> None:
        try:
            for el in elements:
                if tracker.error is not None:
                    return
                if type(el) is Watermark:
                    for inbox, ch in targets:
                        tracker.add()
                        inbox.put(ch, el)
                else:
                    inbox, ch = targets[routing.target(el, 0)] if len(targets) > 1 else targets[0]
                    tracker.add()
                    inbox.put(ch, el)
        except BaseException as exc:
            tracker.fail(exc)
        finally:
            tracker.done()

    drivers = []
    for ing_name, routing in plan.ingress_routes.items():
        targets = []
        for dst in workers[routing.dst]:
            ch = dst.inbox.add_channel(routing.port, False, f"ingress:{ing_name}")
            dst.wm_channels.append(ch)
            targets.append((dst.inbox, ch))
        tracker.add()  # held by the driver until its input is exhausted
        drivers.append(threading.Thread(
            target=drive, args=(ing_name, replace(routing, _rr={}), targets, inputs[ing_name]),
            name=f"ingress:{ing_name}", daemon=True,
        ))
    all_workers = [w for name in order for w in workers[name]]
    for w in all_workers:
        w.thread.start()
    for d in drivers:
        d.start()
    deadline = None if timeout is None else time.monotonic() + timeout
    with tracker.cond:
        while tracker.in_flight > 0 and tracker.error is None:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                break
            tracker.cond.wait(remaining)
        error = tracker.error
        stalled = tracker.in_flight > 0 and error is None
    for w in all_workers:
        w.inbox.close()
    for w in all_workers:
        w.thread.join(timeout=5)
    if error is not None:
        raise error
    if stalled:
        raise SchedulerStall(-1, {
            f"{w.name}[{w.index}]": w.inbox.count for w in all_workers if w.inbox.count
        })
    return RunResult(
        outputs={name: sink.out for name, sink in sinks.items()},
        instances={name: [w.op for w in ws] for name, ws in workers.items()},
    )
