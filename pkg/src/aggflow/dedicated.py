"""Reference operators: Filter, Map, FlatMap, Aggregate, Aggregate+ and Join.

Every operator exposes the same two entry points used by the runtime:
``on_tuple(t, port)`` and ``on_watermark(w)``. Both return the list of stream
elements to emit. ``on_watermark`` is called with the operator's merged input
watermark, once per increase; merging across input edges is the runtime's job.
Standalone users can drive a single-input operator with :meth:`Operator.step`.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Iterable, Optional, Sequence

from aggflow.core import (
    ConfigurationError,
    Tuple,
    Watermark,
    WatermarkRegression,
    WindowInstance,
    WindowSpec,
    encode_key,
    join_attrs,
    window_starts,
)

__all__ = [
    "UserFns",
    "Operator",
    "Filter",
    "Map",
    "FlatMap",
    "Aggregate",
    "AggregatePlus",
    "Join",
    "PeriodicFold",
    "filter_step",
    "map_step",
    "flatmap_step",
]

WindowFn = Callable[[WindowInstance], Optional[Sequence[Any]]]
MultiWindowFn = Callable[[WindowInstance], Iterable[Sequence[Any]]]


@dataclass(frozen=True)
class UserFns:
    """Bundle of user functions, any subset of which an operator may use.

    Attributes:
        f_c: Filter condition.
        f_m: Map function returning an attribute tuple.
        f_fm: FlatMap function returning a list of attribute tuples.
        f_o: Window function returning an attribute tuple or ``None``.
        f_p: Join predicate.
        f_k: Key function.
    """

    f_c: Optional[Callable[[Tuple], bool]] = None
    f_m: Optional[Callable[[Tuple], Sequence[Any]]] = None
    f_fm: Optional[Callable[[Tuple], Iterable[Sequence[Any]]]] = None
    f_o: Optional[WindowFn] = None
    f_p: Optional[Callable[[Tuple, Tuple], bool]] = None
    f_k: Optional[Callable[[Tuple], Hashable]] = None


def filter_step(t: Tuple, f_c: Callable[[Tuple], bool]) -> list[Tuple]:
    """Forward ``t`` unchanged iff ``f_c(t)`` holds."""
    return [t] if f_c(t) else []


def map_step(t: Tuple, f_m: Callable[[Tuple], Sequence[Any]]) -> list[Tuple]:
    """Emit one tuple with ``t``'s timestamp and attributes ``f_m(t)``."""
    return [Tuple(t.ts, tuple(f_m(t)))]


def flatmap_step(t: Tuple, f_fm: Callable[[Tuple], Iterable[Sequence[Any]]]) -> list[Tuple]:
    """Emit one tuple per element of ``f_fm(t)``, all stamped with ``t.ts``."""
    ts = t.ts
    return [Tuple(ts, tuple(a)) for a in f_fm(t)]


class Operator:
    """Base class providing the single-input ``step`` convenience."""

    kind = "operator"

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        raise NotImplementedError

    def on_watermark(self, w: int) -> list:
        raise NotImplementedError

    def step(self, el: Tuple | Watermark, port: int = 0) -> list:
        """Process one element arriving on the operator's only input edge."""
        if type(el) is Watermark:
            current = getattr(self, "watermark", 0)
            if el.ts < current:
                raise WatermarkRegression(f"watermark {el.ts} after {current}")
            if el.ts == current:
                return []
            return self.on_watermark(el.ts)
        return self.on_tuple(el, port)


class _Stateless(Operator):
    def __init__(self) -> None:
        self.watermark = 0

    def on_watermark(self, w: int) -> list:
        self.watermark = w
        return [Watermark(w)]


class Filter(_Stateless):
    kind = "filter"

    def __init__(self, f_c: Callable[[Tuple], bool]) -> None:
        super().__init__()
        self.f_c = f_c

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        return [t] if self.f_c(t) else []


class Map(_Stateless):
    kind = "map"

    def __init__(self, f_m: Callable[[Tuple], Sequence[Any]]) -> None:
        super().__init__()
        self.f_m = f_m

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        return [Tuple(t.ts, tuple(self.f_m(t)))]


class FlatMap(_Stateless):
    kind = "flatmap"

    def __init__(self, f_fm: Callable[[Tuple], Iterable[Sequence[Any]]]) -> None:
        super().__init__()
        self.f_fm = f_fm

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        ts = t.ts
        return [Tuple(ts, tuple(a)) for a in self.f_fm(t)]


class Aggregate(Operator):
    """Keyed, windowed aggregation that emits at most one tuple per firing.

    Windows fire when the watermark passes their right boundary. After a
    firing the contents are discarded; a late tuple admitted by the allowed
    lateness starts fresh contents and re-fires its window immediately.

    Counters (useful when checking loop invariants):
        late_seen: tuples that arrived with ``ts`` below the watermark.
        late_dropped: tuples admitted into no window at all.
        window_rejections: (tuple, window) pairs refused because the window
            was already purged.
        observation_violations: firings whose output timestamp was smaller
            than a contributing tuple's timestamp. Always zero unless the
            window calculus is broken.
    """

    kind = "aggregate"

    def __init__(self, spec: WindowSpec, f_o: WindowFn, name: str = "") -> None:
        self.spec = spec
        self.f_o = f_o
        self.name = name
        self.watermark = 0
        self._key_fn = spec.key
        self._wa = spec.wa
        self._ws = spec.ws
        self._lateness = spec.lateness
        # left boundary -> key -> window
        self._windows: dict[int, dict[Hashable, WindowInstance]] = {}
        self._fire_heap: list[int] = []
        self._fire_pending: set[int] = set()
        self._purge_heap: list[int] = []
        self.late_seen = 0
        self.late_dropped = 0
        self.window_rejections = 0
        self.firings = 0
        self.observation_violations = 0
        self.dropped: list[Tuple] = []

    # -- state inspection -------------------------------------------------

    def live_windows(self) -> list[WindowInstance]:
        """All stored window instances, ascending by left boundary."""
        return [w for l in sorted(self._windows) for w in self._windows[l].values()]

    # -- processing -------------------------------------------------------

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        key = self._key_fn(t)
        ws = self._ws
        w = self.watermark
        if t.ts < w:
            self.late_seen += 1
        out: list = []
        admitted = False
        for l in window_starts(t.ts, self._wa, ws):
            closed = l + ws <= w
            if closed and w >= l + ws + self._lateness:
                self.window_rejections += 1
                continue
            admitted = True
            bucket = self._windows.get(l)
            if bucket is None:
                bucket = self._windows[l] = {}
                heapq.heappush(self._purge_heap, l)
            win = bucket.get(key)
            if win is None:
                win = bucket[key] = WindowInstance(l, [], False, key)
                if not closed and l not in self._fire_pending:
                    self._fire_pending.add(l)
                    heapq.heappush(self._fire_heap, l)
            win.contents.append(t)
            if closed:
                self._fire(win, out)
        if not admitted:
            self.late_dropped += 1
            self.dropped.append(t)
        return out

    def on_watermark(self, w: int) -> list:
        if w < self.watermark:
            raise WatermarkRegression(f"{self.name or self.kind}: watermark {w} after {self.watermark}")
        out: list = []
        if w == self.watermark:
            return out
        self.watermark = w
        ws = self._ws
        heap = self._fire_heap
        while heap and heap[0] + ws <= w:
            l = heapq.heappop(heap)
            self._fire_pending.discard(l)
            bucket = self._windows.get(l)
            if not bucket:
                continue
            wins = [win for win in bucket.values() if not win.fired]
            if len(wins) > 1:
                wins.sort(key=lambda win: encode_key(win.key))
            for win in wins:
                self._fire(win, out)
        purge_at = ws + self._lateness
        heap = self._purge_heap
        while heap and heap[0] + purge_at <= w:
            self._windows.pop(heapq.heappop(heap), None)
        out.append(Watermark(w))
        return out

    def _fire(self, win: WindowInstance, out: list) -> None:
        ts = win.l + self._ws - 1
        for t in win.contents:
            if t.ts > ts:
                self.observation_violations += 1
        self.firings += 1
        result = self.f_o(win)
        win.contents = []
        win.fired = True
        self._emit(ts, result, out)

    def _emit(self, ts: int, result: Any, out: list) -> None:
        if result is not None:
            out.append(Tuple(ts, tuple(result)))


class AggregatePlus(Aggregate):
    """Aggregate whose window function returns any number of attribute tuples."""

    kind = "aggregate+"

    def __init__(self, spec: WindowSpec, f_o: MultiWindowFn, name: str = "") -> None:
        super().__init__(spec, f_o, name)

    def _emit(self, ts: int, result: Any, out: list) -> None:
        if result:
            out.extend(Tuple(ts, tuple(a)) for a in result)


class Join(Operator):
    """Windowed equi-join matching tuples eagerly as they arrive.

    Two tuples match in every window instance of the shared spec that contains
    both, provided their keys are equal and ``f_p`` holds. Each match in window
    ``l`` emits ``<l + ws - 1, t1 ++ t2>``. Late tuples are never processed
    (allowed lateness is zero). Inputs are ports 1 and 2.
    """

    kind = "join"

    def __init__(
        self,
        wa: int,
        ws: int,
        f_k1: Callable[[Tuple], Hashable],
        f_k2: Callable[[Tuple], Hashable],
        f_p: Callable[[Tuple, Tuple], bool],
        name: str = "",
    ) -> None:
        WindowSpec(wa, ws)  # validates the shape
        self.wa = wa
        self.ws = ws
        self.f_k1 = f_k1
        self.f_k2 = f_k2
        self.f_p = f_p
        self.name = name
        self.watermark = 0
        self._stores: tuple[dict, dict] = ({}, {})
        self._purge_heap: list[int] = []
        self._boundaries: set[int] = set()
        self.comparisons = 0
        self.late_dropped = 0

    def on_tuple(self, t: Tuple, port: int = 1) -> list:
        if port == 1:
            key = self.f_k1(t)
            own, other = self._stores
        elif port == 2:
            key = self.f_k2(t)
            other, own = self._stores
        else:
            raise ConfigurationError(f"join input port must be 1 or 2, got {port}")
        ws = self.ws
        w = self.watermark
        f_p = self.f_p
        out: list = []
        stored = False
        for l in window_starts(t.ts, self.wa, ws):
            if l + ws <= w:
                continue
            stored = True
            slot = (key, l)
            partners = other.get(slot)
            if partners:
                ts = l + ws - 1
                self.comparisons += len(partners)
                if port == 1:
                    out.extend(Tuple(ts, join_attrs(t, p)) for p in partners if f_p(t, p))
                else:
                    out.extend(Tuple(ts, join_attrs(p, t)) for p in partners if f_p(p, t))
            mine = own.get(slot)
            if mine is None:
                own[slot] = [t]
                if l not in self._boundaries:
                    self._boundaries.add(l)
                    heapq.heappush(self._purge_heap, l)
            else:
                mine.append(t)
        if not stored:
            self.late_dropped += 1
        return out

    def on_watermark(self, w: int) -> list:
        if w < self.watermark:
            raise WatermarkRegression(f"{self.name or self.kind}: watermark {w} after {self.watermark}")
        if w == self.watermark:
            return []
        self.watermark = w
        heap = self._purge_heap
        ws = self.ws
        if heap and heap[0] + ws <= w:
            closed = set()
            while heap and heap[0] + ws <= w:
                l = heapq.heappop(heap)
                self._boundaries.discard(l)
                closed.add(l)
            for store in self._stores:
                for slot in [s for s in store if s[1] in closed]:
                    del store[slot]
        return [Watermark(w)]


class PeriodicFold(Operator):
    """Reference implementation of the periodic stateful operator O.

    Per key, the operator folds its inputs into a state tuple and, for every
    multiple ``s`` of the period from the key's first window onwards, emits
    ``f_o(state of inputs with ts < s)`` at timestamp ``s`` once the watermark
    passes ``s``. Inputs are folded window by window (windows of length ``P``),
    in arrival order within a window.
    """

    kind = "periodic-fold"

    def __init__(self, cfg: Any, name: str = "") -> None:
        self.cfg = cfg
        self.name = name
        self.watermark = 0
        self._period = cfg.period
        # key -> [next emission timestamp, state or None, {window start: [inputs]}, emitted yet]
        self._keys: dict[Hashable, list] = {}

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        p = self._period
        key = self.cfg.f_k(t)
        entry = self._keys.get(key)
        start = (t.ts // p) * p
        if entry is None:
            entry = self._keys[key] = [start + p, None, {}, False]
        elif start + p < entry[0]:
            if entry[3]:
                raise ConfigurationError(f"input at {t.ts} arrived after its period was emitted")
            entry[0] = start + p
        entry[2].setdefault(start, []).append(t)
        return []

    def on_watermark(self, w: int) -> list:
        self.watermark = w
        p = self._period
        cfg = self.cfg
        due: list[tuple[int, bytes, Tuple]] = []
        for key, entry in self._keys.items():
            while entry[0] + 1 <= w:
                s = entry[0]
                state = entry[1]
                for t in entry[2].pop(s - p, ()):
                    state = cfg.f_c(t) if state is None else cfg.f_a(state, t)
                entry[1] = state
                entry[0] = s + p
                entry[3] = True
                result = cfg.f_o(state)
                if result is not None:
                    due.append((s, encode_key(key), Tuple(s, tuple(result))))
        due.sort(key=lambda d: (d[0], d[1]))
        out: list = [d[2] for d in due]
        out.append(Watermark(w))
        return out
