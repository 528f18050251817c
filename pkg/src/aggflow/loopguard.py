"""Watermark guards for the two loop shapes used by the compositions.

A guard is an operator placed on a loop-adjacent stream. It forwards every
tuple unchanged and only decides *which watermarks* to forward and when:

* :class:`C2Guard` sits in front of the Unfold loop's first Aggregate and
  holds watermarks back while loop tuples of an embedded payload are still in
  flight, so none of them is ever rejected as too late.
* :class:`C3Guard` sits after that Aggregate and holds watermarks back until
  every successor of a payload has been emitted, so the consumer never sees a
  loop tuple older than its watermark.
* :class:`StateLoopGuard` plays the first role for the periodic fold loop,
  where each key always has exactly one state tuple in flight.

Setting the ``aggflow.guard`` logger to DEBUG (or ``AGGFLOW_DEBUG=1``) traces
every state transition as a structured log line.
"""

from __future__ import annotations

import heapq
import logging
import math
import os
from collections import deque
from typing import Callable, Hashable

from aggflow.core import InvariantViolation, Tuple, Watermark
from aggflow.dedicated import Operator

__all__ = ["C2Guard", "C3Guard", "StateLoopGuard", "INFINITY"]

logger = logging.getLogger("aggflow.guard")
if os.environ.get("AGGFLOW_DEBUG"):
    logger.setLevel(logging.DEBUG)

INFINITY = math.inf


class _SuccessorCounts:
    """Ordered map timestamp -> pending successor count, without zero entries."""

    def __init__(self) -> None:
        self.counts: dict[int, int] = {}
        self._heap: list[int] = []

    def __bool__(self) -> bool:
        return bool(self.counts)

    def __len__(self) -> int:
        return len(self.counts)

    def add(self, ts: int, n: int) -> None:
        if n <= 0:
            return
        if ts in self.counts:
            self.counts[ts] += n
        else:
            self.counts[ts] = n
            heapq.heappush(self._heap, ts)

    def decrement(self, ts: int, owner: str) -> None:
        n = self.counts.get(ts)
        if n is None:
            raise InvariantViolation(f"{owner}: successor count underflow at ts={ts}")
        if n == 1:
            del self.counts[ts]
        else:
            self.counts[ts] = n - 1

    def first_key(self) -> int:
        heap = self._heap
        while heap[0] not in self.counts:
            heapq.heappop(heap)
        return heap[0]


class C2Guard(Operator):
    """Holds back watermarks on the stream feeding the Unfold loop.

    The bound ``B`` is the earliest timestamp with pending loop tuples plus the
    allowed lateness of the guarded Aggregate: forwarding any watermark above
    it could let that Aggregate purge the window a loop tuple still targets.

    Attributes:
        bound: Current bound ``B`` (infinite when nothing is pending).
        pending_w: Watermarks received above the bound, oldest first.
        last_forwarded: Largest watermark forwarded so far.
    """

    kind = "c2-guard"

    def __init__(self, lateness: int, name: str = "c2") -> None:
        self.lateness = lateness
        self.name = name
        self.watermark = 0
        self.succ = _SuccessorCounts()
        self.bound = INFINITY
        self.pending_w: deque[int] = deque()
        self.last_forwarded = 0
        # Embed tuples whose first loop tuple has not come back yet. Equal
        # Embed tuples share one window of the guarded Aggregate and are
        # unfolded once, so they are counted once.
        self._open: set[Tuple] = set()

    @property
    def succ_counts(self) -> dict[int, int]:
        return dict(sorted(self.succ.counts.items()))

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        payload, tag = t.attrs
        if tag == -1:
            if t not in self._open:
                self._open.add(t)
                self.succ.add(t.ts, len(payload))
        else:
            if tag == 0:
                self._open.discard(Tuple(t.ts, (payload, -1)))
            self.succ.decrement(t.ts, self.name)
        self.bound = self.succ.first_key() + self.lateness if self.succ else INFINITY
        out: list = [t]
        # Forward the latest queued watermark within the bound; drop older ones.
        latest = None
        pending = self.pending_w
        while pending and pending[0] <= self.bound:
            latest = pending.popleft()
        if latest is not None:
            self._forward(latest, out)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "guard=%s event=tuple ts=%d tag=%d bound=%s succ=%s pending=%s",
                self.name, t.ts, tag, self.bound, self.succ_counts, list(pending),
            )
        return out

    def on_watermark(self, w: int) -> list:
        self.watermark = w
        out: list = []
        if w <= self.bound:
            self.pending_w.clear()
            self._forward(w, out)
        else:
            self.pending_w.append(w)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "guard=%s event=watermark w=%d bound=%s forwarded=%d pending=%s",
                self.name, w, self.bound, self.last_forwarded, list(self.pending_w),
            )
        return out

    def _forward(self, w: int, out: list) -> None:
        if w > self.last_forwarded:
            self.last_forwarded = w
            out.append(Watermark(w))


class C3Guard(Operator):
    """Holds back watermarks on the Unfold loop's output until all successors left.

    A tuple with index 0 announces ``|payload| - 1`` further tuples with the
    same timestamp. While any are pending, only ``firstKey - 1`` may be
    forwarded. Once nothing is pending, the guard forwards the larger of the
    tuple's timestamp and the latest watermark it had to hold back.
    """

    kind = "c3-guard"

    def __init__(self, name: str = "c3") -> None:
        self.name = name
        self.watermark = 0
        self.succ = _SuccessorCounts()
        self.last_w = 0

    @property
    def succ_counts(self) -> dict[int, int]:
        return dict(sorted(self.succ.counts.items()))

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        payload, tag = t.attrs
        if tag == 0:
            self.succ.add(t.ts, len(payload) - 1)
        else:
            self.succ.decrement(t.ts, self.name)
        out: list = [t]
        if self.succ:
            self._forward(self.succ.first_key() - 1, out)
        else:
            self._forward(max(t.ts, self.watermark), out)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "guard=%s event=tuple ts=%d tag=%d succ=%s last_w=%d",
                self.name, t.ts, tag, self.succ_counts, self.last_w,
            )
        return out

    def on_watermark(self, w: int) -> list:
        self.watermark = w
        out: list = []
        if self.succ:
            self._forward(self.succ.first_key() - 1, out)
        else:
            self._forward(w, out)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "guard=%s event=watermark w=%d succ=%s last_w=%d",
                self.name, w, self.succ_counts, self.last_w,
            )
        return out

    def _forward(self, w: int, out: list) -> None:
        if w > self.last_w:
            self.last_w = w
            out.append(Watermark(w))


class StateLoopGuard(Operator):
    """Holds back watermarks in front of the periodic fold loop.

    Every active key has exactly one state tuple in flight, due at timestamp
    ``a_k``. The window that must absorb it closes at ``a_k + period + 1``, so
    the guard never forwards a watermark above ``min_k(a_k) + period``. Rather
    than queueing held watermarks it forwards ``min(latest, bound)``, which
    keeps the loop moving whatever the ingress watermark period is.

    Input tuples carry ``(inputs, states)`` lists; a state entry is a
    ``(key, state)`` pair.
    """

    kind = "state-guard"

    def __init__(self, period: int, f_k: Callable[[Tuple], Hashable], name: str = "state-guard") -> None:
        self.period = period
        self.f_k = f_k
        self.name = name
        self.watermark = 0
        self.awaited: dict[Hashable, int] = {}
        self.last_forwarded = 0

    @property
    def bound(self) -> float:
        if not self.awaited:
            return INFINITY
        return min(self.awaited.values()) + self.period

    def on_tuple(self, t: Tuple, port: int = 0) -> list:
        inputs, states = t.attrs
        p = self.period
        if inputs:
            key = self.f_k(inputs[0])
            first = (t.ts // p) * p + p
            # A slightly disordered input may open an earlier window than the
            # key's first one, as long as that window has not fired yet.
            if first < self.awaited.get(key, first + 1):
                self.awaited[key] = first
        else:
            key = states[0][0]
            expected = self.awaited.get(key)
            if expected != t.ts:
                raise InvariantViolation(f"{self.name}: state for key {key!r} at {t.ts}, expected {expected}")
            self.awaited[key] = t.ts + p
        out: list = [t]
        self._forward(out)
        return out

    def on_watermark(self, w: int) -> list:
        self.watermark = w
        out: list = []
        self._forward(out)
        return out

    def _forward(self, out: list) -> None:
        w = min(self.watermark, self.bound)
        if w > self.last_forwarded:
            self.last_forwarded = int(w)
            out.append(Watermark(int(w)))
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "guard=%s latest=%d bound=%s forwarded=%d", self.name, self.watermark, self.bound, self.last_forwarded
            )
