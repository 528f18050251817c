"""Event-time model shared by every operator.

Timestamps are non-negative integer ticks and one tick is the smallest
event-time increment. A stream carries two kinds of elements, :class:`Tuple`
and :class:`Watermark`, and every stateful operator groups tuples into
time-based window instances described by a :class:`WindowSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Mapping, NamedTuple, Optional, Union

__all__ = [
    "ConfigurationError",
    "InvariantViolation",
    "WatermarkRegression",
    "Tuple",
    "Watermark",
    "Payload",
    "StreamElement",
    "WindowSpec",
    "WindowInstance",
    "GLOBAL_KEY",
    "global_key",
    "full_key",
    "attr_key",
    "encode_key",
    "assign_windows",
    "window_starts",
    "output_timestamp",
    "merge_watermark",
    "is_late",
    "lateness_admissible",
    "join_attrs",
]


class ConfigurationError(ValueError):
    """Raised when a window, graph or workload is configured inconsistently."""


class InvariantViolation(RuntimeError):
    """Raised when a runtime invariant is broken; the run cannot continue."""


class WatermarkRegression(ConfigurationError):
    """Raised when a watermark smaller than its predecessor arrives on an edge."""


class Tuple(NamedTuple):
    """An event-timestamped record.

    ``attrs`` is an ordered tuple of attribute values. Values may be nested
    tuples, which is how embedded payloads (lists of attribute tuples or of
    whole :class:`Tuple` objects) are carried. Two tuples are equal iff their
    timestamps and all attributes are equal.
    """

    ts: int
    attrs: tuple = ()


class Payload(tuple):
    """An embedded payload: a plain tuple that computes its hash and repr once.

    Loop operators key windows by whole tuples, so an embedded payload is
    hashed (and, for firing order, encoded) once per loop step. Caching keeps
    each step constant-time instead of linear in the payload length. A
    payload compares, hashes and prints exactly like the equal plain tuple.
    """

    def __hash__(self) -> int:
        h = self.__dict__.get("_hash")
        if h is None:
            h = self.__dict__["_hash"] = tuple.__hash__(self)
        return h

    def __repr__(self) -> str:
        r = self.__dict__.get("_repr")
        if r is None:
            r = self.__dict__["_repr"] = tuple.__repr__(self)
        return r


class Watermark(NamedTuple):
    """A promise that no later tuple on the same edge has ``ts`` below this."""

    ts: int


StreamElement = Union[Tuple, Watermark]

KeyFn = Callable[[Tuple], Hashable]

GLOBAL_KEY = b""


def global_key(t: Tuple) -> bytes:
    """Key function for an empty key-attribute set: one key for everything."""
    return GLOBAL_KEY


def full_key(t: Tuple) -> Tuple:
    """Key function selecting the whole tuple type (timestamp and attributes)."""
    return t


def attr_key(*positions: int) -> KeyFn:
    """Build a key function selecting the given attribute positions."""
    if not positions:
        return global_key
    if len(positions) == 1:
        (pos,) = positions

        def key_one(t: Tuple) -> Hashable:
            return t.attrs[pos]

        return key_one

    def key_many(t: Tuple) -> Hashable:
        attrs = t.attrs
        return tuple(attrs[p] for p in positions)

    return key_many


def encode_key(key: Hashable) -> bytes:
    """Return the canonical byte encoding of a key value.

    Key functions return plain hashable values so that hot paths can use them
    directly as dictionary keys. The byte form is derived on demand wherever an
    ordering or a process-independent hash is needed (firing order, physical
    partitioning). Values of one stream are homogeneous, so ``repr`` is a
    faithful encoding.
    """
    if isinstance(key, bytes):
        return key
    return repr(key).encode("utf-8")


@dataclass(frozen=True)
class WindowSpec:
    """Parameters of a time-based window: advance, size, key and lateness.

    Attributes:
        wa: Window advance in ticks.
        ws: Window size in ticks. ``wa == ws`` gives tumbling windows and
            ``wa < ws`` sliding ones; ``wa > ws`` (jumping) is rejected.
        key_fn: Key extraction function. ``None`` means the global key.
        lateness: Allowed lateness ``L`` in ticks.
    """

    wa: int
    ws: int
    key_fn: Optional[KeyFn] = None
    lateness: int = 0

    def __post_init__(self) -> None:
        if self.wa <= 0 or self.ws <= 0:
            raise ConfigurationError(f"window advance and size must be positive, got wa={self.wa} ws={self.ws}")
        if self.wa > self.ws:
            raise ConfigurationError(f"jumping windows are not supported (wa={self.wa} > ws={self.ws})")
        if self.lateness < 0:
            raise ConfigurationError(f"lateness must be non-negative, got {self.lateness}")

    @property
    def key(self) -> KeyFn:
        return self.key_fn if self.key_fn is not None else global_key


@dataclass
class WindowInstance:
    """One live window instance of a key.

    Attributes:
        l: Inclusive left boundary.
        contents: Tuples in arrival order. Cleared after every firing.
        fired: Whether the window function has run at least once.
        key: The key value the instance belongs to.
    """

    l: int
    contents: list = field(default_factory=list)
    fired: bool = False
    key: Any = None


def window_starts(ts: int, wa: int, ws: int) -> range:
    """Left boundaries of all windows of advance ``wa`` and size ``ws`` holding ``ts``."""
    # l = i * wa with l <= ts < l + ws, i.e. ceil((ts - ws + 1) / wa) <= i <= ts // wa
    lo = -((ws - 1 - ts) // wa)
    if lo < 0:
        lo = 0
    return range(lo * wa, (ts // wa) * wa + 1, wa)


def assign_windows(ts: int, spec: WindowSpec) -> list[int]:
    """Return the ascending left boundaries of every window instance containing ``ts``.

    >>> assign_windows(7, WindowSpec(2, 6))
    [2, 4, 6]
    """
    if ts < 0:
        raise ValueError(f"timestamps are non-negative, got {ts}")
    return list(window_starts(ts, spec.wa, spec.ws))


def output_timestamp(l: int, ws: int) -> int:
    """Timestamp of a tuple produced by the window starting at ``l``."""
    return l + ws - 1


def merge_watermark(latest_per_input: Mapping[Any, Optional[int]]) -> int:
    """Merge the latest watermark of each input edge into the operator watermark.

    Edges that have not delivered a watermark yet map to ``None`` (or 0) and
    hold the result at 0.
    """
    if not latest_per_input:
        raise ValueError("an operator needs at least one input edge")
    return min(0 if w is None else w for w in latest_per_input.values())


def is_late(ts: int, w: int) -> bool:
    """True iff a tuple with timestamp ``ts`` is late for an operator at watermark ``w``."""
    return ts < w


def lateness_admissible(l: int, ws: int, lateness: int, w: int) -> bool:
    """True iff the window starting at ``l`` still accepts tuples at watermark ``w``.

    A window stays alive until the watermark reaches its right boundary plus the
    allowed lateness; from then on it is purged.
    """
    return w < l + ws + lateness


def join_attrs(t1: Tuple, t2: Tuple) -> tuple:
    """Attributes of a join result: ``t1`` then ``t2``, each led by its timestamp."""
    return (t1.ts, *t1.attrs, t2.ts, *t2.attrs)
