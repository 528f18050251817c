"""FlatMap, Filter, Map, Join and a periodic stateful operator built from Aggregates.

Every stage in this module is an :class:`~aggflow.dedicated.Aggregate` (or an
:class:`~aggflow.dedicated.AggregatePlus` for the shortcut variants) configured
with one of the window functions below:

* Embed stages pack all logical outputs of a window into a single tuple
  ``(payload, -1)``.
* Unfold is a two-Aggregate loop that re-emits a payload one element at a
  time. The first Aggregate turns ``(payload, -1)`` into ``(payload, 0)`` and
  ``(payload, i)`` into ``(payload, i + 1)`` while ``i + 1 < len(payload)``;
  every tuple it emits goes both around the loop and to the second Aggregate,
  which emits ``payload[i]``.
* The join wraps each input into ``(from1, from2)`` lists, keys wrapped
  tuples by the join key and matches them inside the original windows.
* The periodic fold carries per-key state around a loop, one window per
  period.

Payload unions deduplicate equal tuples, so compositions only match the
reference operators on duplicate-free input.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Hashable, Iterable, Optional, Sequence

from aggflow.core import (
    ConfigurationError,
    Payload,
    Tuple,
    WindowInstance,
    WindowSpec,
    full_key,
    join_attrs,
)
from aggflow.dedicated import Aggregate, AggregatePlus, FlatMap
from aggflow.loopguard import C2Guard, C3Guard, StateLoopGuard
from aggflow.runtime.graph import LOOP, NodeSpec, OperatorGraph

__all__ = [
    "EMBED_TAG",
    "StatefulOConfig",
    "StateFold",
    "e_flatmap_fO",
    "e_flatmap_plus_fO",
    "ej_wrap_fO",
    "ej_key",
    "ej_match_fO",
    "ej_match_plus_fO",
    "unfold_a1_fO",
    "unfold_a2_fO",
    "o_a1_fO",
    "filter_as_flatmap",
    "map_as_flatmap",
    "add_unfold",
    "build_aggbased_flatmap",
    "build_aggbased_filter",
    "build_aggbased_map",
    "build_aggbased_join",
    "build_aplus_flatmap",
    "build_aplus_filter",
    "build_aplus_map",
    "build_aplus_join",
    "build_stateful_o",
]

EMBED_TAG = -1

FlatMapFn = Callable[[Tuple], Iterable[Sequence[Any]]]
KeyFn = Callable[[Tuple], Hashable]
Predicate = Callable[[Tuple, Tuple], bool]


def _distinct(contents: list) -> list:
    # Set union that keeps first-arrival order, so results stay replayable.
    if len(contents) == 1:
        return contents
    return list(dict.fromkeys(contents))


# -- window functions ------------------------------------------------------


def _embedded_payload(win: WindowInstance, f_fm: FlatMapFn) -> tuple:
    payload: list = []
    for t in _distinct(win.contents):
        payload.extend(tuple(a) for a in f_fm(t))
    return Payload(payload)


def e_flatmap_fO(win: WindowInstance, f_fm: FlatMapFn) -> Optional[tuple]:
    """Embed a FlatMap: pack ``f_fm`` of every distinct tuple into one payload."""
    payload = _embedded_payload(win, f_fm)
    if not payload:
        return None
    return (payload, EMBED_TAG)


def e_flatmap_plus_fO(win: WindowInstance, f_fm: FlatMapFn) -> tuple:
    """The same packing for an Aggregate+ that emits each element directly."""
    return _embedded_payload(win, f_fm)


def ej_wrap_fO(win: WindowInstance, side: int) -> tuple:
    """Wrap the window's distinct tuples as ``(T, ())`` for side 1 or ``((), T)`` for side 2."""
    payload = tuple(_distinct(win.contents))
    return (payload, ()) if side == 1 else ((), payload)


def ej_key(t: Tuple, f_k1: KeyFn, f_k2: KeyFn) -> Hashable:
    """Join key of a wrapped tuple, taken from whichever side it carries."""
    from1, from2 = t.attrs
    if not from2:
        return f_k1(from1[0])
    return f_k2(from2[0])


def _matches(win: WindowInstance, f_p: Predicate) -> list:
    # Streaming nested loop: each arrival is compared with everything stored
    # so far on the other side, as a tuple-at-a-time join would.
    left: list = []
    right: list = []
    found: list = []
    for wrapped in win.contents:
        from1, from2 = wrapped.attrs
        if from1:
            for t1 in from1:
                found.extend(join_attrs(t1, t2) for t2 in right if f_p(t1, t2))
            left.extend(from1)
        else:
            for t2 in from2:
                found.extend(join_attrs(t1, t2) for t1 in left if f_p(t1, t2))
            right.extend(from2)
    return found


def ej_match_fO(win: WindowInstance, f_p: Predicate) -> Optional[tuple]:
    """Match wrapped tuples of both sides; embed the concatenated pairs."""
    found = _matches(win, f_p)
    if not found:
        return None
    return (Payload(found), EMBED_TAG)


def ej_match_plus_fO(win: WindowInstance, f_p: Predicate) -> list:
    """Matching for an Aggregate+, emitting one tuple per matched pair."""
    return _matches(win, f_p)


def unfold_a1_fO(win: WindowInstance, strict: bool = False) -> Optional[tuple]:
    """Advance the payload index of an embedded tuple by one.

    With ``strict`` the loop continues while ``index < len(payload)``, which
    produces a final index equal to ``len(payload)`` that nothing downstream
    can consume. The default stops one step earlier.
    """
    # The window is keyed by the whole tuple, so all its contents are equal
    # and their union is the first one's payload.
    payload, tag = win.contents[0].attrs
    if tag == EMBED_TAG:
        return (payload, 0)
    limit = len(payload) if strict else len(payload) - 1
    if tag < limit:
        return (payload, tag + 1)
    return None


def unfold_a2_fO(win: WindowInstance) -> tuple:
    """Emit the payload element at the tuple's index."""
    payload, tag = win.contents[0].attrs
    return payload[tag]


def filter_as_flatmap(f_c: Callable[[Tuple], bool]) -> FlatMapFn:
    """FlatMap function equivalent to Filter with condition ``f_c``."""

    def f_fm(t: Tuple) -> list:
        return [t.attrs] if f_c(t) else []

    return f_fm


def map_as_flatmap(f_m: Callable[[Tuple], Sequence[Any]]) -> FlatMapFn:
    """FlatMap function equivalent to Map with function ``f_m``."""

    def f_fm(t: Tuple) -> list:
        return [tuple(f_m(t))]

    return f_fm


# -- periodic stateful operator --------------------------------------------


@dataclass(frozen=True)
class StatefulOConfig:
    """User functions of the periodic stateful operator.

    Attributes:
        f_c: Creates a state from the first input tuple.
        f_a: Folds an input tuple into a state.
        f_m: Merges two states.
        f_o: Turns a state into output attributes, or ``None`` for no output.
        period: Emission period ``P`` in ticks.
        f_k: Key function over input tuples.
    """

    f_c: Callable[[Tuple], Any]
    f_a: Callable[[Any, Tuple], Any]
    f_m: Callable[[Any, Any], Any]
    f_o: Callable[[Any], Optional[Sequence[Any]]]
    period: int
    f_k: KeyFn

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ConfigurationError(f"period must be positive, got {self.period}")


class StateFold:
    """Window function of the fold Aggregate; see :func:`o_a1_fO`.

    ``contributions`` counts how many times each input tuple was folded, which
    must be exactly once for every input whose window has fired.
    """

    def __init__(self, cfg: StatefulOConfig, strict: bool = False) -> None:
        self.cfg = cfg
        self.strict = strict
        self.contributions: Counter = Counter()

    def __call__(self, win: WindowInstance) -> Optional[tuple]:
        cfg = self.cfg
        skip = win.l + cfg.period - (1 if self.strict else 0)
        carried: list = []
        fresh: list = []
        for t in win.contents:
            if t.ts == skip:
                continue
            inputs, states = t.attrs
            carried.extend(s for _, s in states)
            fresh.extend(inputs)
        if not carried and not fresh:
            return None
        state = None
        for s in carried:
            state = s if state is None else cfg.f_m(state, s)
        for t in fresh:
            self.contributions[t] += 1
            state = cfg.f_c(t) if state is None else cfg.f_a(state, t)
        return ((), ((win.key, state),))


def o_a1_fO(win: WindowInstance, cfg: StatefulOConfig, strict: bool = False) -> Optional[tuple]:
    """Fold a window of the periodic operator into one state.

    Tuples at the overlap tick ``l + P`` are skipped (they are folded by the
    next window). Carried states are merged first, then fresh inputs are
    folded in arrival order. Returns ``((), ((key, state),))``.
    """
    return StateFold(cfg, strict)(win)


# -- graph builders --------------------------------------------------------


def _payload_partition(t: Tuple) -> Hashable:
    # Every tuple of one payload's loop lands on the same instance, whatever its index.
    return (t.ts, t.attrs[0])


def add_unfold(
    g: OperatorGraph,
    upstream: str,
    *,
    lateness: int,
    guards: bool = True,
    strict: bool = False,
    prefix: str = "X",
) -> str:
    """Append an Unfold loop fed by ``upstream``; return the name of its output node."""
    a1, a2 = f"{prefix}.A1", f"{prefix}.A2"
    part = {0: _payload_partition}
    a1_spec = WindowSpec(1, 1, full_key, lateness)
    a2_spec = WindowSpec(1, 1, full_key, 0)
    g.add_node(NodeSpec(
        a1, partial(Aggregate, a1_spec, partial(unfold_a1_fO, strict=strict), a1),
        "aggregate", "embedded", "embedded", part,
    ))
    g.add_node(NodeSpec(a2, partial(Aggregate, a2_spec, unfold_a2_fO, a2), "aggregate", "embedded", "out", part))
    if guards:
        c2, c3 = f"{prefix}.C2", f"{prefix}.C3"
        g.add_node(NodeSpec(c2, partial(C2Guard, lateness, c2), "c2-guard", "embedded", "embedded", part))
        g.add_node(NodeSpec(c3, partial(C3Guard, c3), "c3-guard", "embedded", "embedded", part))
        g.connect(upstream, c2)
        g.connect(c2, a1)
        g.connect(a1, c2, kind=LOOP)
        g.connect(a1, c3)
        g.connect(c3, a2)
    else:
        g.allow_unguarded_loops = True
        g.connect(upstream, a1)
        g.connect(a1, a1, kind=LOOP)
        g.connect(a1, a2)
    return a2


def build_aggbased_flatmap(
    f_fm: FlatMapFn,
    *,
    lateness: int = 1,
    guards: bool = True,
    strict: bool = False,
    name: str = "agg-flatmap",
) -> OperatorGraph:
    """FlatMap as Embed followed by Unfold.

    ``lateness`` is the allowed lateness of the Unfold loop and must be at
    least the ingress watermark period.
    """
    g = OperatorGraph(name=name, mode="agg", horizon=4)
    spec = WindowSpec(1, 1, full_key, 0)
    g.add_node(NodeSpec("E", partial(Aggregate, spec, partial(e_flatmap_fO, f_fm=f_fm), "E"),
                        "aggregate", "in", "embedded", {0: full_key}))
    g.add_ingress("in", "E", stream_type="in")
    out = add_unfold(g, "E", lateness=lateness, guards=guards, strict=strict)
    g.add_egress("out", out)
    return g.validate()


def build_aggbased_filter(f_c: Callable[[Tuple], bool], **kwargs: Any) -> OperatorGraph:
    kwargs.setdefault("name", "agg-filter")
    return build_aggbased_flatmap(filter_as_flatmap(f_c), **kwargs)


def build_aggbased_map(f_m: Callable[[Tuple], Sequence[Any]], **kwargs: Any) -> OperatorGraph:
    kwargs.setdefault("name", "agg-map")
    return build_aggbased_flatmap(map_as_flatmap(f_m), **kwargs)


def _add_join_front(g: OperatorGraph, wa: int, ws: int, f_k1: KeyFn, f_k2: KeyFn, agg_cls: type, match_fn: Any,
                    out_type: str) -> None:
    wrap = WindowSpec(1, 1, full_key, 0)
    key = partial(ej_key, f_k1=f_k1, f_k2=f_k2)
    g.add_node(NodeSpec("W1", partial(Aggregate, wrap, partial(ej_wrap_fO, side=1), "W1"),
                        "aggregate", "left", "wrapped", {0: full_key}))
    g.add_node(NodeSpec("W2", partial(Aggregate, wrap, partial(ej_wrap_fO, side=2), "W2"),
                        "aggregate", "right", "wrapped", {0: full_key}))
    g.add_node(NodeSpec("J", partial(agg_cls, WindowSpec(wa, ws, key, 0), match_fn, "J"),
                        agg_cls.kind, "wrapped", out_type, {0: key}))
    g.connect("W1", "J")
    g.connect("W2", "J")
    g.add_ingress("in1", "W1", stream_type="left")
    g.add_ingress("in2", "W2", stream_type="right")


def build_aggbased_join(
    wa: int,
    ws: int,
    f_k1: KeyFn,
    f_k2: KeyFn,
    f_p: Predicate,
    *,
    lateness: int = 1,
    guards: bool = True,
    strict: bool = False,
    name: str = "agg-join",
) -> OperatorGraph:
    """Join as two wrapping Aggregates, a matching Aggregate and an Unfold."""
    g = OperatorGraph(name=name, mode="agg", horizon=ws + 4)
    _add_join_front(g, wa, ws, f_k1, f_k2, Aggregate, partial(ej_match_fO, f_p=f_p), "embedded")
    out = add_unfold(g, "J", lateness=lateness, guards=guards, strict=strict)
    g.add_egress("out", out)
    return g.validate()


def build_aplus_flatmap(f_fm: FlatMapFn, *, name: str = "aplus-flatmap", **_: Any) -> OperatorGraph:
    """FlatMap as a single Aggregate+ emitting every payload element directly."""
    g = OperatorGraph(name=name, mode="agg-plus", horizon=2)
    spec = WindowSpec(1, 1, full_key, 0)
    g.add_node(NodeSpec("E", partial(AggregatePlus, spec, partial(e_flatmap_plus_fO, f_fm=f_fm), "E"),
                        "aggregate+", "in", "out", {0: full_key}))
    g.add_ingress("in", "E", stream_type="in")
    g.add_egress("out", "E")
    return g.validate()


def build_aplus_filter(f_c: Callable[[Tuple], bool], **kwargs: Any) -> OperatorGraph:
    kwargs.setdefault("name", "aplus-filter")
    return build_aplus_flatmap(filter_as_flatmap(f_c), **kwargs)


def build_aplus_map(f_m: Callable[[Tuple], Sequence[Any]], **kwargs: Any) -> OperatorGraph:
    kwargs.setdefault("name", "aplus-map")
    return build_aplus_flatmap(map_as_flatmap(f_m), **kwargs)


def build_aplus_join(wa: int, ws: int, f_k1: KeyFn, f_k2: KeyFn, f_p: Predicate, *, name: str = "aplus-join",
                     **_: Any) -> OperatorGraph:
    """Join whose matching Aggregate+ emits each matched pair directly."""
    g = OperatorGraph(name=name, mode="agg-plus", horizon=ws + 2)
    _add_join_front(g, wa, ws, f_k1, f_k2, AggregatePlus, partial(ej_match_plus_fO, f_p=f_p), "out")
    g.add_egress("out", "J")
    return g.validate()


def _wrap_input(t: Tuple) -> list:
    return [((t,), ())]


def _emit_state(cfg: StatefulOConfig, t: Tuple) -> list:
    (_, state), = t.attrs[1]
    result = cfg.f_o(state)
    return [] if result is None else [tuple(result)]


def _fold_key(t: Tuple, f_k: KeyFn) -> Hashable:
    inputs, states = t.attrs
    return f_k(inputs[0]) if inputs else states[0][0]


def build_stateful_o(
    cfg: StatefulOConfig,
    *,
    lateness: Optional[int] = None,
    wm_period: int = 1,
    strict: bool = False,
    name: str = "agg-o",
) -> OperatorGraph:
    """Periodic stateful operator: wrap, fold Aggregate with a state loop, emit.

    The fold Aggregate uses windows of advance ``P`` and size ``P + 1`` so that
    the state produced at the end of one window lands in the next one.
    ``lateness`` defaults to ``wm_period + 1``.
    """
    p = cfg.period
    lateness = wm_period + 1 if lateness is None else lateness
    key = partial(_fold_key, f_k=cfg.f_k)
    spec = WindowSpec(p, p + 1, key, lateness)
    g = OperatorGraph(name=name, mode="agg", horizon=p + 2)
    g.add_node(NodeSpec("FM1", partial(FlatMap, _wrap_input), "flatmap", "in", "fold"))
    g.add_node(NodeSpec("G", partial(StateLoopGuard, p, cfg.f_k, "G"), "state-guard", "fold", "fold", {0: key}))

    def fold_aggregate() -> Aggregate:
        return Aggregate(spec, StateFold(cfg, strict), "A1")

    g.add_node(NodeSpec("A1", fold_aggregate, "aggregate", "fold", "fold", {0: key}))
    g.add_node(NodeSpec("FM2", partial(FlatMap, partial(_emit_state, cfg)), "flatmap", "fold", "out"))
    g.connect("FM1", "G")
    g.connect("G", "A1")
    g.connect("A1", "G", kind=LOOP)
    g.connect("A1", "FM2")
    g.add_ingress("in", "FM1", stream_type="in")
    g.add_egress("out", "FM2")
    return g.validate()
