"""Single-operator pipelines in each execution mode.

``dedicated`` graphs hold one reference operator; ``agg`` graphs are the
Aggregate-only compositions with guarded loops; ``agg-plus`` graphs use the
multi-output Aggregate and need no loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Optional

from aggflow import aggbased
from aggflow.aggbased import StatefulOConfig
from aggflow.core import ConfigurationError, Tuple
from aggflow.dedicated import Filter, FlatMap, Join, Map, PeriodicFold
from aggflow.registry import Functions
from aggflow.runtime.graph import NodeSpec, OperatorGraph

__all__ = [
    "OPERATORS",
    "MODES",
    "PipelineOptions",
    "build_dedicated_filter",
    "build_dedicated_map",
    "build_dedicated_flatmap",
    "build_dedicated_join",
    "build_dedicated_stateful_o",
    "build_pipeline",
]

OPERATORS = ("F", "M", "FM", "J", "O")
MODES = ("dedicated", "agg", "agg-plus")


def _single(name: str, factory: Callable[[], Any], kind: str) -> OperatorGraph:
    g = OperatorGraph(name=name, mode="dedicated", horizon=1)
    g.add_node(NodeSpec("op", factory, kind, "in", "out"))
    g.add_ingress("in", "op", stream_type="in")
    g.add_egress("out", "op")
    return g.validate()


def build_dedicated_filter(f_c: Callable[[Tuple], bool]) -> OperatorGraph:
    return _single("filter", partial(Filter, f_c), "filter")


def build_dedicated_map(f_m: Callable[[Tuple], Any]) -> OperatorGraph:
    return _single("map", partial(Map, f_m), "map")


def build_dedicated_flatmap(f_fm: Callable[[Tuple], Any]) -> OperatorGraph:
    return _single("flatmap", partial(FlatMap, f_fm), "flatmap")


def build_dedicated_join(wa: int, ws: int, f_k1: Callable, f_k2: Callable, f_p: Callable) -> OperatorGraph:
    g = OperatorGraph(name="join", mode="dedicated", horizon=ws + 1)
    g.add_node(NodeSpec("op", partial(Join, wa, ws, f_k1, f_k2, f_p, "op"), "join", None, "out",
                        {1: f_k1, 2: f_k2}))
    g.add_ingress("in1", "op", port=1, stream_type="left")
    g.add_ingress("in2", "op", port=2, stream_type="right")
    g.add_egress("out", "op")
    return g.validate()


def build_dedicated_stateful_o(cfg: StatefulOConfig) -> OperatorGraph:
    g = OperatorGraph(name="periodic-fold", mode="dedicated", horizon=cfg.period + 2)
    g.add_node(NodeSpec("op", partial(PeriodicFold, cfg, "op"), "periodic-fold", "in", "out", {0: cfg.f_k}))
    g.add_ingress("in", "op", stream_type="in")
    g.add_egress("out", "op")
    return g.validate()


@dataclass(frozen=True)
class PipelineOptions:
    """Shape parameters shared by every mode.

    Attributes:
        wa, ws: Join window advance and size.
        wm_period: Ingress watermark period ``D``; loop lateness derives from it.
        guards: Install loop guards (disable only for fault injection).
        strict: Use the literal loop-bound and skip-tick variants.
    """

    wa: int = 4
    ws: int = 4
    wm_period: int = 1
    guards: bool = True
    strict: bool = False


def build_pipeline(op: str, mode: str, fns: Functions, opts: Optional[PipelineOptions] = None) -> OperatorGraph:
    """Build the graph computing ``op`` in ``mode`` with the given functions."""
    opts = opts or PipelineOptions()
    if op not in OPERATORS:
        raise ConfigurationError(f"unknown operator {op!r}; choose from {OPERATORS}")
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; choose from {MODES}")
    loop = {"lateness": opts.wm_period, "guards": opts.guards, "strict": opts.strict}
    if op == "O":
        if mode == "dedicated":
            return build_dedicated_stateful_o(fns.fold)
        if mode == "agg-plus":
            raise ConfigurationError("operator O has no agg-plus composition")
        return aggbased.build_stateful_o(fns.fold, wm_period=opts.wm_period, strict=opts.strict)
    if op == "J":
        args = (opts.wa, opts.ws, fns.f_k1, fns.f_k2, fns.f_p)
        if mode == "dedicated":
            return build_dedicated_join(*args)
        if mode == "agg":
            return aggbased.build_aggbased_join(*args, **loop)
        return aggbased.build_aplus_join(*args)
    if op == "F":
        builders = (build_dedicated_filter, aggbased.build_aggbased_filter, aggbased.build_aplus_filter)
        fn = fns.f_c
    elif op == "M":
        builders = (build_dedicated_map, aggbased.build_aggbased_map, aggbased.build_aplus_map)
        fn = fns.f_m
    else:
        builders = (build_dedicated_flatmap, aggbased.build_aggbased_flatmap, aggbased.build_aplus_flatmap)
        fn = fns.f_fm
    if mode == "dedicated":
        return builders[0](fn)
    if mode == "agg":
        return builders[1](fn, **loop)
    return builders[2](fn)
