"""Building graphs from plain (JSON-compatible) descriptions.

Two shapes are accepted. A *pipeline* description names one built-in
operator and a mode::

    {"operator": "FM", "mode": "agg", "selectivity": 1.5, "wm_period": 4}

A *graph* description lists nodes, edges and stream bindings explicitly::

    {"mode": "agg",
     "nodes": [{"name": "a", "op": "filter", "out_type": "x"},
               {"name": "b", "op": "aggregate", "wa": 2, "ws": 4, "key": [1]}],
     "edges": [{"src": "a", "dst": "b"}],
     "ingress": [{"name": "in", "node": "a", "type": "x"}],
     "egress": {"out": "b"}}

Node ops are ``filter``, ``map`` and ``flatmap`` (built-in functions with a
``selectivity`` and ``cost``), ``aggregate`` (counts the distinct tuples of
each window), ``c2-guard`` and ``c3-guard``. An edge with ``"loop": true``
is a loop edge.
"""

from __future__ import annotations

from functools import partial
from typing import Any, Mapping, Optional

from aggflow.core import ConfigurationError, WindowInstance, WindowSpec, attr_key, full_key, global_key
from aggflow.dedicated import Aggregate, Filter, FlatMap, Map
from aggflow.loopguard import C2Guard, C3Guard
from aggflow.runtime.graph import FORWARD, LOOP, GraphValidationError, NodeSpec, OperatorGraph

__all__ = ["build_graph"]

PIPELINE_KEYS = {
    "operator", "mode", "function", "selectivity", "cost", "wa", "ws", "wm_period", "guards", "strict",
    "period", "fold",
}


def build_graph(description: Mapping[str, Any]) -> OperatorGraph:
    """Build and validate the graph a description names.

    Raises:
        GraphValidationError: With every violation found (unknown operators,
            inconsistent windows, mixed-type unions, unguarded loops).
    """
    if "operator" in description:
        return _pipeline(description)
    return _explicit(description)


def _pipeline(desc: Mapping[str, Any]) -> OperatorGraph:
    # Imported here: the registry depends on the composition modules, which
    # depend on this package.
    from aggflow.pipelines import PipelineOptions, build_pipeline
    from aggflow.registry import functions_for

    unknown = set(desc) - PIPELINE_KEYS
    if unknown:
        raise GraphValidationError([f"unknown pipeline keys {sorted(unknown)}"])
    op = desc["operator"]
    try:
        name = desc.get("fold", desc.get("function")) if op == "O" else desc.get("function")
        fns = functions_for(
            op, name, selectivity=float(desc.get("selectivity", 1.0)), cost=int(desc.get("cost", 0)),
            period=int(desc.get("period", 4)),
        )
        opts = PipelineOptions(
            wa=int(desc.get("wa", 4)), ws=int(desc.get("ws", 4)), wm_period=int(desc.get("wm_period", 1)),
            guards=bool(desc.get("guards", True)), strict=bool(desc.get("strict", False)),
        )
        if op == "J":
            WindowSpec(opts.wa, opts.ws)
        graph = build_pipeline(op, desc.get("mode", "dedicated"), fns, opts)
    except GraphValidationError:
        raise
    except (ConfigurationError, KeyError, ValueError) as exc:
        raise GraphValidationError([str(exc)]) from exc
    if graph.allow_unguarded_loops:
        # Tolerated when built directly for fault injection, never from a description.
        graph.allow_unguarded_loops = False
        graph.validate()
    return graph


def _count_distinct(win: WindowInstance) -> tuple:
    return (len(set(win.contents)),)


def _key_fn(key: Any):
    if key in (None, "global"):
        return global_key
    if key == "full":
        return full_key
    return attr_key(*key)


def _factory(node: Mapping[str, Any], problems: list[str]) -> Optional[tuple[Any, str]]:
    from aggflow.registry import functions_for

    op = node.get("op")
    name = node["name"]
    sel = float(node.get("selectivity", 1.0))
    cost = int(node.get("cost", 0))
    try:
        if op == "filter":
            return partial(Filter, functions_for("F", selectivity=sel, cost=cost).f_c), "filter"
        if op == "map":
            return partial(Map, functions_for("M", selectivity=sel, cost=cost).f_m), "map"
        if op == "flatmap":
            return partial(FlatMap, functions_for("FM", selectivity=sel, cost=cost).f_fm), "flatmap"
        if op == "aggregate":
            spec = WindowSpec(int(node.get("wa", 1)), int(node.get("ws", 1)), _key_fn(node.get("key")),
                              int(node.get("lateness", 0)))
            return partial(Aggregate, spec, _count_distinct, name), "aggregate"
        if op == "c2-guard":
            return partial(C2Guard, int(node.get("lateness", 0)), name), "c2-guard"
        if op == "c3-guard":
            return partial(C3Guard, name), "c3-guard"
    except ConfigurationError as exc:
        problems.append(f"node {name!r}: {exc}")
        return None
    problems.append(f"node {name!r}: unknown op {op!r}")
    return None


def _explicit(desc: Mapping[str, Any]) -> OperatorGraph:
    problems: list[str] = []
    g = OperatorGraph(name=desc.get("name", "graph"), mode=desc.get("mode", "dedicated"),
                      horizon=int(desc.get("horizon", 1)))
    for node in desc.get("nodes", []):
        if "name" not in node:
            problems.append(f"node without a name: {node}")
            continue
        built = _factory(node, problems)
        if built is None:
            continue
        factory, kind = built
        partition = None
        if kind in ("aggregate", "c2-guard", "c3-guard"):
            partition = {0: _key_fn(node.get("key"))}
        try:
            g.add_node(NodeSpec(node["name"], factory, kind, node.get("in_type"), node.get("out_type"), partition,
                                int(node.get("parallelism", 1))))
        except ConfigurationError as exc:
            problems.append(str(exc))
    for e in desc.get("edges", []):
        g.connect(e["src"], e["dst"], int(e.get("port", 0)), LOOP if e.get("loop") else FORWARD)
    for ing in desc.get("ingress", []):
        g.add_ingress(ing["name"], ing["node"], int(ing.get("port", 0)), ing.get("type"))
    for name, node in dict(desc.get("egress", {})).items():
        g.add_egress(name, node)
    if problems:
        raise GraphValidationError(problems)
    return g.validate()
