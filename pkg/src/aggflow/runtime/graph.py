"""Logical operator graphs: nodes, FIFO edges, ingress and egress bindings."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Mapping, Optional

from aggflow.core import ConfigurationError, Tuple

__all__ = [
    "FORWARD",
    "LOOP",
    "GUARD_KINDS",
    "NodeSpec",
    "EdgeSpec",
    "Ingress",
    "OperatorGraph",
    "GraphValidationError",
]

FORWARD = "forward"
LOOP = "loop"

# Node kinds that may sit at the receiving end of a loop edge.
GUARD_KINDS = frozenset({"c2-guard", "state-guard"})

PartitionFn = Callable[[Tuple], Hashable]


class GraphValidationError(ConfigurationError):
    """A graph failed validation; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]) -> None:
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class NodeSpec:
    """A logical operator.

    Attributes:
        name: Unique node id. Ties in scheduling order are broken by it.
        factory: Builds a fresh operator object for each physical instance.
        kind: Operator kind, e.g. ``"aggregate"``, ``"flatmap"``, ``"c2-guard"``.
        in_type: Stream type the node consumes (checked on unions).
        out_type: Stream type the node produces.
        partition: Per input port, the function whose value decides which
            physical instance receives a tuple. ``None`` marks a stateless
            node fed round-robin.
        parallelism: Default number of physical instances.
    """

    name: str
    factory: Callable[[], Any]
    kind: str
    in_type: Optional[str] = None
    out_type: Optional[str] = None
    partition: Optional[Mapping[int, PartitionFn]] = None
    parallelism: int = 1


@dataclass(frozen=True)
class EdgeSpec:
    """A FIFO edge. Loop edges carry tuples only and connect instances one-to-one."""

    src: str
    dst: str
    port: int = 0
    kind: str = FORWARD


@dataclass(frozen=True)
class Ingress:
    name: str
    node: str
    port: int = 0
    stream_type: Optional[str] = None


@dataclass
class OperatorGraph:
    """A possibly cyclic graph of operators.

    Several edges into the same ``(node, port)`` form a union; several edges
    out of one node form a multicast. ``horizon`` is how far past the largest
    input timestamp the final watermark must go for every window to fire.
    """

    name: str = "graph"
    mode: str = "dedicated"
    nodes: dict[str, NodeSpec] = field(default_factory=dict)
    edges: list[EdgeSpec] = field(default_factory=list)
    ingress: dict[str, Ingress] = field(default_factory=dict)
    egress: dict[str, str] = field(default_factory=dict)
    horizon: int = 1
    allow_unguarded_loops: bool = False

    def add_node(self, node: NodeSpec) -> NodeSpec:
        if node.name in self.nodes:
            raise ConfigurationError(f"duplicate node {node.name!r}")
        self.nodes[node.name] = node
        return node

    def connect(self, src: str, dst: str, port: int = 0, kind: str = FORWARD) -> EdgeSpec:
        edge = EdgeSpec(src, dst, port, kind)
        self.edges.append(edge)
        return edge

    def add_ingress(self, name: str, node: str, port: int = 0, stream_type: Optional[str] = None) -> None:
        self.ingress[name] = Ingress(name, node, port, stream_type)

    def add_egress(self, name: str, node: str) -> None:
        self.egress[name] = node

    def in_edges(self, node: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.dst == node]

    def out_edges(self, node: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.src == node]

    def nodes_of_kind(self, *kinds: str) -> list[str]:
        return [n for n, spec in self.nodes.items() if spec.kind in kinds]

    def topological_order(self) -> list[str]:
        """Node names in topological order of the graph without loop edges; ties by name."""
        indeg = {n: 0 for n in self.nodes}
        succ: dict[str, list[str]] = defaultdict(list)
        for e in self.edges:
            if e.kind == LOOP:
                continue
            indeg[e.dst] += 1
            succ[e.src].append(e.dst)
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    ready.append(m)
                    ready.sort()
        if len(order) != len(self.nodes):
            raise GraphValidationError(["cycle made of non-loop edges"])
        return order

    def violations(self) -> list[str]:
        """Every structural problem of the graph (empty when valid)."""
        problems: list[str] = []
        for e in self.edges:
            for end in (e.src, e.dst):
                if end not in self.nodes:
                    problems.append(f"edge {e.src}->{e.dst} names unknown node {end!r}")
        for ing in self.ingress.values():
            if ing.node not in self.nodes:
                problems.append(f"ingress {ing.name!r} targets unknown node {ing.node!r}")
        for name, node in self.egress.items():
            if node not in self.nodes:
                problems.append(f"egress {name!r} reads unknown node {node!r}")
        if problems:
            return problems

        # Union members must share one stream type, and match the consumer.
        feeds: dict[tuple[str, int], list[tuple[str, Optional[str]]]] = defaultdict(list)
        for e in self.edges:
            feeds[(e.dst, e.port)].append((e.src, self.nodes[e.src].out_type))
        for ing in self.ingress.values():
            feeds[(ing.node, ing.port)].append((f"ingress:{ing.name}", ing.stream_type))
        for (dst, port), members in feeds.items():
            types = {t for _, t in members if t is not None}
            if len(types) > 1:
                listing = ", ".join(f"{src}:{t}" for src, t in members)
                problems.append(f"union into {dst}[{port}] mixes stream types ({listing})")
            expected = self.nodes[dst].in_type
            if expected is not None and types and types != {expected}:
                problems.append(f"{dst}[{port}] expects {expected}, gets {sorted(types)}")

        loop_edges = [e for e in self.edges if e.kind == LOOP]
        if loop_edges and self.mode == "agg-plus":
            problems.append("agg-plus graphs must not contain loops")
        if not self.allow_unguarded_loops:
            for e in loop_edges:
                if self.nodes[e.dst].kind not in GUARD_KINDS:
                    problems.append(f"loop {e.src}->{e.dst} is not guarded on its input side")
                if self.nodes[e.dst].kind == "c2-guard":
                    for out in self.out_edges(e.src):
                        if out.kind != LOOP and self.nodes[out.dst].kind != "c3-guard":
                            problems.append(f"loop producer {e.src} feeds {out.dst} without a C3 guard")
        for node in self.nodes.values():
            if node.parallelism < 1:
                problems.append(f"node {node.name!r} has parallelism {node.parallelism}")
        try:
            self.topological_order()
        except GraphValidationError as exc:
            problems.extend(exc.violations)
        return problems

    def validate(self) -> "OperatorGraph":
        problems = self.violations()
        if problems:
            raise GraphValidationError(problems)
        return self
