"""Physical plans: how many instances each node gets and how tuples are routed."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Optional

from aggflow.core import ConfigurationError, Tuple, encode_key
from aggflow.runtime.graph import LOOP, OperatorGraph

__all__ = ["PhysicalPlan", "Routing", "parallelize", "partition_index"]

LOCAL = "local"
KEY = "key"
ROUND_ROBIN = "round-robin"


def partition_index(key: Hashable, n: int) -> int:
    """Stable instance index for ``key`` among ``n`` instances."""
    return zlib.crc32(encode_key(key)) % n


@dataclass
class Routing:
    """How tuples travel along one logical edge (or from one ingress).

    Attributes:
        dst: Consumer node.
        port: Consumer input port.
        loop: Loop edges never carry watermarks.
        mode: ``local`` (instance i to instance i), ``key`` (hash of the
            consumer's partition value) or ``round-robin``.
        fn: Partition function for ``key`` routing.
        fanout: Number of consumer instances.
    """

    dst: str
    port: int
    loop: bool
    mode: str
    fn: Optional[Callable[[Tuple], Hashable]]
    fanout: int
    _rr: dict[int, int] = field(default_factory=dict, repr=False)

    def target(self, t: Tuple, src_index: int) -> int:
        n = self.fanout
        if n == 1:
            return 0
        if self.mode == LOCAL:
            return src_index
        if self.mode == KEY:
            return zlib.crc32(encode_key(self.fn(t))) % n
        i = self._rr.get(src_index, src_index)
        self._rr[src_index] = i + 1
        return i % n


@dataclass
class PhysicalPlan:
    """A graph together with per-node instance counts and edge routings."""

    graph: OperatorGraph
    parallelism: dict[str, int]
    routes: dict[str, list[Routing]]
    ingress_routes: dict[str, Routing]

    def instance_names(self) -> list[tuple[str, int]]:
        return [(n, i) for n in self.graph.topological_order() for i in range(self.parallelism[n])]


def _routing(graph: OperatorGraph, dst: str, port: int, loop: bool, p: Mapping[str, int]) -> Routing:
    node = graph.nodes[dst]
    if loop:
        return Routing(dst, port, True, LOCAL, None, p[dst])
    if node.partition is None:
        return Routing(dst, port, False, ROUND_ROBIN, None, p[dst])
    fn = node.partition.get(port)
    if fn is None:
        raise ConfigurationError(f"node {dst!r} has no partition function for port {port}")
    return Routing(dst, port, False, KEY, fn, p[dst])


def parallelize(graph: OperatorGraph, parallelism: Optional[Mapping[str, int] | int] = None) -> PhysicalPlan:
    """Expand a logical graph into a physical plan.

    Args:
        graph: A validated graph.
        parallelism: Either one instance count for every node, or a map from
            node name to instance count. Nodes not mentioned keep their own
            ``parallelism`` attribute.

    Stateful nodes receive tuples by key hash, so equal partition values
    always meet on one instance; stateless nodes are fed round-robin. Loop
    edges stay instance-local, so both ends must have the same count.
    """
    graph.validate()
    if isinstance(parallelism, int):
        p = {n: parallelism for n in graph.nodes}
    else:
        p = {n: spec.parallelism for n, spec in graph.nodes.items()}
        p.update(parallelism or {})
    for name, count in p.items():
        if name not in graph.nodes:
            raise ConfigurationError(f"parallelism given for unknown node {name!r}")
        if count < 1:
            raise ConfigurationError(f"node {name!r} needs at least one instance, got {count}")
    routes: dict[str, list[Routing]] = {n: [] for n in graph.nodes}
    for e in graph.edges:
        loop = e.kind == LOOP
        if loop and p[e.src] != p[e.dst]:
            raise ConfigurationError(f"loop {e.src}->{e.dst} joins nodes of different parallelism")
        routes[e.src].append(_routing(graph, e.dst, e.port, loop, p))
    ingress_routes = {
        name: _routing(graph, ing.node, ing.port, False, p) for name, ing in graph.ingress.items()
    }
    return PhysicalPlan(graph, p, routes, ingress_routes)
