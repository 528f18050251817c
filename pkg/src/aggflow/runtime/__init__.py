"""Graph construction and execution."""

from aggflow.runtime.deterministic import LOOP_FIRST, LOOP_LAST, RANDOM, RunResult, SchedulerStall, run_deterministic
from aggflow.runtime.describe import build_graph
from aggflow.runtime.graph import (
    FORWARD,
    LOOP,
    EdgeSpec,
    GraphValidationError,
    NodeSpec,
    OperatorGraph,
)
from aggflow.runtime.ingress import IngressConfig, IngressStats, ingress_stream, iter_ingress
from aggflow.runtime.pipelined import run_pipelined
from aggflow.runtime.plan import PhysicalPlan, parallelize

__all__ = [
    "FORWARD",
    "LOOP",
    "LOOP_FIRST",
    "LOOP_LAST",
    "RANDOM",
    "EdgeSpec",
    "GraphValidationError",
    "IngressConfig",
    "IngressStats",
    "NodeSpec",
    "OperatorGraph",
    "PhysicalPlan",
    "RunResult",
    "SchedulerStall",
    "build_graph",
    "ingress_stream",
    "iter_ingress",
    "parallelize",
    "run_deterministic",
    "run_pipelined",
]
