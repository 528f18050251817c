"""A constructed run in which an unguarded Unfold loop loses outputs.

An aggregation-based join uses windows of 60 ticks; both inputs fall into the
window covering ticks 600 to 659, so every match is embedded at tick 659 and
unfolded through the loop. Watermarks arrive every 60 ticks and the final one
is 725. The loop's allowed lateness equals the watermark period, 60 ticks, so
a loop tuple at 659 is admitted only while the watermark is below 720.

Without guards, an adversarial interleaving lets the loop Aggregate process
watermark 725 before the loop tuples come back, and they are dropped. With
guards the C2 guard holds the watermark back until every loop tuple has been
consumed.
"""

from __future__ import annotations

from typing import Optional

from aggflow.core import Tuple
from aggflow.harness.equivalence import EquivalenceReport, run_equivalence
from aggflow.harness.workload import WorkloadConfig
from aggflow.runtime.deterministic import LOOP_LAST

__all__ = ["LOSS_WINDOW", "LOSS_FLUSH", "loss_scenario_config", "loss_scenario_records", "run_loss_scenario"]

LOSS_WINDOW = (600, 660)
LOSS_FLUSH = 725


def loss_scenario_config(guards: bool = True, strict: bool = False, per_side: int = 3) -> WorkloadConfig:
    return WorkloadConfig(
        operator="J", mode="agg", selectivity=1.0, wa=60, ws=60, watermark_period=60, key_cardinality=1,
        records=per_side, guards=guards, strict=strict,
    ).validate()


def loss_scenario_records(per_side: int = 3) -> dict[str, list[Tuple]]:
    """``per_side`` records per join input, all with key 0, spread over ticks 600 to 659."""
    lo, hi = LOSS_WINDOW
    step = max(1, (hi - lo) // per_side)
    left = [Tuple(lo + i * step, (2 * i, 0, 0.5, i)) for i in range(per_side)]
    right = [Tuple(lo + i * step + 1, (2 * i + 1, 0, 0.5, i)) for i in range(per_side)]
    return {"in1": left, "in2": right}


def run_loss_scenario(
    guards: bool,
    *,
    per_side: int = 3,
    policy: str = LOOP_LAST,
    ingress_batch: Optional[int] = None,
    strict: bool = False,
) -> EquivalenceReport:
    """Run the scenario against the dedicated join.

    The defaults schedule adversarially: every ingress element is queued up
    front and loop channels are served last.
    """
    return run_equivalence(
        loss_scenario_config(guards, strict, per_side),
        ("dedicated", "agg"),
        records=loss_scenario_records(per_side),
        policy=policy,
        ingress_batch=ingress_batch,
        flush_at=LOSS_FLUSH,
    )
