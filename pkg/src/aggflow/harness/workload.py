"""Workload configuration and synthetic record generation."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from aggflow.core import ConfigurationError, Tuple
from aggflow.pipelines import MODES, OPERATORS, PipelineOptions
from aggflow.registry import Functions, functions_for

__all__ = ["CONFIG_VERSION", "WorkloadConfig", "generate_workload", "generate_records", "load_config"]

CONFIG_VERSION = 1


@dataclass
class WorkloadConfig:
    """Everything needed to build a pipeline and feed it.

    Attributes:
        operator: One of ``F``, ``M``, ``FM``, ``J``, ``O``.
        mode: ``dedicated``, ``agg`` or ``agg-plus``.
        function: Built-in function name; ``None`` picks the operator's default.
        selectivity: Outputs per input (F, M, FM) or match probability per
            comparison (J).
        cost: Busy-loop iterations per user-function invocation.
        wa, ws: Join window advance and size in ticks.
        period: Emission period of operator O.
        fold: Fold used by operator O (``sum``, ``max`` or ``count``).
        key_cardinality: Number of distinct keys.
        watermark_period: Ingress watermark period ``D`` in ticks.
        disorder: Maximum event-time disorder of generated records (``<= D``).
        records: Records per input stream (equivalence and ``run``).
        density: Average records per tick in generated streams.
        duration, warmup, cooldown: Benchmark timing, seconds.
        rate: Injected records per second (benchmark).
        tick_ms: Wall-clock milliseconds per event-time tick (benchmark).
        latency_cap_ms: Sustainability latency cap.
        max_violations: Seconds over the cap a sustainable run may have.
        seed: Seed of every random choice.
        guards: Install loop guards.
        strict: Use the literal loop-bound and skip-tick variants.
    """

    operator: str = "FM"
    mode: str = "agg"
    function: Optional[str] = None
    selectivity: float = 1.0
    cost: int = 0
    wa: int = 4
    ws: int = 4
    period: int = 4
    fold: str = "sum"
    key_cardinality: int = 4
    watermark_period: int = 4
    disorder: int = 0
    records: int = 1000
    density: float = 1.0
    duration: float = 60.0
    warmup: float = 5.0
    cooldown: float = 5.0
    rate: float = 1000.0
    tick_ms: float = 10.0
    latency_cap_ms: float = 5000.0
    max_violations: int = 3
    seed: int = 0
    guards: bool = True
    strict: bool = False
    parallelism: dict[str, int] = field(default_factory=dict)

    def validate(self) -> "WorkloadConfig":
        problems = []
        if self.operator not in OPERATORS:
            problems.append(f"operator must be one of {OPERATORS}")
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if self.operator == "O" and self.mode == "agg-plus":
            problems.append("operator O has no agg-plus composition")
        if not 1 <= self.wa <= self.ws:
            problems.append(f"need 1 <= wa <= ws, got wa={self.wa} ws={self.ws}")
        if self.period < 1:
            problems.append("period must be positive")
        if self.key_cardinality < 1:
            problems.append("key_cardinality must be positive")
        if self.watermark_period < 1:
            problems.append("watermark_period must be positive")
        if not 0 <= self.disorder <= self.watermark_period:
            problems.append("disorder must be within [0, watermark_period]")
        if self.selectivity < 0:
            problems.append("selectivity must be non-negative")
        if self.operator in ("F", "J") and self.selectivity > 1:
            problems.append(f"selectivity of {self.operator} is a probability and must not exceed 1")
        if self.cost < 0 or self.records < 0 or self.density <= 0:
            problems.append("cost and records must be non-negative, density positive")
        if self.duration <= 0 or self.warmup < 0 or self.cooldown < 0 or self.warmup + self.cooldown >= self.duration:
            problems.append("need warmup + cooldown < duration")
        if self.rate <= 0 or self.tick_ms <= 0:
            problems.append("rate and tick_ms must be positive")
        if problems:
            raise ConfigurationError("; ".join(problems))
        return self

    def functions(self) -> Functions:
        name = self.fold if self.operator == "O" else self.function
        return functions_for(self.operator, name, selectivity=self.selectivity, cost=self.cost, period=self.period)

    def options(self) -> PipelineOptions:
        return PipelineOptions(self.wa, self.ws, self.watermark_period, self.guards, self.strict)

    def ingress_names(self) -> tuple[str, ...]:
        return ("in1", "in2") if self.operator == "J" else ("in",)

    def to_json(self) -> str:
        return json.dumps({"version": CONFIG_VERSION, **asdict(self)}, indent=2, sort_keys=True)


def load_config(path: str | Path, **overrides: Any) -> WorkloadConfig:
    """Read a versioned JSON config file; ``overrides`` replace file values."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a JSON object")
    version = raw.pop("version", None)
    if version != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported config version {version!r}; expected {CONFIG_VERSION}")
    known = {f.name for f in fields(WorkloadConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return WorkloadConfig(**raw).validate()


def generate_records(
    n: int,
    *,
    key_cardinality: int,
    seed: int,
    density: float = 1.0,
    disorder: int = 0,
    first_id: int = 0,
) -> list[Tuple]:
    """Deterministic records ``(id, key, u, v)`` with unique ids.

    Event times advance by a geometric gap averaging ``1 / density`` ticks;
    each record is then moved back by up to ``disorder`` ticks.
    """
    rng = random.Random(seed)
    out: list[Tuple] = []
    base = 0
    for i in range(n):
        if i:
            if density >= 1:
                if rng.random() < 1.0 / density:
                    base += 1
            else:
                base += 1 + int(rng.expovariate(density / (1.0 - density)))
        ts = max(base - rng.randint(0, disorder), 0) if disorder else base
        out.append(Tuple(ts, (first_id + i, rng.randrange(key_cardinality), rng.random(), rng.randrange(100))))
    return out


def generate_workload(cfg: WorkloadConfig, seed: Optional[int] = None) -> dict[str, list[Tuple]]:
    """Records for every ingress of ``cfg``'s operator.

    Ids are unique across all streams of one workload, which keeps every
    input duplicate-free.
    """
    seed = cfg.seed if seed is None else seed
    out = {}
    for i, name in enumerate(cfg.ingress_names()):
        out[name] = generate_records(
            cfg.records,
            key_cardinality=cfg.key_cardinality,
            seed=seed * 1_000_003 + i,
            density=cfg.density,
            disorder=cfg.disorder,
            first_id=i * cfg.records,
        )
    return out
