"""Built-in user functions, selected by name from configs and the CLI.

Records produced by the workload generator have attributes
``(id, key, u, v)``: a unique integer id, a key in ``[0, key_cardinality)``,
a uniform value ``u`` in ``[0, 1)`` used to realize selectivity, and a small
integer value ``v`` used by maps and folds. Every function keeps the record id
in its output, so distinct inputs never produce equal outputs and latency can
be traced back to the contributing inputs.

``cost`` is a number of busy-loop iterations burnt on every invocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

from aggflow.aggbased import StatefulOConfig
from aggflow.core import ConfigurationError, Tuple

__all__ = ["Functions", "FUNCTIONS", "functions_for", "burn", "fold_config", "FOLDS", "record_key"]

ID, KEY, U, V = 0, 1, 2, 3


def burn(iterations: int) -> None:
    """Spend CPU time proportional to ``iterations``."""
    for _ in range(iterations):
        pass


def record_key(t: Tuple) -> int:
    return t.attrs[KEY]


@dataclass(frozen=True)
class Functions:
    """User functions of one operator instance configuration."""

    f_c: Optional[Callable[[Tuple], bool]] = None
    f_m: Optional[Callable[[Tuple], tuple]] = None
    f_fm: Optional[Callable[[Tuple], list]] = None
    f_p: Optional[Callable[[Tuple, Tuple], bool]] = None
    f_k1: Callable[[Tuple], Any] = record_key
    f_k2: Callable[[Tuple], Any] = record_key
    fold: Optional[StatefulOConfig] = None


def _threshold(selectivity: float, cost: int) -> Functions:
    if cost:
        def f_c(t: Tuple) -> bool:
            burn(cost)
            return t.attrs[U] < selectivity
    else:
        def f_c(t: Tuple) -> bool:
            return t.attrs[U] < selectivity
    return Functions(f_c=f_c)


def _scale(selectivity: float, cost: int) -> Functions:
    def f_m(t: Tuple) -> tuple:
        if cost:
            burn(cost)
        a = t.attrs
        return (a[ID], a[KEY], a[V] * 2 + 1)
    return Functions(f_m=f_m)


def _replicate(selectivity: float, cost: int) -> Functions:
    whole = int(math.floor(selectivity))
    frac = selectivity - whole

    def f_fm(t: Tuple) -> list:
        if cost:
            burn(cost)
        a = t.attrs
        n = whole + (1 if a[U] < frac else 0)
        return [(a[ID], j, a[KEY], a[V]) for j in range(n)]
    return Functions(f_fm=f_fm)


def _match_probability(selectivity: float, cost: int) -> Functions:
    # Pair-wise uniform value from both ids: deterministic, so every execution
    # mode agrees on which pairs match.
    scale = float(1 << 32)

    def f_p(t1: Tuple, t2: Tuple) -> bool:
        if cost:
            burn(cost)
        h = (t1.attrs[ID] * 0x9E3779B1 + t2.attrs[ID] * 0x85EBCA77 + 0x165667B1) & 0xFFFFFFFF
        h ^= h >> 15
        h = (h * 0x2C1B3C6D) & 0xFFFFFFFF
        h ^= h >> 13
        return h / scale < selectivity
    return Functions(f_p=f_p)


FUNCTIONS: dict[str, dict[str, Callable[[float, int], Functions]]] = {
    "F": {"threshold": _threshold},
    "M": {"scale": _scale},
    "FM": {"replicate": _replicate},
    "J": {"match-probability": _match_probability},
}


def _sum_cfg(period: int) -> StatefulOConfig:
    return StatefulOConfig(
        f_c=lambda t: (t.attrs[V], 1),
        f_a=lambda s, t: (s[0] + t.attrs[V], s[1] + 1),
        f_m=lambda a, b: (a[0] + b[0], a[1] + b[1]),
        f_o=lambda s: s,
        period=period,
        f_k=record_key,
    )


def _max_cfg(period: int) -> StatefulOConfig:
    return StatefulOConfig(
        f_c=lambda t: (t.attrs[V], 1),
        f_a=lambda s, t: (max(s[0], t.attrs[V]), s[1] + 1),
        f_m=lambda a, b: (max(a[0], b[0]), a[1] + b[1]),
        f_o=lambda s: s,
        period=period,
        f_k=record_key,
    )


def _count_cfg(period: int) -> StatefulOConfig:
    return StatefulOConfig(
        f_c=lambda t: (1, 1),
        f_a=lambda s, t: (s[0] + 1, s[1] + 1),
        f_m=lambda a, b: (a[0] + b[0], a[1] + b[1]),
        f_o=lambda s: s,
        period=period,
        f_k=record_key,
    )


# States are (aggregate, inputs folded so far); f_o emits both so that
# exactly-once folding is visible in the output.
FOLDS: dict[str, Callable[[int], StatefulOConfig]] = {"sum": _sum_cfg, "max": _max_cfg, "count": _count_cfg}

DEFAULT_FUNCTION = {"F": "threshold", "M": "scale", "FM": "replicate", "J": "match-probability", "O": "sum"}


def fold_config(name: str, period: int) -> StatefulOConfig:
    try:
        return FOLDS[name](period)
    except KeyError:
        raise ConfigurationError(f"unknown fold {name!r}; choose from {sorted(FOLDS)}") from None


def functions_for(op: str, name: Optional[str] = None, *, selectivity: float = 1.0, cost: int = 0,
                  period: int = 4) -> Functions:
    """Look up the named built-in functions for operator ``op``."""
    name = name or DEFAULT_FUNCTION.get(op)
    if op == "O":
        return Functions(fold=fold_config(name, period))
    try:
        factory = FUNCTIONS[op][name]
    except KeyError:
        raise ConfigurationError(f"no built-in function {name!r} for operator {op!r}") from None
    if selectivity < 0:
        raise ConfigurationError(f"selectivity must be non-negative, got {selectivity}")
    return factory(selectivity, cost)
