"""Ingress: interleave periodic watermarks into a record stream."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from aggflow.core import ConfigurationError, Tuple, Watermark

__all__ = ["IngressConfig", "IngressStats", "ingress_stream", "iter_ingress"]


@dataclass(frozen=True)
class IngressConfig:
    """How an ingress stamps watermarks.

    Attributes:
        watermark_period: ``D``, the event-time distance between watermarks.
        disorder: How far behind the newest record a record may arrive. Must
            not exceed ``D``. Records later than the current watermark are
            dropped and counted.
        horizon: The final watermark is ``max record ts + horizon``.
        rate: Records per second for wall-clock driven runs; ``None`` means
            as fast as possible.
    """

    watermark_period: int
    disorder: int = 0
    horizon: int = 1
    rate: Optional[float] = None

    def __post_init__(self) -> None:
        if self.watermark_period < 1:
            raise ConfigurationError(f"watermark period must be positive, got {self.watermark_period}")
        if not 0 <= self.disorder <= self.watermark_period:
            raise ConfigurationError(f"disorder must be within [0, D], got {self.disorder}")
        if self.horizon < 1:
            raise ConfigurationError(f"flush horizon must be positive, got {self.horizon}")


@dataclass
class IngressStats:
    records: int = 0
    dropped_late: int = 0
    watermarks: int = 0


def iter_ingress(
    records: Iterable[Tuple],
    cfg: IngressConfig,
    *,
    flush_at: Optional[int] = None,
    stats: Optional[IngressStats] = None,
) -> Iterator[Tuple | Watermark]:
    """Lazily interleave watermarks at every multiple of ``D`` into ``records``.

    Watermark ``k * D`` is emitted just before the first record whose
    timestamp reaches ``k * D + disorder``. After the last record, watermarks
    keep stepping by ``D`` up to the flush watermark, which is ``flush_at`` if
    given and otherwise the largest record timestamp plus ``cfg.horizon``.
    """
    stats = stats if stats is not None else IngressStats()
    d = cfg.watermark_period
    lag = cfg.disorder
    next_w = d
    current = 0
    max_ts = -1
    for t in records:
        ts = t.ts
        if ts < current:
            stats.dropped_late += 1
            continue
        while ts >= next_w + lag:
            current = next_w
            stats.watermarks += 1
            yield Watermark(next_w)
            next_w += d
        if ts > max_ts:
            max_ts = ts
        stats.records += 1
        yield t
    target = flush_at if flush_at is not None else max(max_ts, 0) + cfg.horizon
    while next_w < target:
        current = next_w
        stats.watermarks += 1
        yield Watermark(next_w)
        next_w += d
    if target > current:
        stats.watermarks += 1
        yield Watermark(target)


def ingress_stream(
    records: Iterable[Tuple],
    cfg: IngressConfig,
    *,
    flush_at: Optional[int] = None,
    stats: Optional[IngressStats] = None,
) -> list[Tuple | Watermark]:
    """Materialized :func:`iter_ingress`.

    >>> [e.ts for e in ingress_stream([Tuple(i) for i in range(10)], IngressConfig(3))
    ...  if isinstance(e, Watermark)]
    [3, 6, 9, 10]
    """
    return list(iter_ingress(records, cfg, flush_at=flush_at, stats=stats))
