"""Stream operators enforced as compositions of a single windowed Aggregate."""

from aggflow.core import (
    ConfigurationError,
    InvariantViolation,
    Tuple,
    Watermark,
    WatermarkRegression,
    WindowInstance,
    WindowSpec,
    assign_windows,
    is_late,
    lateness_admissible,
    merge_watermark,
    output_timestamp,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "InvariantViolation",
    "Tuple",
    "Watermark",
    "WatermarkRegression",
    "WindowInstance",
    "WindowSpec",
    "assign_windows",
    "is_late",
    "lateness_admissible",
    "merge_watermark",
    "output_timestamp",
]
