"""Rolling-shutter row clock and the affine camera-to-reference time mapping.

All times are double precision milliseconds.

Two related row terms live here. :func:`sub_frame_time` is the full
camera-local model, where the first active row is delayed by the hidden
rows read before it::

    t(f, r) = t_f + (R0 + r) / (R0 + Rh + R1) * T_frame

:func:`apply_sync` is the fitted mapping to reference time and carries no
``R0`` term::

    s(f, r) = alpha * t_f + beta + r * t_row

The constant ``R0 * t_row`` of a camera (and of the reference) is absorbed
into ``beta`` when the mapping is estimated from data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

__all__ = [
    "SensorGeometry",
    "TemporalPosition",
    "SyncParams",
    "sub_frame_time",
    "row_period",
    "apply_sync",
    "drift_lines_per_second",
]


@dataclass(frozen=True)
class SensorGeometry:
    """Row counts of a rolling-shutter sensor.

    Attributes:
        rows_active: image height in rows (Rh)
        rows_before: hidden rows read out before the active area (R0)
        rows_after: hidden rows read out after the active area (R1)
    """

    rows_active: int
    rows_before: int = 0
    rows_after: int = 0

    def __post_init__(self) -> None:
        for name in ("rows_active", "rows_before", "rows_after"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise DomainError(f"{name} must be an integer, got {value!r}")
        if self.rows_active < 1:
            raise DomainError(f"rows_active must be >= 1, got {self.rows_active}")
        if self.rows_before < 0 or self.rows_after < 0:
            raise DomainError("hidden row counts must be non-negative")

    def total_rows(self) -> int:
        return self.rows_before + self.rows_active + self.rows_after

    def to_dict(self) -> dict[str, int]:
        return {
            "rows_before": self.rows_before,
            "rows_active": self.rows_active,
            "rows_after": self.rows_after,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SensorGeometry:
        return cls(
            rows_active=int(data["rows_active"]),
            rows_before=int(data.get("rows_before", 0)),
            rows_after=int(data.get("rows_after", 0)),
        )


@dataclass(frozen=True)
class TemporalPosition:
    """A (frame, row) position in one camera's stream."""

    frame: int
    row: int

    def __post_init__(self) -> None:
        if self.frame < 0:
            raise DomainError(f"frame must be non-negative, got {self.frame}")

    def validate(self, geometry: SensorGeometry) -> None:
        if not 0 <= self.row < geometry.rows_active:
            raise DomainError(
                f"row {self.row} outside active range [0, {geometry.rows_active})"
            )


@dataclass(frozen=True)
class SyncParams:
    """Affine mapping of one camera's (timestamp, row) to reference time.

    Attributes:
        alpha: clock drift compensation factor (dimensionless, close to 1)
        beta: temporal shift in ms
        t_row: time per image row in ms
    """

    alpha: float
    beta: float
    t_row: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.alpha) or self.alpha <= 0.0:
            raise DomainError(f"alpha must be finite and positive, got {self.alpha}")
        if not math.isfinite(self.t_row) or self.t_row <= 0.0:
            raise DomainError(f"t_row must be finite and positive, got {self.t_row}")
        if not math.isfinite(self.beta):
            raise DomainError(f"beta must be finite, got {self.beta}")

    def is_plausible(self) -> bool:
        """True when the drift is within what real camera clocks exhibit."""
        return abs(self.alpha - 1.0) < 1e-3


def row_period(geometry: SensorGeometry, frame_duration: float) -> float:
    """Time between exposure starts of consecutive rows, in ms."""
    if not frame_duration > 0.0:
        raise DomainError(f"frame_duration must be positive, got {frame_duration}")
    return frame_duration / geometry.total_rows()


def sub_frame_time(
    frame_timestamp: float,
    row: int,
    geometry: SensorGeometry,
    frame_duration: float,
) -> float:
    """Camera-local exposure start of ``row`` in the frame stamped ``frame_timestamp``.

    Raises:
        DomainError: row outside the active area or non-positive frame duration
    """
    if not 0 <= row < geometry.rows_active:
        raise DomainError(
            f"row {row} outside active range [0, {geometry.rows_active})"
        )
    period = row_period(geometry, frame_duration)
    return frame_timestamp + geometry.rows_before * period + row * period


def apply_sync(params: SyncParams, frame_timestamp: float, row: float) -> float:
    """Map a camera (timestamp, row) position to reference time in ms."""
    if row < 0:
        raise DomainError(f"row must be non-negative, got {row}")
    return params.alpha * frame_timestamp + params.beta + row * params.t_row


def drift_lines_per_second(params: SyncParams) -> float:
    """Clock drift expressed as image rows per second that need correcting.

    Derived diagnostic: ``(1 - alpha) / t_row * 1000``.
    """
    return (1.0 - params.alpha) / params.t_row * 1e3
