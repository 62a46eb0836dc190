"""Pose and bounding-box value types used throughout the pipeline.

Angles are stored in degrees (the native unit of head-pose estimators) and
converted to radians only inside the embedding code. Box coordinates stay
real-valued; rounding to the pixel grid happens at crop-export time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def normalize_angle(angle: float) -> float:
    """Reduce an angle in degrees to the canonical range [-180, 180)."""
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle!r}")
    # fmod is exact and keeps the sign of the input; fold into [-180, 180).
    wrapped = math.fmod(angle, 360.0)
    if wrapped < -180.0:
        wrapped += 360.0
    elif wrapped >= 180.0:
        wrapped -= 360.0
    return wrapped + 0.0  # avoid returning -0.0


@dataclass(frozen=True)
class EulerAngles:
    """Head pose as (pitch, yaw, roll) in degrees, normalized to [-180, 180)."""

    pitch: float
    yaw: float
    roll: float

    def __post_init__(self):
        object.__setattr__(self, "pitch", normalize_angle(float(self.pitch)))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))
        object.__setattr__(self, "roll", normalize_angle(float(self.roll)))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.pitch, self.yaw, self.roll)


@dataclass(frozen=True)
class FrameDims:
    """Video frame size in pixels. Defaults to the standardized 832x480."""

    width: int = 832
    height: int = 480

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame dims must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with real-valued corners, x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"bbox coordinates must be finite, got {self!r}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(
                f"degenerate bbox: need x1 < x2 and y1 < y2, got "
                f"({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height


def clamp_bbox(b: BBox, dims: FrameDims) -> BBox:
    """Truncate a box to frame bounds. Raises if nothing is left inside."""
    x1 = min(max(b.x1, 0.0), float(dims.width))
    x2 = min(max(b.x2, 0.0), float(dims.width))
    y1 = min(max(b.y1, 0.0), float(dims.height))
    y2 = min(max(b.y2, 0.0), float(dims.height))
    if x1 >= x2 or y1 >= y2:
        raise ValueError(f"bbox {b} lies outside the {dims.width}x{dims.height} frame")
    return BBox(x1, y1, x2, y2)


def enlarge_bbox(b: BBox, factor: float, dims: FrameDims) -> BBox:
    """Scale a box about its center, then truncate to frame bounds.

    Truncation (rather than shifting) keeps the center bias minimal and
    matches common crop semantics.
    """
    if not (math.isfinite(factor) and factor > 0):
        raise ValueError(f"factor must be a positive real, got {factor!r}")
    cx, cy = b.center
    half_w = b.width * factor / 2.0
    half_h = b.height * factor / 2.0
    return clamp_bbox(BBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h), dims)


def crop_rect(b: BBox) -> tuple[int, int, int, int]:
    """Round a box outward to the integer pixel grid (floor min, ceil max)."""
    return (
        math.floor(b.x1),
        math.floor(b.y1),
        math.ceil(b.x2),
        math.ceil(b.y2),
    )
