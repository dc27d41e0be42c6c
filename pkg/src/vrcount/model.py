"""Core domain types shared by every stage of the counting pipeline.

All types here are immutable value objects; they can be shared freely
between threads. Pixel coordinates are 0-based and boxes are half-open
on the max side, so widths and heights are plain differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

# Default line height and vehicle classes used across the CLI and tests.
DEFAULT_LINE_ROW = 120
DEFAULT_CLASSES = ("Bus", "Car", "Motorbike", "Pickup", "Truck", "Van")


class PipelineError(Exception):
    """Base class for recoverable pipeline failures (I/O, protocol, geometry)."""


@dataclass(frozen=True)
class VideoMeta:
    """Stream geometry: frame size, frame count and frame rate."""

    width_px: int
    height_px: int
    frame_count: int
    fps_num: int = 30
    fps_den: int = 1

    def __post_init__(self):
        if self.width_px < 1:
            raise ValueError(f"width_px must be >= 1, got {self.width_px}")
        if self.height_px < 1:
            raise ValueError(f"height_px must be >= 1, got {self.height_px}")
        if self.frame_count < 0:
            raise ValueError(f"frame_count must be >= 0, got {self.frame_count}")
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise ValueError(f"fps must be > 0, got {self.fps_num}/{self.fps_den}")

    @property
    def fps(self) -> Fraction:
        return Fraction(self.fps_num, self.fps_den)

    @property
    def frame_bytes(self) -> int:
        """Size of one packed RGB24 frame."""
        return self.width_px * self.height_px * 3


@dataclass(frozen=True)
class Frame:
    """One video frame: 0-based index plus an H x W x 3 uint8 raster."""

    index: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"frame index must be >= 0, got {self.index}")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 raster, got shape {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"expected uint8 raster, got {self.pixels.dtype}")
        # Value semantics: freeze the raster so shared frames stay immutable.
        self.pixels.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class CountingLine:
    """Horizontal pixel row in frame coordinates where crossings are counted."""

    row_px: int = DEFAULT_LINE_ROW

    def __post_init__(self):
        if self.row_px < 0:
            raise ValueError(f"row_px must be >= 0, got {self.row_px}")

    def validate_for(self, meta: VideoMeta) -> None:
        if self.row_px >= meta.height_px:
            raise ValueError(
                f"row_px {self.row_px} outside frame height {meta.height_px}"
            )


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box, half-open on the max side: [x0, x1) x [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not self.x0 < self.x1:
            raise ValueError(f"need x0 < x1, got [{self.x0}, {self.x1})")
        if not self.y0 < self.y1:
            raise ValueError(f"need y0 < y1, got [{self.y0}, {self.y1})")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def x_center(self) -> float:
        return (self.x0 + self.x1) / 2

    @property
    def y_center(self) -> float:
        return (self.y0 + self.y1) / 2

    def clamped(self, width: int, height: int) -> "BBox | None":
        """Clip to a raster; None when nothing remains inside."""
        x0, y0 = max(self.x0, 0), max(self.y0, 0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)

    def x_overlap(self, other: "BBox") -> float:
        return max(0.0, min(self.x1, other.x1) - max(self.x0, other.x0))


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Detection:
    """A detected object in frame coordinates."""

    bbox: BBox
    class_label: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


@dataclass(frozen=True)
class ClassSet:
    """Ordered set of object class names."""

    labels: tuple[str, ...] = field(default=DEFAULT_CLASSES)

    def __post_init__(self):
        if not self.labels:
            raise ValueError("class set must not be empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"class labels must be unique, got {self.labels}")

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def __iter__(self):
        return iter(self.labels)


# ITU-R BT.601 luma weights; a fixed convention, applied everywhere alike.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luma(pixels: np.ndarray) -> np.ndarray:
    """Per-pixel luma of an RGB uint8 array of shape (..., 3), rounded half up."""
    if pixels.shape[-1] != 3:
        raise ValueError(f"expected trailing channel axis of 3, got {pixels.shape}")
    y = pixels.astype(np.float64) @ _LUMA_WEIGHTS
    return np.clip(y + 0.5, 0, 255).astype(np.uint8)
