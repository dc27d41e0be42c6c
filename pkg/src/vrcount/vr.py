"""Time-spatial image construction: one row per frame along the counting line.

A video is split into contiguous non-overlapping segments of fixed length;
each segment yields one image whose row r is the counting-line pixel row of
frame segment_start + r. Segment k covers frames [k*T, (k+1)*T) globally,
and a short final segment is emitted as-is, never padded.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .ingest import FrameSource
from .model import BBox, CountingLine, PipelineError

DEFAULT_SEGMENT_LENGTH = 900

MARK_OUTLINE_RGB = (255, 48, 48)


@dataclass(frozen=True)
class SegmentSpec:
    """Segment length in frames plus the counting line to sample."""

    segment_length_frames: int = DEFAULT_SEGMENT_LENGTH
    line: CountingLine = CountingLine()

    def __post_init__(self):
        if self.segment_length_frames < 2:
            raise ValueError(
                f"segment_length_frames must be >= 2, got {self.segment_length_frames}"
            )

    def segment_count(self, frame_count: int) -> int:
        return -(-frame_count // self.segment_length_frames)

    def segment_bounds(self, segment_index: int, frame_count: int) -> tuple[int, int]:
        start = segment_index * self.segment_length_frames
        return start, min(start + self.segment_length_frames, frame_count)


@dataclass(frozen=True)
class VRImage:
    """Time-spatial raster for one segment: rows index time, columns space."""

    segment_index: int
    start_frame: int
    rows: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 3 or self.rows.shape[2] != 3 or self.rows.dtype != np.uint8:
            raise ValueError(f"expected T x N x 3 uint8 raster, got {self.rows.shape}")
        self.rows.setflags(write=False)

    @property
    def height(self) -> int:
        return self.rows.shape[0]

    @property
    def width(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Mark:
    """Connected region an object leaves while intersecting the counting line.

    Coordinates are in the owning VR image: y spans the frames of
    intersection (so the box height is the crossing duration), x spans the
    object's spatial extent.
    """

    bbox: BBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")
        if self.bbox.height < 1:
            raise ValueError(f"mark height must be >= 1, got {self.bbox.height}")


def vr_build(source: FrameSource, spec: SegmentSpec) -> Iterator[VRImage]:
    """Stream one VR image per segment, holding at most one segment in memory."""
    meta = source.meta
    spec.line.validate_for(meta)
    row_buf: list[np.ndarray] = []
    segment_index = 0
    while True:
        try:
            frame = source.next_frame()
        except PipelineError as exc:
            raise type(exc)(
                f"segment {segment_index}: {exc}"
            ) from exc
        if frame is not None:
            row_buf.append(frame.pixels[spec.line.row_px])
        if row_buf and (
            frame is None or len(row_buf) == spec.segment_length_frames
        ):
            yield VRImage(
                segment_index,
                segment_index * spec.segment_length_frames,
                np.stack(row_buf),
            )
            segment_index += 1
            row_buf = []
        if frame is None:
            return


def vr_build_segment(source: FrameSource, spec: SegmentSpec, segment_index: int) -> VRImage:
    """Build one segment's VR image by random access; safe to run per-worker."""
    meta = source.meta
    spec.line.validate_for(meta)
    start, end = spec.segment_bounds(segment_index, meta.frame_count)
    if start >= end:
        raise IndexError(f"segment {segment_index} is empty for {meta.frame_count} frames")
    rows = np.stack(
        [source.read_frame(t).pixels[spec.line.row_px] for t in range(start, end)]
    )
    return VRImage(segment_index, start, rows)


def vr_render(vr: VRImage, marks: list[Mark], out: str | Path) -> Path:
    """Write the VR raster as a PNG with marks outlined; pixels outside the
    1 px outlines are bit-identical to the raster."""
    raster = np.array(vr.rows, copy=True)
    color = np.array(MARK_OUTLINE_RGB, dtype=np.uint8)
    for mark in marks:
        x0, y0 = int(mark.bbox.x0), int(mark.bbox.y0)
        x1, y1 = int(mark.bbox.x1), int(mark.bbox.y1)
        if not (0 <= x0 < x1 <= vr.width and 0 <= y0 < y1 <= vr.height):
            raise ValueError(f"mark {mark.bbox} outside VR raster {vr.height}x{vr.width}")
        raster[y0, x0:x1] = color
        raster[y1 - 1, x0:x1] = color
        raster[y0:y1, x0] = color
        raster[y0:y1, x1 - 1] = color
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raster).save(out)
    return out
