"""Counting pipeline core: map marks to frames, match marks to vehicle
detections, suppress cross-segment duplicates, and aggregate per-class counts.

The expensive detector work per segment (VR build plus mark detection) can
run on worker threads; duplicate suppression and count aggregation are a
strict sequential fold over segments in temporal order, so results do not
depend on the thread count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .detect import MarkDetector, VehicleDetector
from .ingest import FrameSource
from .model import CountingLine, Detection
from .vr import Mark, SegmentSpec, VRImage, vr_build, vr_build_segment

DEFAULT_EDGE_MARGIN_PX = 2


@dataclass(frozen=True)
class MatchParams:
    """Mark-to-detection matching tunables.

    A detection is a candidate when its confidence clears min_det_conf and
    its box vertically intersects the band of +-band_margin_px around the
    counting line; the best candidate is rejected when its edge-distance
    score exceeds max_interval_dist_frac of the mark width.
    """

    band_margin_px: int = 100
    max_interval_dist_frac: float = 0.5
    min_det_conf: float = 0.0

    def __post_init__(self):
        if self.band_margin_px < 0:
            raise ValueError(f"band_margin_px must be >= 0, got {self.band_margin_px}")
        if self.max_interval_dist_frac <= 0:
            raise ValueError(
                f"max_interval_dist_frac must be > 0, got {self.max_interval_dist_frac}"
            )
        if not 0.0 <= self.min_det_conf <= 1.0:
            raise ValueError(f"min_det_conf must be in [0,1], got {self.min_det_conf}")


@dataclass(frozen=True)
class EdgeMarkLedger:
    """x-intervals of marks touching one segment's lower (later-time) edge."""

    segment_index: int
    intervals: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class CountedVehicle:
    """One counted crossing: the frame it was counted at and its evidence."""

    global_frame: int
    class_label: str
    mark: Mark | None
    detection: Detection | None
    score: float = 0.0


@dataclass(frozen=True)
class CountReport:
    per_class: dict[str, int]
    total: int
    counted: tuple[CountedVehicle, ...]
    rejected_marks: int

    def __post_init__(self):
        if self.total != sum(self.per_class.values()) or self.total != len(self.counted):
            raise ValueError(
                f"inconsistent report: total={self.total}, "
                f"per_class sum={sum(self.per_class.values())}, counted={len(self.counted)}"
            )


def mark_to_frame(mark: Mark, segment_start: int) -> int:
    """Global index of the frame at the mark's center row (floor on ties)."""
    return segment_start + math.floor((mark.bbox.y0 + mark.bbox.y1 - 1) / 2)


def match_score(mark: Mark, detection: Detection) -> float:
    """Distance between mark and detection x-extents: both edges, summed."""
    return abs(detection.bbox.x0 - mark.bbox.x0) + abs(detection.bbox.x1 - mark.bbox.x1)


def match_mark(
    mark: Mark,
    detections: list[Detection],
    line: CountingLine,
    params: MatchParams,
) -> Detection | None:
    """Best detection for the mark, or None when nothing qualifies.

    Ties on the edge-distance score go to the detection whose vertical
    center is closest to the counting line, then to the smallest x0.
    """
    band_lo = line.row_px - params.band_margin_px
    band_hi = line.row_px + params.band_margin_px
    candidates = [
        d
        for d in detections
        if d.confidence >= params.min_det_conf
        and d.bbox.y0 <= band_hi
        and d.bbox.y1 > band_lo
    ]
    if not candidates:
        return None
    best = min(
        candidates,
        key=lambda d: (
            match_score(mark, d),
            abs(d.bbox.y_center - line.row_px),
            d.bbox.x0,
        ),
    )
    if match_score(mark, best) > params.max_interval_dist_frac * mark.bbox.width:
        return None
    return best


def dedup_filter(
    marks: list[Mark],
    ledger_prev: EdgeMarkLedger | None,
    vr_height: int,
    edge_margin_px: int = DEFAULT_EDGE_MARGIN_PX,
    segment_index: int = 0,
) -> tuple[list[Mark], EdgeMarkLedger]:
    """Drop marks continuing a crossing already seen in the previous segment.

    A mark touching the upper (earlier-time) edge is discarded iff its
    x-center falls inside an interval remembered from the previous segment's
    lower edge. Lower-edge intervals are recorded for every incoming mark,
    discarded or not, so a crossing spanning several segments is counted
    exactly once.
    """
    if ledger_prev is not None and ledger_prev.segment_index != segment_index - 1:
        raise ValueError(
            f"ledger from segment {ledger_prev.segment_index} is not adjacent to "
            f"segment {segment_index}"
        )
    prev_intervals = ledger_prev.intervals if ledger_prev is not None else ()
    kept = []
    for mark in marks:
        touches_upper = mark.bbox.y0 <= edge_margin_px
        duplicate = touches_upper and any(
            x0 <= mark.bbox.x_center < x1 for x0, x1 in prev_intervals
        )
        if not duplicate:
            kept.append(mark)
    lower_intervals = tuple(
        (mark.bbox.x0, mark.bbox.x1)
        for mark in marks
        if mark.bbox.y1 >= vr_height - edge_margin_px
    )
    return kept, EdgeMarkLedger(segment_index, lower_intervals)


def _count_segment(
    kept: list[Mark],
    start_frame: int,
    reader: FrameSource,
    vehicle_detector: VehicleDetector,
    line: CountingLine,
    params: MatchParams,
    counted: list[CountedVehicle],
) -> int:
    """Match one segment's kept marks; returns the number rejected.

    Marks are processed in (target frame, y0, x0) order and each matched
    detection is consumed, so two marks mapping to the same frame cannot
    claim the same vehicle. The detector runs once per kept mark.
    """
    rejected = 0
    consumed: dict[int, list[Detection]] = {}
    for mark in sorted(
        kept, key=lambda m: (mark_to_frame(m, start_frame), m.bbox.y0, m.bbox.x0)
    ):
        t = mark_to_frame(mark, start_frame)
        frame = reader.read_frame(t)
        pool = list(vehicle_detector(frame))
        for used in consumed.get(t, ()):
            try:
                pool.remove(used)
            except ValueError:
                pass
        best = match_mark(mark, pool, line, params)
        if best is None:
            rejected += 1
            continue
        consumed.setdefault(t, []).append(best)
        counted.append(
            CountedVehicle(t, best.class_label, mark, best, match_score(mark, best))
        )
    return rejected


def count_video(
    source: FrameSource,
    spec: SegmentSpec,
    mark_detector: MarkDetector,
    vehicle_detector: VehicleDetector,
    params: MatchParams | None = None,
    edge_margin_px: int = DEFAULT_EDGE_MARGIN_PX,
    threads: int = 1,
) -> CountReport:
    """Run the full counting pipeline over one video.

    With threads > 1, VR construction and mark detection run on workers over
    reopened sources while deduplication and counting fold segments in
    temporal order, so the report is identical for any thread count.
    """
    params = params or MatchParams()
    meta = source.meta
    spec.line.validate_for(meta)
    counted: list[CountedVehicle] = []
    rejected = 0
    ledger: EdgeMarkLedger | None = None
    reader = source.reopen()
    try:
        if threads > 1:
            segments = range(spec.segment_count(meta.frame_count))

            def detect_segment(k: int) -> tuple[int, int, int, list[Mark]]:
                worker_src = source.reopen()
                try:
                    vr = vr_build_segment(worker_src, spec, k)
                finally:
                    worker_src.close()
                return k, vr.height, vr.start_frame, mark_detector(vr)

            with ThreadPoolExecutor(max_workers=threads) as pool:
                for k, height, start, marks in pool.map(detect_segment, segments):
                    kept, ledger = dedup_filter(
                        marks, ledger, height, edge_margin_px, k
                    )
                    rejected += _count_segment(
                        kept, start, reader, vehicle_detector, spec.line, params, counted
                    )
        else:
            for vr in vr_build(source, spec):
                marks = mark_detector(vr)
                kept, ledger = dedup_filter(
                    marks, ledger, vr.height, edge_margin_px, vr.segment_index
                )
                rejected += _count_segment(
                    kept, vr.start_frame, reader, vehicle_detector, spec.line, params, counted
                )
    finally:
        reader.close()
    per_class: dict[str, int] = {}
    for cv in counted:
        per_class[cv.class_label] = per_class.get(cv.class_label, 0) + 1
    return CountReport(per_class, len(counted), tuple(counted), rejected)


def report_to_dict(report: CountReport) -> dict:
    return {
        "per_class": dict(sorted(report.per_class.items())),
        "total": report.total,
        "rejected_marks": report.rejected_marks,
        "counted": [
            {
                "global_frame": cv.global_frame,
                "class": cv.class_label,
                "mark_bbox": _bbox_list(cv.mark.bbox) if cv.mark else None,
                "detection_bbox": _bbox_list(cv.detection.bbox) if cv.detection else None,
                "score": cv.score,
            }
            for cv in report.counted
        ],
    }


def _bbox_list(bbox) -> list[float]:
    return [bbox.x0, bbox.y0, bbox.x1, bbox.y1]


def format_report_table(report: CountReport) -> str:
    """Human-readable report: per-class totals plus one row per counted vehicle."""
    lines = ["class counts:"]
    for label, n in sorted(report.per_class.items()):
        lines.append(f"  {label:<12} {n}")
    lines.append(f"  {'TOTAL':<12} {report.total}")
    lines.append(f"rejected marks: {report.rejected_marks}")
    lines.append("")
    header = f"{'frame':>8}  {'class':<12} {'mark bbox':<26} {'detection bbox':<26} {'score':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    for cv in sorted(report.counted, key=lambda c: c.global_frame):
        mark_s = _fmt_bbox(cv.mark.bbox) if cv.mark else "-"
        det_s = _fmt_bbox(cv.detection.bbox) if cv.detection else "-"
        lines.append(
            f"{cv.global_frame:>8}  {cv.class_label:<12} {mark_s:<26} {det_s:<26} {cv.score:>7.1f}"
        )
    return "\n".join(lines) + "\n"


def _fmt_bbox(bbox) -> str:
    return f"({bbox.x0:.0f},{bbox.y0:.0f},{bbox.x1:.0f},{bbox.y1:.0f})"


def write_report_files(report: CountReport, json_path: str | Path, table_path: str | Path) -> None:
    Path(json_path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n")
    Path(table_path).write_text(format_report_table(report))
