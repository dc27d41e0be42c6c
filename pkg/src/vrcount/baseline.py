"""Frame-by-frame detect-and-track counter used as the cost comparison system.

The tracker is deliberately plain: greedy one-to-one IoU association with
an age-based retirement policy. On clean constant-velocity scenes it tracks
perfectly, which keeps the accuracy comparison fair while preserving the
cost structure of detect-on-every-frame counting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .count import CountedVehicle, CountReport
from .detect import VehicleDetector
from .ingest import FrameSource
from .model import BBox, CountingLine, Detection, bbox_iou


@dataclass(frozen=True)
class TrackerParams:
    iou_threshold: float = 0.3
    max_age_frames: int = 5
    min_hits: int = 2

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in (0,1], got {self.iou_threshold}")
        if self.max_age_frames < 1:
            raise ValueError(f"max_age_frames must be >= 1, got {self.max_age_frames}")
        if self.min_hits < 1:
            raise ValueError(f"min_hits must be >= 1, got {self.min_hits}")


@dataclass
class Track:
    """Mutable per-object tracker state; single-threaded use only."""

    id: int
    last_bbox: BBox
    last_frame: int
    class_votes: dict[str, int] = field(default_factory=dict)
    crossed: bool = False
    history: list[tuple[int, float]] = field(default_factory=list)
    last_detection: Detection | None = None

    @property
    def hits(self) -> int:
        return len(self.history)

    def majority_class(self) -> str:
        return min(self.class_votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def tracker_step(
    tracks: list[Track],
    detections: list[Detection],
    frame: int,
    params: TrackerParams,
    next_id: int = 0,
) -> tuple[list[Track], int]:
    """One association step: greedy descending-IoU one-to-one matching.

    Matched tracks are updated in place, unmatched detections open new
    tracks, and tracks unseen for more than max_age_frames are retired.
    Returns the surviving tracks and the next free track id.
    """
    for track in tracks:
        if frame <= track.last_frame:
            raise ValueError(
                f"frame {frame} is not after track {track.id}'s last frame {track.last_frame}"
            )
    pairs = sorted(
        (
            (bbox_iou(t.last_bbox, d.bbox), ti, di)
            for ti, t in enumerate(tracks)
            for di, d in enumerate(detections)
        ),
        key=lambda p: (-p[0], p[1], p[2]),
    )
    used_tracks: set[int] = set()
    used_dets: set[int] = set()
    for iou, ti, di in pairs:
        if iou < params.iou_threshold:
            break
        if ti in used_tracks or di in used_dets:
            continue
        used_tracks.add(ti)
        used_dets.add(di)
        track, det = tracks[ti], detections[di]
        track.last_bbox = det.bbox
        track.last_frame = frame
        track.last_detection = det
        track.class_votes[det.class_label] = track.class_votes.get(det.class_label, 0) + 1
        track.history.append((frame, det.bbox.y_center))
    out = list(tracks)
    for di, det in enumerate(detections):
        if di in used_dets:
            continue
        out.append(
            Track(
                id=next_id,
                last_bbox=det.bbox,
                last_frame=frame,
                class_votes={det.class_label: 1},
                history=[(frame, det.bbox.y_center)],
                last_detection=det,
            )
        )
        next_id += 1
    out = [t for t in out if frame - t.last_frame <= params.max_age_frames]
    return out, next_id


def baseline_count(
    source: FrameSource,
    line: CountingLine,
    vehicle_detector: VehicleDetector,
    params: TrackerParams | None = None,
) -> CountReport:
    """Detect on every frame, track, and count line crossings once per track.

    A track counts when it has at least min_hits observations and its box
    center passes the counting line between consecutive observations, in
    either direction; the crossed latch prevents recounting.
    """
    params = params or TrackerParams()
    line.validate_for(source.meta)
    row = line.row_px
    tracks: list[Track] = []
    next_id = 0
    counted: list[CountedVehicle] = []
    for frame in source:
        detections = vehicle_detector(frame)
        tracks, next_id = tracker_step(tracks, detections, frame.index, params, next_id)
        for track in tracks:
            if (
                track.crossed
                or track.last_frame != frame.index
                or track.hits < params.min_hits
            ):
                continue
            prev_y = track.history[-2][1]
            cur_y = track.history[-1][1]
            if (prev_y < row <= cur_y) or (prev_y > row >= cur_y):
                track.crossed = True
                counted.append(
                    CountedVehicle(
                        global_frame=frame.index,
                        class_label=track.majority_class(),
                        mark=None,
                        detection=track.last_detection,
                    )
                )
    per_class: dict[str, int] = {}
    for cv in counted:
        per_class[cv.class_label] = per_class.get(cv.class_label, 0) + 1
    return CountReport(per_class, len(counted), tuple(counted), rejected_marks=0)
