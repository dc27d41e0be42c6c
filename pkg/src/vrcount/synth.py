"""Deterministic synthetic road scenes with exact ground truth.

Vehicles are axis-aligned rectangles on a flat background moving at
constant velocity along vertical lanes (direction "down" enters from the
top, "up" from the bottom). Sub-pixel positions are truncated with floor,
matching the half-open box convention, so rendered geometry and the
analytic ground truth agree exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ingest import (
    FrameSource,
    SourceManifest,
    write_frame_dir,
    write_manifest,
    write_raw_video,
)
from .model import BBox, CountingLine, Frame, VideoMeta

DEFAULT_CLASS_MIX = {
    "Car": 0.55,
    "Bus": 0.07,
    "Motorbike": 0.10,
    "Pickup": 0.10,
    "Truck": 0.08,
    "Van": 0.10,
}

# Plausible top-view footprints (width, length) in pixels at 1280x720.
DEFAULT_SIZE_TABLE = {
    "Bus": (52, 200),
    "Car": (44, 95),
    "Motorbike": (18, 45),
    "Pickup": (46, 110),
    "Truck": (54, 180),
    "Van": (48, 120),
}

# Minimum clear frames between same-lane crossings of any one row, so a
# detector with closing radius 1 cannot merge consecutive marks.
MIN_CLEAR_LINE_ROWS = 3
# Extra slack applied at the probe rows to absorb +-1 quantization between
# the two frame-edge rows where the gap is actually checked.
_GAP_SLACK = 2
# Clear frames must also scale with crossing duration: a gap of 1.5x the
# longer neighbouring crossing caps steady-state per-column line occupancy
# at 40%, keeping the temporal-median background on the road side.
_GAP_DURATION_FACTOR = 1.5
# Minimum spatial gap between same-lane vehicles.
MIN_SPACE_GAP_PX = 2.0
LANE_EDGE_MARGIN_PX = 2

# Chroma tints per class index; each has near-zero luma so object luma stays
# within +-1 of background_luma + contrast.
_CLASS_TINTS = (
    (0, 0, 0),
    (8, -2, -10),
    (-8, 2, 10),
    (14, -4, -18),
    (-14, 4, 18),
    (4, -6, 20),
    (-4, 6, -20),
    (18, -6, -24),
)


@dataclass(frozen=True)
class SceneConfig:
    """Everything needed to generate and render one scene."""

    meta: VideoMeta = VideoMeta(1280, 720, 900)
    lanes: int = 3
    lane_directions: tuple[str, ...] = ()
    spawn_rate_per_100: float = 4.0
    speed_range: tuple[float, float] = (2.0, 6.0)
    class_mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    size_table: dict[str, tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_SIZE_TABLE)
    )
    background_luma: int = 90
    contrast: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError(f"lanes must be >= 1, got {self.lanes}")
        directions = self.lane_directions or ("down",) * self.lanes
        if len(directions) != self.lanes:
            raise ValueError(
                f"lane_directions has {len(directions)} entries for {self.lanes} lanes"
            )
        for d in directions:
            if d not in ("down", "up"):
                raise ValueError(f"lane direction must be down or up, got '{d}'")
        object.__setattr__(self, "lane_directions", tuple(directions))
        v_min, v_max = self.speed_range
        if v_min < 1:
            raise ValueError(f"speed_range minimum must be >= 1 px/frame, got {v_min}")
        if v_max < v_min:
            raise ValueError(f"speed_range must be (min, max), got {self.speed_range}")
        if self.spawn_rate_per_100 < 0:
            raise ValueError("spawn_rate_per_100 must be >= 0")
        if not self.class_mix:
            raise ValueError("class_mix must not be empty")
        if any(w < 0 for w in self.class_mix.values()):
            raise ValueError("class_mix weights must be non-negative")
        if not any(w > 0 for w in self.class_mix.values()):
            raise ValueError("class_mix weights must not all be zero")
        for label, weight in self.class_mix.items():
            if weight <= 0:
                continue
            if label not in self.size_table:
                raise ValueError(f"size_table has no entry for class '{label}'")
            width, length = self.size_table[label]
            if v_max > length:
                raise ValueError(
                    f"speed_range max {v_max} exceeds length {length} of class "
                    f"'{label}'; every crossing must span at least one frame"
                )
            if width > self.lane_width - 2 * LANE_EDGE_MARGIN_PX:
                raise ValueError(
                    f"class '{label}' width {width} does not fit lane width "
                    f"{self.lane_width:.0f} with {LANE_EDGE_MARGIN_PX} px margins"
                )
        if not 0 <= self.background_luma <= 255:
            raise ValueError(f"background_luma out of range: {self.background_luma}")
        if self.contrast < 1 or self.background_luma + self.contrast > 255 - 24:
            raise ValueError(
                f"contrast {self.contrast} with background {self.background_luma} "
                f"leaves no headroom for class tints"
            )

    @property
    def lane_width(self) -> float:
        return self.meta.width_px / self.lanes

    @property
    def class_labels(self) -> tuple[str, ...]:
        return tuple(self.class_mix)


@dataclass(frozen=True)
class SceneObject:
    """One vehicle: straight-line constant-velocity trajectory."""

    id: int
    class_label: str
    lane: int
    direction: str
    speed: float
    spawn_frame: int
    x0: int
    x1: int
    length: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0


@dataclass(frozen=True)
class CrossingEvent:
    """One ground-truth line crossing."""

    object_id: int
    class_label: str
    center_frame: int
    frame_interval: tuple[int, int]
    x_extent: tuple[int, int]

    @property
    def duration_frames(self) -> int:
        first, last = self.frame_interval
        return last - first + 1


@dataclass(frozen=True)
class GroundTruth:
    """Generated scene: geometry plus the full object list."""

    meta: VideoMeta
    class_labels: tuple[str, ...]
    objects: tuple[SceneObject, ...]

    def crossings(self, line: CountingLine) -> list[CrossingEvent]:
        return crossings(self, line)


def _y_lo(height_px: int, obj: SceneObject, t: float) -> float:
    """Real-valued top edge of the object's occupied [y_lo, y_lo + length)."""
    dt = t - obj.spawn_frame
    if obj.direction == "down":
        return obj.speed * dt - obj.length
    return height_px - obj.speed * dt


def object_box_at(meta: VideoMeta, obj: SceneObject, t: int) -> BBox | None:
    """Rendered box of obj at frame t, clipped to the frame; None off-screen."""
    if t < obj.spawn_frame:
        return None
    y0 = math.floor(_y_lo(meta.height_px, obj, t))
    y1 = y0 + obj.length
    return BBox(obj.x0, y0, obj.x1, y1).clamped(meta.width_px, meta.height_px)


def class_color(config: SceneConfig, label: str) -> tuple[int, int, int]:
    base = min(255, config.background_luma + config.contrast)
    labels = list(config.class_mix)
    idx = labels.index(label) if label in labels else 0
    dr, dg, db = _CLASS_TINTS[idx % len(_CLASS_TINTS)]
    return (
        int(np.clip(base + dr, 0, 255)),
        int(np.clip(base + dg, 0, 255)),
        int(np.clip(base + db, 0, 255)),
    )


def render_frame(gt: GroundTruth, config: SceneConfig, t: int) -> Frame:
    """Draw frame t: flat background plus one filled rectangle per visible object."""
    meta = config.meta
    if not 0 <= t < meta.frame_count:
        raise IndexError(f"frame {t} outside [0, {meta.frame_count})")
    raster = np.full(
        (meta.height_px, meta.width_px, 3), config.background_luma, dtype=np.uint8
    )
    for obj in gt.objects:
        box = object_box_at(meta, obj, t)
        if box is None:
            continue
        raster[int(box.y0) : int(box.y1), int(box.x0) : int(box.x1)] = class_color(
            config, obj.class_label
        )
    return Frame(t, raster)


def _crossing_interval(
    height_px: int, obj: SceneObject, line_row: int
) -> tuple[int, int] | None:
    """Frames whose rendered box contains line_row, ignoring video bounds.

    The rendered box covers line_row iff floor(y_lo) is in [row - L + 1, row],
    i.e. row - L + 1 <= y_lo < row + 1. A closed-form window locates the
    frames; each candidate is then tested with the exact rendering arithmetic
    so float boundary cases cannot disagree with the renderer.
    """
    length, v, t0 = obj.length, obj.speed, obj.spawn_frame
    if obj.direction == "down":
        lo = t0 + (line_row + 1) / v
        hi = t0 + (line_row + length + 1) / v
    else:
        lo = t0 + (height_px - line_row - 1) / v
        hi = t0 + (height_px - line_row + length - 1) / v + 1
    frames = [
        t
        for t in range(math.floor(lo) - 2, math.ceil(hi) + 2)
        if t >= t0 and line_row - length + 1 <= _y_lo(height_px, obj, t) < line_row + 1
    ]
    if not frames:
        return None
    return frames[0], frames[-1]


def _center_frame(
    height_px: int, obj: SceneObject, line_row: int, interval: tuple[int, int]
) -> int:
    """Crossing frame whose real object center is nearest the line row's middle."""
    first, last = interval
    target = line_row + 0.5
    return min(
        range(first, last + 1),
        key=lambda t: (abs(_y_lo(height_px, obj, t) + obj.length / 2 - target), t),
    )


def crossings(gt: GroundTruth, line: CountingLine) -> list[CrossingEvent]:
    """All in-video line crossings, sorted by center frame."""
    line.validate_for(gt.meta)
    h, fc = gt.meta.height_px, gt.meta.frame_count
    events = []
    for obj in gt.objects:
        interval = _crossing_interval(h, obj, line.row_px)
        if interval is None:
            continue
        first, last = interval
        if first >= fc or last < 0:
            continue
        first, last = max(first, 0), min(last, fc - 1)
        events.append(
            CrossingEvent(
                object_id=obj.id,
                class_label=obj.class_label,
                center_frame=_center_frame(h, obj, line.row_px, (first, last)),
                frame_interval=(first, last),
                x_extent=(obj.x0, obj.x1),
            )
        )
    events.sort(key=lambda e: (e.center_frame, e.object_id))
    return events


def _lane_x_extent(config: SceneConfig, lane: int, width: int) -> tuple[int, int]:
    center = (lane + 0.5) * config.lane_width
    x0 = int(center - width / 2)
    return x0, x0 + width


def _space_conflict(ahead: SceneObject, behind: SceneObject, height_px: int, horizon: int) -> bool:
    """True when `behind` closes to within the safety gap of `ahead` in-lane.

    Both travel the same direction; positions are linear in t, so checking
    the endpoints of the co-presence window suffices.
    """
    t_start = behind.spawn_frame
    exit_t = ahead.spawn_frame + (height_px + ahead.length) / ahead.speed
    t_end = min(horizon, math.ceil(exit_t))
    if t_end < t_start:
        return False
    for t in (t_start, t_end):
        dist_ahead = ahead.speed * (t - ahead.spawn_frame)
        dist_behind = behind.speed * (t - behind.spawn_frame)
        if dist_behind > dist_ahead - ahead.length - MIN_SPACE_GAP_PX:
            return True
    return False


def _line_gap_conflict(prev: SceneObject, cand: SceneObject, height_px: int) -> bool:
    """True when any row would see fewer clear frames than required between
    the two same-lane crossings. The gap is linear in the row, so the two
    frame-edge rows bound all rows between."""
    for row in (0, height_px - 1):
        prev_iv = _crossing_interval(height_px, prev, row)
        cand_iv = _crossing_interval(height_px, cand, row)
        if prev_iv is None or cand_iv is None:
            return True
        longest = max(
            prev_iv[1] - prev_iv[0] + 1, cand_iv[1] - cand_iv[0] + 1
        )
        need = max(
            MIN_CLEAR_LINE_ROWS + _GAP_SLACK,
            math.ceil(_GAP_DURATION_FACTOR * longest),
        )
        if cand_iv[0] - prev_iv[1] - 1 < need:
            return True
    return False


def _exit_frame(obj: SceneObject, height_px: int) -> int:
    """Last frame on which the object is still visible."""
    far_row = height_px - 1 if obj.direction == "down" else 0
    interval = _crossing_interval(height_px, obj, far_row)
    assert interval is not None
    return interval[1]


def gen_scene(config: SceneConfig) -> GroundTruth:
    """Deterministically generate a scene; same config yields the same scene.

    Spawns that would overlap in-lane or crowd the counting-line separation
    are delayed until clear; spawns that cannot fully exit the frame before
    the video ends are dropped, so no crossing is ever cut mid-event. When
    congestion forces more than half of the requested spawns to be dropped,
    the config is rejected as infeasible.
    """
    rng = np.random.default_rng(config.seed % (2**63))
    meta = config.meta
    labels = [c for c, w in config.class_mix.items() if w > 0]
    weights = np.array([config.class_mix[c] for c in labels], dtype=np.float64)
    weights /= weights.sum()

    target = int(rng.poisson(config.spawn_rate_per_100 * meta.frame_count / 100))
    requests = [
        (
            int(rng.integers(0, max(1, meta.frame_count))),
            int(rng.integers(0, config.lanes)),
            str(rng.choice(labels, p=weights)),
            float(rng.uniform(*config.speed_range)),
        )
        for _ in range(target)
    ]
    requests.sort(key=lambda r: r[0])

    per_lane: dict[int, SceneObject] = {}
    accepted: list[SceneObject] = []
    congestion_drops = 0
    for spawn, lane, label, speed in requests:
        width, length = config.size_table[label]
        x0, x1 = _lane_x_extent(config, lane, width)
        direction = config.lane_directions[lane]
        prev = per_lane.get(lane)
        t0 = spawn if prev is None else max(spawn, prev.spawn_frame + 1)
        as_requested = SceneObject(0, label, lane, direction, speed, spawn, x0, x1, length)
        fits_without_conflicts = _exit_frame(as_requested, meta.height_px) < meta.frame_count
        placed = None
        while t0 < meta.frame_count:
            cand = SceneObject(0, label, lane, direction, speed, t0, x0, x1, length)
            if prev is not None and (
                _space_conflict(prev, cand, meta.height_px, meta.frame_count)
                or _line_gap_conflict(prev, cand, meta.height_px)
            ):
                t0 += 1
                continue
            if _exit_frame(cand, meta.height_px) >= meta.frame_count:
                # Delaying only pushes the exit later; give up on this spawn.
                break
            placed = cand
            break
        if placed is None:
            # A spawn squeezed out by traffic is congestion; one that was too
            # late to exit the video anyway is the normal end-of-video drain.
            if fits_without_conflicts:
                congestion_drops += 1
            continue
        per_lane[lane] = placed
        accepted.append(placed)

    if target > 0 and congestion_drops > max(3, 0.5 * target):
        raise ValueError(
            f"spawn_rate_per_100={config.spawn_rate_per_100} is infeasible: "
            f"{congestion_drops} of {target} spawns could not be placed without overlap"
        )
    accepted.sort(key=lambda o: (o.spawn_frame, o.lane))
    objects = tuple(replace(o, id=i) for i, o in enumerate(accepted))
    return GroundTruth(meta, tuple(config.class_mix), objects)


class SceneFrameSource(FrameSource):
    """Frame source rendering scene frames on demand; no disk involved."""

    def __init__(self, gt: GroundTruth, config: SceneConfig):
        super().__init__(SourceManifest("scene", Path("<scene>"), config.meta))
        self.gt = gt
        self.config = config

    def read_frame(self, index: int) -> Frame:
        return render_frame(self.gt, self.config, index)

    def reopen(self) -> "SceneFrameSource":
        return SceneFrameSource(self.gt, self.config)


def write_scene(
    gt: GroundTruth,
    config: SceneConfig,
    out_dir: str | Path,
    layout: str = "raw_video",
    line: CountingLine | None = None,
) -> dict[str, Path]:
    """Write video data, manifest, and ground-truth JSON; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = (render_frame(gt, config, t).pixels for t in range(config.meta.frame_count))
    if layout == "raw_video":
        data_path = out_dir / "video.rgb24"
        write_raw_video(data_path, frames)
    elif layout == "frame_dir":
        data_path = out_dir / "frames"
        write_frame_dir(data_path, frames)
    else:
        raise ValueError(f"layout must be raw_video or frame_dir, got '{layout}'")
    manifest_path = write_manifest(out_dir / "manifest.json", layout, data_path, config.meta)
    gt_path = save_ground_truth(out_dir / "ground_truth.json", gt, config, line)
    return {"manifest": manifest_path, "data": data_path, "ground_truth": gt_path}


def save_ground_truth(
    path: str | Path,
    gt: GroundTruth,
    config: SceneConfig,
    line: CountingLine | None = None,
) -> Path:
    doc: dict = {
        "config": {
            "width": config.meta.width_px,
            "height": config.meta.height_px,
            "frame_count": config.meta.frame_count,
            "fps_num": config.meta.fps_num,
            "fps_den": config.meta.fps_den,
            "lanes": config.lanes,
            "lane_directions": list(config.lane_directions),
            "spawn_rate_per_100": config.spawn_rate_per_100,
            "speed_min": config.speed_range[0],
            "speed_max": config.speed_range[1],
            "class_mix": config.class_mix,
            "size_table": {c: list(wl) for c, wl in config.size_table.items()},
            "background_luma": config.background_luma,
            "contrast": config.contrast,
            "seed": config.seed,
        },
        "objects": [
            {
                "id": o.id,
                "class": o.class_label,
                "lane": o.lane,
                "direction": o.direction,
                "speed": o.speed,
                "spawn_frame": o.spawn_frame,
                "x0": o.x0,
                "x1": o.x1,
                "length": o.length,
            }
            for o in gt.objects
        ],
    }
    if line is not None:
        doc["line_row"] = line.row_px
        doc["crossings"] = [
            {
                "object_id": e.object_id,
                "class": e.class_label,
                "center_frame": e.center_frame,
                "first_frame": e.frame_interval[0],
                "last_frame": e.frame_interval[1],
                "x0": e.x_extent[0],
                "x1": e.x_extent[1],
            }
            for e in crossings(gt, line)
        ]
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_scene(path: str | Path) -> tuple[GroundTruth, SceneConfig]:
    """Load a ground-truth file back into (GroundTruth, SceneConfig)."""
    doc = json.loads(Path(path).read_text())
    c = doc["config"]
    config = SceneConfig(
        meta=VideoMeta(
            c["width"], c["height"], c["frame_count"], c["fps_num"], c["fps_den"]
        ),
        lanes=c["lanes"],
        lane_directions=tuple(c["lane_directions"]),
        spawn_rate_per_100=c["spawn_rate_per_100"],
        speed_range=(c["speed_min"], c["speed_max"]),
        class_mix={k: float(v) for k, v in c["class_mix"].items()},
        size_table={k: (int(v[0]), int(v[1])) for k, v in c["size_table"].items()},
        background_luma=c["background_luma"],
        contrast=c["contrast"],
        seed=c["seed"],
    )
    objects = tuple(
        SceneObject(
            id=o["id"],
            class_label=o["class"],
            lane=o["lane"],
            direction=o["direction"],
            speed=o["speed"],
            spawn_frame=o["spawn_frame"],
            x0=o["x0"],
            x1=o["x1"],
            length=o["length"],
        )
        for o in doc["objects"]
    )
    return GroundTruth(config.meta, config.class_labels, objects), config
