"""Shared builders for compact test scenes and hand-placed crossings."""

from __future__ import annotations

from vrcount import CountingLine, SceneConfig, VideoMeta, crossings, gen_scene
from vrcount.synth import GroundTruth, SceneObject, _crossing_interval

TEST_MIX = {"Car": 0.5, "Van": 0.3, "Bus": 0.2}
TEST_SIZES = {"Car": (30, 60), "Van": (34, 80), "Bus": (38, 100)}


def small_scene(
    seed: int,
    frames: int = 700,
    width: int = 240,
    height: int = 240,
    lanes: int = 2,
    directions: tuple[str, ...] = (),
    rate: float = 3.0,
    speeds: tuple[float, float] = (2.0, 5.0),
    contrast: int = 60,
):
    config = SceneConfig(
        meta=VideoMeta(width, height, frames),
        lanes=lanes,
        lane_directions=directions or tuple(("down", "up") * lanes)[:lanes],
        spawn_rate_per_100=rate,
        speed_range=speeds,
        class_mix=dict(TEST_MIX),
        size_table=dict(TEST_SIZES),
        contrast=contrast,
        seed=seed,
    )
    return gen_scene(config), config


def place_crossing(
    meta: VideoMeta,
    line_row: int,
    first_frame: int,
    lane_x0: int = 20,
    width: int = 30,
    length: int = 24,
    speed: float = 2.0,
    direction: str = "down",
    object_id: int = 0,
    class_label: str = "Car",
) -> SceneObject:
    """Object whose crossing interval of line_row starts exactly at first_frame."""
    for spawn in range(max(0, first_frame - 2 * (meta.height_px + length)), first_frame + 1):
        obj = SceneObject(
            object_id, class_label, 0, direction, speed, spawn, lane_x0, lane_x0 + width, length
        )
        interval = _crossing_interval(meta.height_px, obj, line_row)
        if interval is not None and interval[0] == first_frame:
            return obj
    raise AssertionError(f"no spawn places a crossing starting at {first_frame}")


def straddling_objects(
    meta: VideoMeta,
    line_row: int,
    segment_length: int,
    boundaries: list[int],
    lanes_x0: list[int],
    length: int = 24,
    speed: float = 2.0,
) -> tuple[SceneObject, ...]:
    """One object per boundary whose crossing interval straddles it."""
    duration = int(length / speed)
    objects = []
    for i, k in enumerate(boundaries):
        boundary = k * segment_length
        first = boundary - max(1, duration // 2)
        objects.append(
            place_crossing(
                meta,
                line_row,
                first,
                lane_x0=lanes_x0[i % len(lanes_x0)],
                length=length,
                speed=speed,
                object_id=i,
            )
        )
    return tuple(objects)


def scene_from_objects(meta: VideoMeta, objects, config_overrides=None) -> tuple:
    """Scene around hand-placed objects; the config only matters for rendering."""
    mix = dict(TEST_MIX)
    sizes = {label: (min(w, meta.width_px - 6), l) for label, (w, l) in TEST_SIZES.items()}
    overrides = config_overrides or {}
    config = SceneConfig(
        meta=meta,
        lanes=overrides.get("lanes", 1),
        lane_directions=overrides.get("lane_directions", ()),
        class_mix=mix,
        size_table=sizes,
        speed_range=overrides.get("speed_range", (1.0, 5.0)),
        seed=0,
    )
    gt = GroundTruth(meta, tuple(mix), tuple(objects))
    return gt, config
