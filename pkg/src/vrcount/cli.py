"""Command-line entry point.

Subcommands: synth (generate a scene), count (keyframe counting pipeline),
baseline (frame-by-frame tracking counter), bench (head-to-head comparison),
vr-render (write time-spatial images with mark overlays).

Options resolve as: explicit flag > VRCOUNT_OUTPUT_DIR (output dir only) >
--config file value > built-in default. Every run writes the fully resolved
options to run_config.json beside its outputs; that file is itself a valid
--config input, so any run can be reproduced from its record.

Exit codes: 0 success, 1 pipeline error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .baseline import TrackerParams, baseline_count
from .bench import run_comparison, format_bench_table, write_bench_files
from .count import MatchParams, count_video, format_report_table, write_report_files
from .detect import (
    DetectorNoise,
    ExternalDetector,
    ExternalDetectorConfig,
    MarkDetector,
    MarkDetectorParams,
    VehicleDetector,
    classical_mark_detector,
    external_mark_detector,
    external_vehicle_detector,
    oracle_mark_detector,
    oracle_vehicle_detector,
)
from .ingest import open_source
from .model import ClassSet, CountingLine, PipelineError, DEFAULT_LINE_ROW
from .synth import (
    SceneConfig,
    crossings,
    gen_scene,
    load_scene,
    write_scene,
)
from .model import VideoMeta
from .vr import DEFAULT_SEGMENT_LENGTH, SegmentSpec, vr_build, vr_render

OUTPUT_DIR_ENV = "VRCOUNT_OUTPUT_DIR"


class ConfigError(Exception):
    """Bad flag, config key, or referenced file; maps to exit code 2."""


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable
    default: Any
    help: str
    choices: tuple | None = None


_OUT = Option("out", str, "vrcount-out", "output directory")
_THREADS = Option("threads", int, os.cpu_count() or 1, "worker threads for segment processing")
_MANIFEST = Option("manifest", str, None, "path to a video manifest JSON (required)")
_GROUND_TRUTH = Option("ground_truth", str, None, "path to a scene ground-truth JSON")
_LINE_ROW = Option("line_row", int, DEFAULT_LINE_ROW, "counting line row in pixels")
_SEGMENT_LENGTH = Option("segment_length", int, DEFAULT_SEGMENT_LENGTH, "frames per segment")
_EXTERNAL_CMD = Option("external_cmd", str, None, "external detector command line")
_EXTERNAL_TIMEOUT = Option("external_timeout", float, 30.0, "external detector timeout in seconds")
_NOISE = (
    Option("noise_jitter", int, 0, "oracle detector box jitter in pixels"),
    Option("noise_miss", float, 0.0, "oracle detector miss probability per box"),
    Option("noise_spurious", float, 0.0, "expected spurious boxes per oracle invocation"),
    Option("noise_seed", int, 0, "oracle detector noise seed"),
)
_MARK_PARAMS = (
    Option("luma_threshold", int, 25, "classical detector luma deviation threshold"),
    Option("min_area", int, 40, "classical detector minimum component area"),
    Option("min_height", int, 2, "classical detector minimum mark height"),
    Option("morph_radius", int, 1, "classical detector closing radius"),
)
_MATCH_PARAMS = (
    Option("band_margin", int, 100, "vertical candidate band around the line"),
    Option("max_dist_frac", float, 0.5, "match rejection threshold as fraction of mark width"),
    Option("min_det_conf", float, 0.0, "minimum detection confidence considered"),
    Option("edge_margin", int, 2, "segment-edge margin for duplicate suppression"),
)
_TRACKER_PARAMS = (
    Option("iou_threshold", float, 0.3, "baseline association IoU threshold"),
    Option("max_age", int, 5, "baseline track retirement age in frames"),
    Option("min_hits", int, 2, "baseline observations required before counting"),
)

OPTIONS: dict[str, tuple[Option, ...]] = {
    "synth": (
        _OUT,
        Option("seed", int, 0, "scene random seed"),
        Option("frames", int, 900, "video length in frames"),
        Option("width", int, 1280, "frame width in pixels"),
        Option("height", int, 720, "frame height in pixels"),
        Option("fps_num", int, 30, "frame rate numerator"),
        Option("fps_den", int, 1, "frame rate denominator"),
        Option("lanes", int, 3, "number of lanes"),
        Option("lane_directions", str, "", "comma-separated per-lane directions (down|up)"),
        Option("spawn_rate", float, 4.0, "expected vehicles per 100 frames"),
        Option("speed_min", float, 2.0, "minimum speed in px/frame"),
        Option("speed_max", float, 6.0, "maximum speed in px/frame"),
        Option("background_luma", int, 90, "road luma"),
        Option("contrast", int, 60, "object-background luma contrast"),
        Option("class_mix", str, "", "comma list label=weight; empty for defaults"),
        Option("size_table", str, "", "comma list label=WxL in pixels; empty for defaults"),
        Option("layout", str, "raw_video", "video layout", ("raw_video", "frame_dir")),
        _LINE_ROW,
    ),
    "count": (
        _OUT,
        _MANIFEST,
        _SEGMENT_LENGTH,
        _LINE_ROW,
        Option("mark_detector", str, "classical", "mark detector backend",
               ("classical", "oracle", "external")),
        Option("detector", str, "oracle", "vehicle detector backend", ("oracle", "external")),
        _GROUND_TRUTH,
        _EXTERNAL_CMD,
        _EXTERNAL_TIMEOUT,
        *_MARK_PARAMS,
        *_MATCH_PARAMS,
        *_NOISE,
        _THREADS,
    ),
    "baseline": (
        _OUT,
        _MANIFEST,
        _LINE_ROW,
        Option("detector", str, "oracle", "vehicle detector backend", ("oracle", "external")),
        _GROUND_TRUTH,
        _EXTERNAL_CMD,
        _EXTERNAL_TIMEOUT,
        *_TRACKER_PARAMS,
        *_NOISE,
    ),
    "bench": (
        _OUT,
        _MANIFEST,
        _GROUND_TRUTH,
        _SEGMENT_LENGTH,
        _LINE_ROW,
        Option("stub_latency_ms", float, 0.0, "injected latency per detector invocation"),
        Option("mark_detector", str, "classical", "mark detector backend",
               ("classical", "oracle")),
        Option("tolerance_frames", int, 5, "event matching tolerance for scoring"),
        *_MARK_PARAMS,
        *_MATCH_PARAMS,
        *_TRACKER_PARAMS,
        *_NOISE,
    ),
    "vr-render": (
        _OUT,
        _MANIFEST,
        _SEGMENT_LENGTH,
        _LINE_ROW,
        Option("mark_detector", str, "classical", "mark detector backend",
               ("classical", "oracle", "external", "none")),
        _GROUND_TRUTH,
        _EXTERNAL_CMD,
        _EXTERNAL_TIMEOUT,
        *_MARK_PARAMS,
    ),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrcount",
        description="Line-crossing object counting from time-spatial images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        for opt in options:
            flag = "--" + opt.name.replace("_", "-")
            kwargs: dict = {"type": opt.type, "default": None, "help": opt.help}
            if opt.choices:
                kwargs["choices"] = opt.choices
            p.add_argument(flag, dest=opt.name, **kwargs)
    return parser


def _load_config_file(path: str, options: tuple[Option, ...]) -> dict:
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"--config: file not found: {path}")
    try:
        doc = json.loads(config_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--config: {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"--config: {path} must hold a JSON object")
    known = {opt.name for opt in options} | {"command"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"--config: unknown key '{key}' in {path}")
    return doc


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    options = OPTIONS[command]
    file_values = _load_config_file(args.config, options) if args.config else {}
    resolved = {}
    for opt in options:
        flag_value = getattr(args, opt.name)
        if flag_value is not None:
            value = flag_value
        elif opt.name == "out" and os.environ.get(OUTPUT_DIR_ENV):
            value = os.environ[OUTPUT_DIR_ENV]
        elif opt.name in file_values and file_values[opt.name] is not None:
            value = opt.type(file_values[opt.name])
            if opt.choices and value not in opt.choices:
                raise ConfigError(f"--config: {opt.name} must be one of {opt.choices}")
        else:
            value = opt.default
        resolved[opt.name] = value
    return resolved


def _write_run_config(command: str, resolved: dict, out_dir: Path) -> None:
    record = {"command": command, **resolved}
    (out_dir / "run_config.json").write_text(json.dumps(record, indent=2) + "\n")


def _parse_pairs(text: str, what: str) -> dict[str, str]:
    pairs = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"--{what}: expected label=value entries, got '{item}'")
        label, value = item.split("=", 1)
        pairs[label.strip()] = value.strip()
    return pairs


def _scene_config(o: dict) -> SceneConfig:
    class_mix = None
    if o["class_mix"]:
        class_mix = {}
        for label, w in _parse_pairs(o["class_mix"], "class-mix").items():
            try:
                class_mix[label] = float(w)
            except ValueError:
                raise ConfigError(f"--class-mix: weight for '{label}' is not a number") from None
    size_table = None
    if o["size_table"]:
        size_table = {}
        for label, wl in _parse_pairs(o["size_table"], "size-table").items():
            try:
                w, l = wl.lower().split("x")
                size_table[label] = (int(w), int(l))
            except ValueError:
                raise ConfigError(f"--size-table: '{label}={wl}' is not label=WxL") from None
    directions = tuple(filter(None, (d.strip() for d in o["lane_directions"].split(","))))
    kwargs: dict = dict(
        meta=VideoMeta(o["width"], o["height"], o["frames"], o["fps_num"], o["fps_den"]),
        lanes=o["lanes"],
        lane_directions=directions,
        spawn_rate_per_100=o["spawn_rate"],
        speed_range=(o["speed_min"], o["speed_max"]),
        background_luma=o["background_luma"],
        contrast=o["contrast"],
        seed=o["seed"],
    )
    if class_mix is not None:
        kwargs["class_mix"] = class_mix
    if size_table is not None:
        kwargs["size_table"] = size_table
    return SceneConfig(**kwargs)


def _require(o: dict, name: str) -> Any:
    if o.get(name) in (None, ""):
        raise ConfigError(f"--{name.replace('_', '-')} is required for this command")
    return o[name]


def _load_gt(o: dict):
    path = Path(_require(o, "ground_truth"))
    if not path.is_file():
        raise ConfigError(f"--ground-truth: file not found: {path}")
    return load_scene(path)


def _mark_params(o: dict) -> MarkDetectorParams:
    return MarkDetectorParams(
        luma_threshold=o["luma_threshold"],
        min_area_px=o["min_area"],
        min_height_px=o["min_height"],
        morph_close_radius=o["morph_radius"],
    )


def _match_params(o: dict) -> MatchParams:
    return MatchParams(
        band_margin_px=o["band_margin"],
        max_interval_dist_frac=o["max_dist_frac"],
        min_det_conf=o["min_det_conf"],
    )


def _tracker_params(o: dict) -> TrackerParams:
    return TrackerParams(
        iou_threshold=o["iou_threshold"],
        max_age_frames=o["max_age"],
        min_hits=o["min_hits"],
    )


def _noise(o: dict) -> DetectorNoise:
    return DetectorNoise(
        jitter_px=o["noise_jitter"],
        miss_rate=o["noise_miss"],
        spurious_rate=o["noise_spurious"],
        seed=o["noise_seed"],
    )


def _external_endpoint(o: dict) -> ExternalDetector:
    import shlex

    cmd = shlex.split(_require(o, "external_cmd"))
    return ExternalDetector(ExternalDetectorConfig(tuple(cmd), o["external_timeout"]))


def _out_dir(o: dict) -> Path:
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_synth(o: dict) -> int:
    config = _scene_config(o)
    out = _out_dir(o)
    gt = gen_scene(config)
    line = CountingLine(o["line_row"])
    line.validate_for(config.meta)
    paths = write_scene(gt, config, out, o["layout"], line)
    _write_run_config("synth", o, out)
    events = crossings(gt, line)
    print(f"scene: {len(gt.objects)} objects, {len(events)} crossings at row {line.row_px}")
    print(f"manifest: {paths['manifest']}")
    print(f"ground truth: {paths['ground_truth']}")
    return 0


def _cmd_count(o: dict) -> int:
    out = _out_dir(o)
    line = CountingLine(o["line_row"])
    spec = SegmentSpec(o["segment_length"], line)
    source = open_source(_require(o, "manifest"))
    line.validate_for(source.meta)
    endpoint = None
    gt = None
    if "oracle" in (o["mark_detector"], o["detector"]):
        gt, _ = _load_gt(o)
    if "external" in (o["mark_detector"], o["detector"]):
        endpoint = _external_endpoint(o)

    if o["mark_detector"] == "classical":
        mark_det: MarkDetector = classical_mark_detector(_mark_params(o))
    elif o["mark_detector"] == "oracle":
        mark_det = oracle_mark_detector(gt, spec)
    else:
        mark_det = external_mark_detector(endpoint)
    if o["detector"] == "oracle":
        vehicle_det: VehicleDetector = oracle_vehicle_detector(gt, _noise(o))
    else:
        vehicle_det = external_vehicle_detector(endpoint, None)

    _write_run_config("count", o, out)
    try:
        report = count_video(
            source,
            spec,
            mark_det,
            vehicle_det,
            _match_params(o),
            edge_margin_px=o["edge_margin"],
            threads=max(1, o["threads"]),
        )
    finally:
        source.close()
        if endpoint is not None:
            endpoint.close()
    write_report_files(report, out / "report.json", out / "report.txt")
    sys.stdout.write(format_report_table(report))
    return 0


def _cmd_baseline(o: dict) -> int:
    out = _out_dir(o)
    line = CountingLine(o["line_row"])
    source = open_source(_require(o, "manifest"))
    line.validate_for(source.meta)
    endpoint = None
    if o["detector"] == "oracle":
        gt, _ = _load_gt(o)
        vehicle_det: VehicleDetector = oracle_vehicle_detector(gt, _noise(o))
    else:
        endpoint = _external_endpoint(o)
        vehicle_det = external_vehicle_detector(endpoint, None)
    _write_run_config("baseline", o, out)
    try:
        report = baseline_count(source, line, vehicle_det, _tracker_params(o))
    finally:
        source.close()
        if endpoint is not None:
            endpoint.close()
    write_report_files(report, out / "report.json", out / "report.txt")
    sys.stdout.write(format_report_table(report))
    return 0


def _cmd_bench(o: dict) -> int:
    out = _out_dir(o)
    line = CountingLine(o["line_row"])
    spec = SegmentSpec(o["segment_length"], line)
    manifest = _require(o, "manifest")
    gt, _ = _load_gt(o)
    _write_run_config("bench", o, out)
    result = run_comparison(
        manifest,
        gt,
        spec,
        stub_latency_ms=o["stub_latency_ms"],
        mark_detector_kind=o["mark_detector"],
        mark_params=_mark_params(o),
        match_params=_match_params(o),
        tracker_params=_tracker_params(o),
        noise=_noise(o),
        match_tolerance_frames=o["tolerance_frames"],
    )
    write_bench_files(result, out / "bench.json", out / "bench.txt")
    sys.stdout.write(format_bench_table(result))
    return 0


def _cmd_vr_render(o: dict) -> int:
    out = _out_dir(o)
    line = CountingLine(o["line_row"])
    spec = SegmentSpec(o["segment_length"], line)
    source = open_source(_require(o, "manifest"))
    line.validate_for(source.meta)
    endpoint = None
    if o["mark_detector"] == "classical":
        mark_det = classical_mark_detector(_mark_params(o))
    elif o["mark_detector"] == "oracle":
        gt, _ = _load_gt(o)
        mark_det = oracle_mark_detector(gt, spec)
    elif o["mark_detector"] == "external":
        endpoint = _external_endpoint(o)
        mark_det = external_mark_detector(endpoint)
    else:
        mark_det = None
    _write_run_config("vr-render", o, out)
    try:
        for vr in vr_build(source, spec):
            marks = mark_det(vr) if mark_det is not None else []
            path = vr_render(vr, marks, out / f"vr_{vr.segment_index:04d}.png")
            print(f"{path}: {len(marks)} marks")
    finally:
        source.close()
        if endpoint is not None:
            endpoint.close()
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "count": _cmd_count,
    "baseline": _cmd_baseline,
    "bench": _cmd_bench,
    "vr-render": _cmd_vr_render,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = resolve_options(args.command, args)
    except (ConfigError, ValueError) as exc:
        print(f"vrcount {args.command}: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](resolved)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"vrcount {args.command}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"vrcount {args.command}: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"vrcount {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
