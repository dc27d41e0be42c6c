"""Accuracy scoring against ground truth and the head-to-head efficiency
comparison between the keyframe counting pipeline and the tracking baseline.

Wall-clock throughput depends on hardware, so the comparison also records
exact detector invocation counts, and an optional stub latency per detector
invocation models neural-inference cost in a hardware-independent way.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .baseline import TrackerParams, baseline_count
from .count import CountReport, MatchParams, count_video, report_to_dict
from .detect import (
    DetectorNoise,
    MarkDetectorParams,
    ZERO_NOISE,
    classical_mark_detector,
    oracle_mark_detector,
    oracle_vehicle_detector,
)
from .ingest import open_source
from .model import CountingLine
from .synth import CrossingEvent, GroundTruth, crossings
from .vr import SegmentSpec

UNMATCHED = "<none>"


@dataclass(frozen=True)
class AccuracyResult:
    predicted: int
    actual: int
    counting_accuracy_pct: float
    per_class_accuracy: dict[str, float]
    confusion: dict[tuple[str, str], int]


def counting_accuracy_pct(predicted: int, actual: int) -> float:
    """100 * (1 - |predicted - actual| / actual), clamped at 0; 100 when both 0."""
    if actual == 0:
        return 100.0 if predicted == 0 else 0.0
    return max(0.0, 100.0 * (1.0 - abs(predicted - actual) / actual))


def _pred_x_extent(cv) -> tuple[float, float] | None:
    if cv.mark is not None:
        return (cv.mark.bbox.x0, cv.mark.bbox.x1)
    if cv.detection is not None:
        return (cv.detection.bbox.x0, cv.detection.bbox.x1)
    return None


def score_counts(
    report: CountReport,
    gt: GroundTruth,
    line: CountingLine,
    match_tolerance_frames: int = 5,
) -> AccuracyResult:
    """Match counted vehicles to ground-truth crossings and score the result.

    Matching is greedy nearest-frame-first within the tolerance, requiring
    x-extent overlap; it is one-to-one, and ties are broken by content so
    the outcome does not depend on input order. Unmatched predictions and
    events land in the confusion map under the '<none>' label.
    """
    events = crossings(gt, line)
    preds = list(report.counted)
    candidates = []
    for pi, p in enumerate(preds):
        extent = _pred_x_extent(p)
        for ei, e in enumerate(events):
            delta = abs(p.global_frame - e.center_frame)
            if delta > match_tolerance_frames:
                continue
            if extent is not None:
                overlap = min(extent[1], e.x_extent[1]) - max(extent[0], e.x_extent[0])
                if overlap <= 0:
                    continue
            candidates.append(
                (
                    delta,
                    p.global_frame,
                    e.center_frame,
                    extent[0] if extent else 0.0,
                    e.object_id,
                    p.class_label,
                    pi,
                    ei,
                )
            )
    candidates.sort(key=lambda c: c[:6])
    used_preds: set[int] = set()
    used_events: set[int] = set()
    confusion: dict[tuple[str, str], int] = {}
    per_class_correct: dict[str, int] = {}
    for cand in candidates:
        pi, ei = cand[6], cand[7]
        if pi in used_preds or ei in used_events:
            continue
        used_preds.add(pi)
        used_events.add(ei)
        gt_label = events[ei].class_label
        pred_label = preds[pi].class_label
        confusion[(gt_label, pred_label)] = confusion.get((gt_label, pred_label), 0) + 1
        if gt_label == pred_label:
            per_class_correct[gt_label] = per_class_correct.get(gt_label, 0) + 1
    for pi, p in enumerate(preds):
        if pi not in used_preds:
            key = (UNMATCHED, p.class_label)
            confusion[key] = confusion.get(key, 0) + 1
    event_totals: dict[str, int] = {}
    for ei, e in enumerate(events):
        event_totals[e.class_label] = event_totals.get(e.class_label, 0) + 1
        if ei not in used_events:
            key = (e.class_label, UNMATCHED)
            confusion[key] = confusion.get(key, 0) + 1
    per_class_accuracy = {
        label: 100.0 * per_class_correct.get(label, 0) / total
        for label, total in sorted(event_totals.items())
    }
    return AccuracyResult(
        predicted=report.total,
        actual=len(events),
        counting_accuracy_pct=counting_accuracy_pct(report.total, len(events)),
        per_class_accuracy=per_class_accuracy,
        confusion=confusion,
    )


class InstrumentedDetector:
    """Wraps a detector callable: counts invocations, optionally sleeps to
    model per-invocation inference latency."""

    def __init__(self, fn: Callable, latency_s: float = 0.0):
        self._fn = fn
        self.latency_s = latency_s
        self.calls = 0

    def __call__(self, arg):
        self.calls += 1
        if self.latency_s > 0:
            time.sleep(self.latency_s)
        return self._fn(arg)


@dataclass(frozen=True)
class SystemRun:
    name: str
    wall_seconds: float
    frames_processed: int
    detector_invocations: int
    mark_detector_calls: int
    vehicle_detector_calls: int
    report: CountReport
    accuracy: AccuracyResult

    @property
    def fps(self) -> float:
        return self.frames_processed / self.wall_seconds


@dataclass(frozen=True)
class BenchResult:
    keyframe: SystemRun
    baseline: SystemRun
    frames_processed: int

    @property
    def speedup(self) -> float:
        return self.keyframe.fps / self.baseline.fps


def run_comparison(
    manifest_path: str | Path,
    gt: GroundTruth,
    spec: SegmentSpec,
    stub_latency_ms: float = 0.0,
    mark_detector_kind: str = "classical",
    mark_params: MarkDetectorParams | None = None,
    match_params: MatchParams | None = None,
    tracker_params: TrackerParams | None = None,
    noise: DetectorNoise = ZERO_NOISE,
    match_tolerance_frames: int = 5,
) -> BenchResult:
    """Run both systems on the same video with the same vehicle detector.

    The systems run sequentially against a monotonic clock; the stub latency
    is injected into every detector invocation of both systems.
    """
    latency_s = stub_latency_ms / 1000.0
    line = spec.line

    if mark_detector_kind == "classical":
        raw_mark_detector = classical_mark_detector(mark_params)
    elif mark_detector_kind == "oracle":
        raw_mark_detector = oracle_mark_detector(gt, spec)
    else:
        raise ValueError(f"mark_detector_kind must be classical or oracle, got '{mark_detector_kind}'")

    mark_det = InstrumentedDetector(raw_mark_detector, latency_s)
    vehicle_det_vr = InstrumentedDetector(oracle_vehicle_detector(gt, noise), latency_s)
    with open_source(manifest_path) as source:
        t0 = time.perf_counter()
        vr_report = count_video(source, spec, mark_det, vehicle_det_vr, match_params)
        vr_wall = time.perf_counter() - t0
        frames = source.meta.frame_count

    vehicle_det_base = InstrumentedDetector(oracle_vehicle_detector(gt, noise), latency_s)
    with open_source(manifest_path) as source:
        t0 = time.perf_counter()
        base_report = baseline_count(source, line, vehicle_det_base, tracker_params)
        base_wall = time.perf_counter() - t0

    keyframe = SystemRun(
        name="visual_rhythm",
        wall_seconds=vr_wall,
        frames_processed=frames,
        detector_invocations=mark_det.calls + vehicle_det_vr.calls,
        mark_detector_calls=mark_det.calls,
        vehicle_detector_calls=vehicle_det_vr.calls,
        report=vr_report,
        accuracy=score_counts(vr_report, gt, line, match_tolerance_frames),
    )
    baseline = SystemRun(
        name="baseline_tracking",
        wall_seconds=base_wall,
        frames_processed=frames,
        detector_invocations=vehicle_det_base.calls,
        mark_detector_calls=0,
        vehicle_detector_calls=vehicle_det_base.calls,
        report=base_report,
        accuracy=score_counts(base_report, gt, line, match_tolerance_frames),
    )
    return BenchResult(keyframe, baseline, frames)


def accuracy_to_dict(acc: AccuracyResult) -> dict:
    return {
        "predicted": acc.predicted,
        "actual": acc.actual,
        "counting_accuracy_pct": acc.counting_accuracy_pct,
        "per_class_accuracy": acc.per_class_accuracy,
        "confusion": {f"{gt}->{pred}": n for (gt, pred), n in sorted(acc.confusion.items())},
    }


def bench_to_dict(result: BenchResult) -> dict:
    def system_dict(run: SystemRun) -> dict:
        return {
            "wall_seconds": run.wall_seconds,
            "fps": run.fps,
            "detector_invocations": run.detector_invocations,
            "mark_detector_calls": run.mark_detector_calls,
            "vehicle_detector_calls": run.vehicle_detector_calls,
            "report": report_to_dict(run.report),
            "accuracy": accuracy_to_dict(run.accuracy),
        }

    return {
        "frames_processed": result.frames_processed,
        "speedup": result.speedup,
        "systems": {
            result.keyframe.name: system_dict(result.keyframe),
            result.baseline.name: system_dict(result.baseline),
        },
    }


def format_bench_table(result: BenchResult) -> str:
    header = f"{'system':<18} {'frame rate':>12} {'detector calls':>15} {'count':>7} {'accuracy':>10}"
    lines = [header, "-" * len(header)]
    for run in (result.keyframe, result.baseline):
        lines.append(
            f"{run.name:<18} {run.fps:>8.1f} FPS {run.detector_invocations:>15} "
            f"{run.report.total:>7} {run.accuracy.counting_accuracy_pct:>9.2f}%"
        )
    lines.append(f"speedup: {result.speedup:.2f}x over {result.frames_processed} frames")
    return "\n".join(lines) + "\n"


def write_bench_files(result: BenchResult, json_path: str | Path, table_path: str | Path) -> None:
    Path(json_path).write_text(json.dumps(bench_to_dict(result), indent=2) + "\n")
    Path(table_path).write_text(format_bench_table(result))
