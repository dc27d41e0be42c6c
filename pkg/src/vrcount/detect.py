"""Detector backends behind two uniform contracts.

Mark detectors consume a VR image and return marks; vehicle detectors
consume a frame and return detections. Three backends exist for each
role where it makes sense: a classical background-subtraction detector for
marks, ground-truth oracles (optionally degraded with controlled noise)
for both roles, and an adapter that consults an external process over the
newline-delimited detection exchange protocol.
"""

from __future__ import annotations

import atexit
import json
import queue
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image
from scipy import ndimage

from .model import BBox, ClassSet, Detection, Frame, PipelineError, luma
from .synth import GroundTruth, object_box_at
from .vr import Mark, SegmentSpec, VRImage

MarkDetector = Callable[[VRImage], "list[Mark]"]
VehicleDetector = Callable[[Frame], "list[Detection]"]


class DetectorProcessError(PipelineError):
    """External detector could not be spawned, died, or timed out."""


class ProtocolError(PipelineError):
    """External detector sent a malformed or mismatched response."""


@dataclass(frozen=True)
class MarkDetectorParams:
    """Tunables for the classical background-subtraction mark detector."""

    luma_threshold: int = 25
    min_area_px: int = 40
    min_height_px: int = 2
    morph_close_radius: int = 1

    def __post_init__(self):
        if not 0 <= self.luma_threshold <= 255:
            raise ValueError(f"luma_threshold out of [0,255]: {self.luma_threshold}")
        if self.min_area_px < 0 or self.morph_close_radius < 0:
            raise ValueError("min_area_px and morph_close_radius must be >= 0")
        if self.min_height_px < 1:
            raise ValueError(f"min_height_px must be >= 1, got {self.min_height_px}")


@dataclass(frozen=True)
class DetectorNoise:
    """Controlled degradation of an oracle detector, deterministic per frame."""

    jitter_px: int = 0
    miss_rate: float = 0.0
    spurious_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.jitter_px < 0:
            raise ValueError(f"jitter_px must be >= 0, got {self.jitter_px}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate must be in [0,1], got {self.miss_rate}")
        if self.spurious_rate < 0:
            raise ValueError(f"spurious_rate must be >= 0, got {self.spurious_rate}")


ZERO_NOISE = DetectorNoise()


def estimate_background(vr: VRImage) -> np.ndarray:
    """Per-column temporal median of the luma-converted VR raster."""
    median = np.median(luma(vr.rows), axis=0)
    return np.clip(median + 0.5, 0, 255).astype(np.uint8)


def detect_marks_classical(vr: VRImage, params: MarkDetectorParams) -> list[Mark]:
    """Background subtraction, closing, and 8-connected component extraction.

    A pixel is foreground when its luma deviates from the column background
    by more than luma_threshold. Closing is applied on an edge-replicated
    padding, so components touching the temporal edges keep touching them.
    """
    gray = luma(vr.rows).astype(np.int16)
    background = estimate_background(vr).astype(np.int16)
    mask = np.abs(gray - background) > params.luma_threshold
    r = params.morph_close_radius
    if r > 0 and mask.any():
        padded = np.pad(mask, r, mode="edge")
        structure = np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        mask = ndimage.binary_closing(padded, structure=structure)[r:-r, r:-r]
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    marks = []
    for idx, slc in enumerate(ndimage.find_objects(labels), start=1):
        if slc is None:
            continue
        area = int(np.count_nonzero(labels[slc] == idx))
        y0, y1 = slc[0].start, slc[0].stop
        x0, x1 = slc[1].start, slc[1].stop
        if area < params.min_area_px or y1 - y0 < params.min_height_px:
            continue
        conf = 1.0 if params.min_area_px == 0 else min(1.0, area / (2 * params.min_area_px))
        marks.append(Mark(BBox(x0, y0, x1, y1), conf))
    marks.sort(key=lambda m: (m.bbox.y0, m.bbox.x0))
    return marks


def oracle_detect_marks(
    gt: GroundTruth, segment_index: int, spec: SegmentSpec
) -> list[Mark]:
    """Exact marks for every ground-truth crossing intersecting the segment."""
    start, end = spec.segment_bounds(segment_index, gt.meta.frame_count)
    if start >= end:
        raise IndexError(f"segment {segment_index} is empty")
    marks = []
    for event in gt.crossings(spec.line):
        first, last = event.frame_interval
        if last < start or first >= end:
            continue
        y0 = max(first, start) - start
        y1 = min(last, end - 1) - start + 1
        x0, x1 = event.x_extent
        marks.append(Mark(BBox(x0, y0, x1, y1), 1.0))
    marks.sort(key=lambda m: (m.bbox.y0, m.bbox.x0))
    return marks


def oracle_detect_vehicles(
    gt: GroundTruth, frame_index: int, noise: DetectorNoise = ZERO_NOISE
) -> list[Detection]:
    """Ground-truth boxes of objects visible in the frame, with noise applied.

    Noise is a pure function of (seed, frame_index): repeated calls with the
    same arguments return identical detections.
    """
    meta = gt.meta
    if not 0 <= frame_index < meta.frame_count:
        raise IndexError(f"frame {frame_index} outside [0, {meta.frame_count})")
    rng = np.random.default_rng((noise.seed % (2**32), frame_index))
    detections = []
    for obj in gt.objects:
        box = object_box_at(meta, obj, frame_index)
        if box is None:
            continue
        if noise.miss_rate > 0 and rng.random() < noise.miss_rate:
            continue
        if noise.jitter_px > 0:
            j = noise.jitter_px
            dx0, dy0, dx1, dy1 = rng.integers(-j, j + 1, size=4)
            jittered = BBox(box.x0 + dx0, box.y0 + dy0, box.x1 + dx1, box.y1 + dy1) \
                if box.x0 + dx0 < box.x1 + dx1 and box.y0 + dy0 < box.y1 + dy1 else None
            clamped = jittered.clamped(meta.width_px, meta.height_px) if jittered else None
            box = clamped or box
        detections.append(Detection(box, obj.class_label, 1.0))
    if noise.spurious_rate > 0:
        for _ in range(rng.poisson(noise.spurious_rate)):
            w = int(rng.integers(8, 65))
            h = int(rng.integers(8, 65))
            x0 = int(rng.integers(0, max(1, meta.width_px - w)))
            y0 = int(rng.integers(0, max(1, meta.height_px - h)))
            label = str(rng.choice(list(gt.class_labels)))
            conf = float(rng.uniform(0.5, 1.0))
            detections.append(Detection(BBox(x0, y0, x0 + w, y0 + h), label, conf))
    return detections


@dataclass(frozen=True)
class ExternalDetectorConfig:
    """How to launch and talk to an out-of-process detector."""

    command: tuple[str, ...]
    timeout_s: float = 30.0

    def __post_init__(self):
        if not self.command:
            raise ValueError("external detector command must not be empty")
        if self.timeout_s <= 0:
            raise ValueError(f"timeout_s must be > 0, got {self.timeout_s}")


class ExternalDetector:
    """Persistent external detector process speaking the exchange protocol.

    Requests are serialized: one in-flight request per process. The image
    travels as a PNG temp file; request and response are single JSON lines.
    """

    def __init__(self, config: ExternalDetectorConfig):
        self.config = config
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._tmpdir = Path(tempfile.mkdtemp(prefix="vrcount-extdet-"))
        self._request_no = 0

    def _ensure_started(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        try:
            self._proc = subprocess.Popen(
                list(self.config.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise DetectorProcessError(
                f"cannot spawn external detector {self.config.command}: {exc}"
            ) from exc
        self._lines = queue.Queue()
        threading.Thread(
            target=self._read_lines, args=(self._proc.stdout, self._lines), daemon=True
        ).start()

    @staticmethod
    def _read_lines(stream, out_queue: queue.Queue) -> None:
        for line in stream:
            out_queue.put(line)
        out_queue.put(None)

    def detect(self, image: np.ndarray, class_set: ClassSet | None = None) -> list[Detection]:
        with self._lock:
            self._ensure_started()
            assert self._proc is not None and self._proc.stdin is not None
            self._request_no += 1
            request_id = f"r{self._request_no}"
            image_path = self._tmpdir / f"{request_id}.png"
            Image.fromarray(np.asarray(image, dtype=np.uint8)).save(image_path)
            try:
                self._proc.stdin.write(
                    json.dumps({"image": str(image_path), "id": request_id}) + "\n"
                )
                self._proc.stdin.flush()
                try:
                    line = self._lines.get(timeout=self.config.timeout_s)
                except queue.Empty:
                    self._kill()
                    raise DetectorProcessError(
                        f"external detector timed out after {self.config.timeout_s}s"
                    ) from None
                if line is None:
                    code = self._proc.poll()
                    raise DetectorProcessError(
                        f"external detector exited (code {code}) before responding"
                    )
            finally:
                image_path.unlink(missing_ok=True)
        height, width = image.shape[:2]
        return _parse_response(line, request_id, width, height, class_set)

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                try:
                    self._proc.stdin.close()
                    self._proc.wait(timeout=5)
                except (OSError, subprocess.TimeoutExpired):
                    self._kill()
            for leftover in self._tmpdir.glob("*"):
                leftover.unlink(missing_ok=True)
            try:
                self._tmpdir.rmdir()
            except OSError:
                pass

    def __enter__(self) -> "ExternalDetector":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _parse_response(
    line: str,
    request_id: str,
    width: int,
    height: int,
    class_set: ClassSet | None,
) -> list[Detection]:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(
            f"malformed response record at byte offset {exc.pos}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ProtocolError(f"response must be a JSON object, got {type(doc).__name__}")
    if doc.get("id") != request_id:
        raise ProtocolError(
            f"response id {doc.get('id')!r} does not match request id {request_id!r}"
        )
    if "error" in doc:
        raise ProtocolError(f"external detector reported an error: {doc['error']}")
    dets = doc.get("detections")
    if not isinstance(dets, list):
        raise ProtocolError("response is missing the 'detections' list")
    out = []
    for i, d in enumerate(dets):
        try:
            label = str(d["class"])
            conf = float(d["conf"])
            box = BBox(float(d["x0"]), float(d["y0"]), float(d["x1"]), float(d["y1"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"detection {i} malformed: {exc}") from exc
        if class_set is not None and label not in class_set:
            continue
        clamped = box.clamped(width, height)
        if clamped is None:
            continue
        out.append(Detection(clamped, label, min(1.0, max(0.0, conf))))
    return out


_shared_detectors: dict[ExternalDetectorConfig, ExternalDetector] = {}


def _close_shared() -> None:
    for det in _shared_detectors.values():
        det.close()
    _shared_detectors.clear()


atexit.register(_close_shared)


def external_detect(
    image: np.ndarray,
    class_set: ClassSet | None,
    endpoint: ExternalDetectorConfig | ExternalDetector,
) -> list[Detection]:
    """Consult an external detector; a config endpoint reuses one shared
    process per distinct config for the life of the interpreter."""
    if isinstance(endpoint, ExternalDetector):
        return endpoint.detect(image, class_set)
    detector = _shared_detectors.get(endpoint)
    if detector is None:
        detector = _shared_detectors[endpoint] = ExternalDetector(endpoint)
    return detector.detect(image, class_set)


def classical_mark_detector(params: MarkDetectorParams | None = None) -> MarkDetector:
    params = params or MarkDetectorParams()
    return lambda vr: detect_marks_classical(vr, params)


def oracle_mark_detector(gt: GroundTruth, spec: SegmentSpec) -> MarkDetector:
    return lambda vr: oracle_detect_marks(gt, vr.segment_index, spec)


def oracle_vehicle_detector(
    gt: GroundTruth, noise: DetectorNoise = ZERO_NOISE
) -> VehicleDetector:
    return lambda frame: oracle_detect_vehicles(gt, frame.index, noise)


def external_vehicle_detector(
    endpoint: ExternalDetectorConfig | ExternalDetector, class_set: ClassSet | None
) -> VehicleDetector:
    return lambda frame: external_detect(frame.pixels, class_set, endpoint)


def external_mark_detector(
    endpoint: ExternalDetectorConfig | ExternalDetector,
) -> MarkDetector:
    """Marks via the external protocol; any label is accepted for the mark role."""

    def detector(vr: VRImage) -> list[Mark]:
        dets = external_detect(vr.rows, None, endpoint)
        marks = [
            Mark(d.bbox, d.confidence) for d in dets if d.bbox.height >= 1
        ]
        marks.sort(key=lambda m: (m.bbox.y0, m.bbox.x0))
        return marks

    return detector
