"""Line-crossing object counting from time-spatial images.

The pipeline samples one pixel row per frame along a counting line,
stacks the rows into per-segment time-spatial images, detects the marks
objects leave there, maps each mark back to the single frame where the
object's center crossed the line, and verifies it against a per-frame
object detector. A frame-by-frame tracking baseline and a benchmark
harness reproduce the efficiency comparison between the two approaches.
"""

from .model import (
    BBox,
    ClassSet,
    CountingLine,
    Detection,
    Frame,
    PipelineError,
    VideoMeta,
    bbox_iou,
    luma,
    DEFAULT_CLASSES,
    DEFAULT_LINE_ROW,
)
from .ingest import (
    ArrayFrameSource,
    FrameSource,
    GeometryError,
    ManifestError,
    SourceManifest,
    StreamError,
    open_source,
    write_frame_dir,
    write_manifest,
    write_raw_video,
)
from .vr import DEFAULT_SEGMENT_LENGTH, Mark, SegmentSpec, VRImage, vr_build, vr_render
from .detect import (
    DetectorNoise,
    DetectorProcessError,
    ExternalDetector,
    ExternalDetectorConfig,
    MarkDetectorParams,
    ProtocolError,
    ZERO_NOISE,
    classical_mark_detector,
    detect_marks_classical,
    estimate_background,
    external_detect,
    oracle_detect_marks,
    oracle_detect_vehicles,
    oracle_mark_detector,
    oracle_vehicle_detector,
)
from .count import (
    CountReport,
    CountedVehicle,
    EdgeMarkLedger,
    MatchParams,
    count_video,
    dedup_filter,
    mark_to_frame,
    match_mark,
)
from .synth import (
    CrossingEvent,
    GroundTruth,
    SceneConfig,
    SceneFrameSource,
    SceneObject,
    crossings,
    gen_scene,
    load_scene,
    render_frame,
    write_scene,
)
from .baseline import Track, TrackerParams, baseline_count, tracker_step
from .bench import (
    AccuracyResult,
    BenchResult,
    run_comparison,
    score_counts,
)

__version__ = "0.1.0"
