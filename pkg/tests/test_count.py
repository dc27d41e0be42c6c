import numpy as np
import pytest

from vrcount.count import (
    CountReport,
    EdgeMarkLedger,
    MatchParams,
    count_video,
    dedup_filter,
    mark_to_frame,
    match_mark,
    match_score,
)
from vrcount.detect import (
    DetectorNoise,
    oracle_mark_detector,
    oracle_vehicle_detector,
    classical_mark_detector,
)
from vrcount.ingest import ArrayFrameSource, open_source, write_manifest, write_raw_video
from vrcount.model import BBox, CountingLine, Detection, VideoMeta
from vrcount.synth import SceneFrameSource, crossings
from vrcount.vr import Mark, SegmentSpec

from util import place_crossing, scene_from_objects, small_scene, straddling_objects


def mk(x0, y0, x1, y1, conf=1.0):
    return Mark(BBox(x0, y0, x1, y1), conf)


def det(x0, y0, x1, y1, label="Car", conf=1.0):
    return Detection(BBox(x0, y0, x1, y1), label, conf)


class TestMarkToFrame:
    def test_single_row_mark(self):
        assert mark_to_frame(mk(0, 450, 10, 451), 0) == 450

    def test_even_height_floors(self):
        assert mark_to_frame(mk(0, 100, 10, 110), 900) == 1004

    def test_oracle_marks_near_event_centers(self):
        line = CountingLine(120)
        spec = SegmentSpec(200, line)
        seen = 0
        for seed in range(6):
            gt, _ = small_scene(seed=seed, frames=700)
            events = {e.object_id: e for e in crossings(gt, line)}
            for k in range(spec.segment_count(700)):
                from vrcount.detect import oracle_detect_marks

                for mark in oracle_detect_marks(gt, k, spec):
                    frame = mark_to_frame(mark, k * 200)
                    best = min(
                        events.values(), key=lambda e: abs(e.center_frame - frame)
                    )
                    if mark.bbox.y0 > 0 and mark.bbox.y1 < 200:  # skip split marks
                        assert abs(frame - best.center_frame) <= 1
                        seen += 1
        assert seen >= 40


class TestMatchMark:
    line = CountingLine(100)
    params = MatchParams(band_margin_px=50, max_interval_dist_frac=0.5)

    def test_exact_extent_wins(self):
        mark = mk(40, 10, 80, 20)
        exact = det(40, 90, 80, 110)
        other = det(42, 90, 84, 110)
        assert match_mark(mark, [other, exact], self.line, self.params) is exact

    def test_closest_y_breaks_ties(self):
        mark = mk(40, 10, 80, 20)
        near = det(40, 80, 80, 130)  # center 105
        far = det(40, 40, 80, 100)  # center 70
        assert match_mark(mark, [far, near], self.line, self.params) is near

    def test_threshold_rejection(self):
        mark = mk(100, 0, 140, 10)  # width 40 -> threshold 20
        candidate = det(115, 95, 155, 105)  # score 15 + 15 = 30
        assert match_mark(mark, [candidate], self.line, self.params) is None
        at_threshold = det(110, 95, 150, 105)  # score 10 + 10 = 20, not above
        assert match_mark(mark, [at_threshold], self.line, self.params) is at_threshold

    def test_band_filter(self):
        mark = mk(40, 10, 80, 20)
        outside = det(40, 160, 80, 200)  # entirely below the +-50 band
        assert match_mark(mark, [outside], self.line, self.params) is None
        touching = det(40, 150, 80, 200)  # y0 == band edge, intersects
        assert match_mark(mark, [touching], self.line, self.params) is touching

    def test_confidence_filter(self):
        mark = mk(40, 10, 80, 20)
        weak = det(40, 90, 80, 110, conf=0.2)
        params = MatchParams(band_margin_px=50, min_det_conf=0.5)
        assert match_mark(mark, [weak], self.line, params) is None

    def test_empty_candidates(self):
        assert match_mark(mk(0, 0, 10, 5), [], self.line, self.params) is None

    def test_agrees_with_brute_force(self):
        rng = np.random.default_rng(42)
        params = MatchParams(band_margin_px=60, max_interval_dist_frac=0.6, min_det_conf=0.3)
        line = CountingLine(100)
        for _ in range(300):
            width = int(rng.integers(10, 60))
            mx0 = int(rng.integers(0, 200))
            mark = mk(mx0, 0, mx0 + width, int(rng.integers(1, 30)) + 1)
            dets = []
            for _ in range(int(rng.integers(0, 8))):
                x0 = int(rng.integers(0, 220))
                w = int(rng.integers(5, 70))
                y0 = int(rng.integers(0, 200))
                h = int(rng.integers(5, 80))
                conf = float(rng.uniform(0, 1))
                dets.append(det(x0, y0, x0 + w, y0 + h, conf=round(conf, 3)))
            got = match_mark(mark, dets, line, params)
            eligible = [
                d
                for d in dets
                if d.confidence >= params.min_det_conf
                and d.bbox.y0 <= line.row_px + params.band_margin_px
                and d.bbox.y1 > line.row_px - params.band_margin_px
            ]
            if not eligible:
                assert got is None
                continue
            ranked = sorted(
                eligible,
                key=lambda d: (
                    match_score(mark, d),
                    abs(d.bbox.y_center - line.row_px),
                    d.bbox.x0,
                ),
            )
            expected = ranked[0]
            if match_score(mark, expected) > params.max_interval_dist_frac * mark.bbox.width:
                assert got is None
            else:
                assert got is expected


class TestDedupFilter:
    def test_upper_edge_center_in_ledger_discarded(self):
        ledger = EdgeMarkLedger(0, ((100, 140),))
        mark = mk(102, 0, 138, 12)  # center 120
        kept, _ = dedup_filter([mark], ledger, vr_height=900, segment_index=1)
        assert kept == []

    def test_upper_edge_center_outside_ledger_kept(self):
        ledger = EdgeMarkLedger(0, ((100, 140),))
        mark = mk(150, 0, 190, 12)  # center 170
        kept, _ = dedup_filter([mark], ledger, vr_height=900, segment_index=1)
        assert kept == [mark]

    def test_empty_ledger_keeps_everything(self):
        marks = [mk(0, 0, 10, 5), mk(20, 895, 40, 900)]
        kept, ledger = dedup_filter(marks, None, vr_height=900, segment_index=0)
        assert kept == marks
        assert ledger.segment_index == 0
        assert ledger.intervals == ((20, 40),)

    def test_non_edge_marks_never_discarded(self):
        ledger = EdgeMarkLedger(0, ((0, 900),))
        mark = mk(10, 5, 50, 20)  # below the edge margin
        kept, _ = dedup_filter([mark], ledger, vr_height=900, segment_index=1)
        assert kept == [mark]

    def test_adjacency_contract(self):
        ledger = EdgeMarkLedger(0, ())
        with pytest.raises(ValueError, match="adjacent"):
            dedup_filter([], ledger, vr_height=900, segment_index=2)

    def test_discarded_mark_still_recorded_for_next_segment(self):
        # crossing spanning three segments: full-height middle mark is both
        # a duplicate and the next segment's ledger entry
        ledger0 = EdgeMarkLedger(0, ((50, 90),))
        middle = mk(50, 0, 90, 100)  # touches both edges of a 100-row segment
        kept, ledger1 = dedup_filter([middle], ledger0, vr_height=100, segment_index=1)
        assert kept == []
        assert ledger1.intervals == ((50, 90),)
        tail = mk(50, 0, 90, 30)
        kept2, _ = dedup_filter([tail], ledger1, vr_height=100, segment_index=2)
        assert kept2 == []

    def test_edge_margin_tolerance(self):
        ledger = EdgeMarkLedger(0, ((10, 30),))
        near_top = mk(12, 2, 28, 20)  # y0 == margin
        kept, _ = dedup_filter([near_top], ledger, vr_height=900, edge_margin_px=2, segment_index=1)
        assert kept == []
        lower_near = mk(40, 880, 60, 898)
        _, ledger2 = dedup_filter([lower_near], None, vr_height=900, edge_margin_px=2, segment_index=0)
        assert ledger2.intervals == ((40, 60),)


class TestCountVideo:
    def oracle_run(self, gt, config, t_seg=200, line_row=120, noise=None, **kwargs):
        line = CountingLine(line_row)
        spec = SegmentSpec(t_seg, line)
        source = SceneFrameSource(gt, config)
        noise = noise or DetectorNoise()
        return count_video(
            source,
            spec,
            oracle_mark_detector(gt, spec),
            oracle_vehicle_detector(gt, noise),
            MatchParams(),
            **kwargs,
        )

    def test_empty_video(self, tmp_path):
        write_raw_video(tmp_path / "v.rgb24", [])
        manifest = write_manifest(tmp_path / "m.json", "raw_video", tmp_path / "v.rgb24", VideoMeta(8, 8, 0))
        with open_source(manifest) as source:
            report = count_video(
                source,
                SegmentSpec(10, CountingLine(2)),
                lambda vr: [],
                lambda frame: [],
            )
        assert report.total == 0 and report.rejected_marks == 0

    def test_single_car(self):
        meta = VideoMeta(100, 300, 400)
        obj = place_crossing(meta, 150, first_frame=200)
        gt, config = scene_from_objects(meta, [obj])
        report = self.oracle_run(gt, config, t_seg=400, line_row=150)
        assert report.per_class == {"Car": 1}
        assert report.total == 1 and report.rejected_marks == 0

    def test_oracle_suite_exact(self):
        line = CountingLine(120)
        for seed in range(8):
            gt, config = small_scene(seed=seed, frames=800, lanes=3, rate=3.0)
            report = self.oracle_run(gt, config, t_seg=170)
            events = crossings(gt, line)
            assert report.total == len(events), seed
            expected = {}
            for e in events:
                expected[e.class_label] = expected.get(e.class_label, 0) + 1
            assert report.per_class == expected, seed
            assert report.rejected_marks == 0

    def test_boundary_straddler_counted_once(self):
        meta = VideoMeta(200, 300, 1000)
        objs = straddling_objects(meta, 150, 250, [1, 2, 3], lanes_x0=[20, 90, 150])
        gt, config = scene_from_objects(meta, objs)
        assert len(crossings(gt, CountingLine(150))) == 3
        report = self.oracle_run(gt, config, t_seg=250, line_row=150)
        assert report.total == 3

    def test_every_crossing_straddles(self):
        meta = VideoMeta(200, 300, 2000)
        objs = straddling_objects(meta, 150, 200, list(range(1, 9)), lanes_x0=[20, 90, 150])
        gt, config = scene_from_objects(meta, objs)
        events = crossings(gt, CountingLine(150))
        assert len(events) == 8
        boundaries = {k * 200 for k in range(1, 10)}
        for e in events:
            assert any(e.frame_interval[0] < b <= e.frame_interval[1] for b in boundaries)
        report = self.oracle_run(gt, config, t_seg=200, line_row=150)
        assert report.total == 8  # never 16

    def test_detector_frugality(self):
        gt, config = small_scene(seed=2, frames=600)
        line = CountingLine(120)
        spec = SegmentSpec(150, line)
        mark_calls = []
        vehicle_calls = []
        mark_det = oracle_mark_detector(gt, spec)
        vehicle_det = oracle_vehicle_detector(gt)

        def counting_mark_det(vr):
            mark_calls.append(vr.segment_index)
            return mark_det(vr)

        def counting_vehicle_det(frame):
            vehicle_calls.append(frame.index)
            return vehicle_det(frame)

        report = count_video(
            SceneFrameSource(gt, config), spec, counting_mark_det, counting_vehicle_det
        )
        assert mark_calls == [0, 1, 2, 3]
        assert len(vehicle_calls) == report.total + report.rejected_marks

    def test_one_to_one_consumption(self):
        # two marks mapping to the same frame, one plausible detection:
        # the first mark claims it, the second is rejected
        frames = [np.zeros((40, 60, 3), dtype=np.uint8) for _ in range(10)]
        source = ArrayFrameSource(frames)
        line = CountingLine(20)
        spec = SegmentSpec(10, line)
        marks = [mk(10, 4, 30, 5), mk(10, 3, 30, 6)]  # both center on frame 4
        only = det(10, 15, 30, 25)

        calls = []

        def vehicle_det(frame):
            calls.append(frame.index)
            return [only]

        report = count_video(source, spec, lambda vr: marks, vehicle_det, MatchParams())
        assert calls == [4, 4]  # one invocation per kept mark
        assert report.total == 1
        assert report.rejected_marks == 1

    def test_min_conf_monotonicity(self):
        gt, config = small_scene(seed=6, frames=600)
        noise = DetectorNoise(jitter_px=2, spurious_rate=1.0, seed=3)
        totals = []
        for conf in (0.0, 0.3, 0.6, 0.9, 1.0):
            line = CountingLine(120)
            spec = SegmentSpec(200, line)
            report = count_video(
                SceneFrameSource(gt, config),
                spec,
                oracle_mark_detector(gt, spec),
                oracle_vehicle_detector(gt, noise),
                MatchParams(min_det_conf=conf),
            )
            totals.append(report.total)
        assert totals == sorted(totals, reverse=True)

    def test_threads_do_not_change_result(self):
        gt, config = small_scene(seed=10, frames=900, lanes=3, rate=3.0)
        sequential = self.oracle_run(gt, config, t_seg=140, threads=1)
        threaded = self.oracle_run(gt, config, t_seg=140, threads=4)
        assert sequential == threaded

    def test_classical_threads_match(self):
        gt, config = small_scene(seed=12, frames=700)
        line = CountingLine(120)
        spec = SegmentSpec(160, line)
        reports = [
            count_video(
                SceneFrameSource(gt, config),
                spec,
                classical_mark_detector(),
                oracle_vehicle_detector(gt),
                MatchParams(),
                threads=threads,
            )
            for threads in (1, 3)
        ]
        assert reports[0] == reports[1]
        assert reports[0].total == len(crossings(gt, line))

    def test_report_invariant_enforced(self):
        with pytest.raises(ValueError, match="inconsistent"):
            CountReport({"Car": 2}, 1, (), 0)
