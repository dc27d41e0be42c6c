import numpy as np
import pytest
from hypothesis import given, strategies as st

from vrcount.model import (
    BBox,
    ClassSet,
    CountingLine,
    Detection,
    VideoMeta,
    bbox_iou,
    luma,
)


def boxes():
    return st.builds(
        lambda x0, y0, w, h: BBox(x0, y0, x0 + w, y0 + h),
        st.integers(-50, 50),
        st.integers(-50, 50),
        st.integers(1, 60),
        st.integers(1, 60),
    )


class TestBBoxIou:
    def test_identity(self):
        a = BBox(3, 4, 10, 12)
        assert bbox_iou(a, a) == 1.0

    def test_disjoint(self):
        assert bbox_iou(BBox(0, 0, 2, 2), BBox(10, 10, 12, 12)) == 0.0

    def test_partial_overlap(self):
        # intersection 2x4 = 8, union 16 + 16 - 8 = 24
        assert bbox_iou(BBox(0, 0, 4, 4), BBox(2, 0, 6, 4)) == pytest.approx(8 / 24)

    @given(boxes(), boxes())
    def test_symmetry(self, a, b):
        assert bbox_iou(a, b) == pytest.approx(bbox_iou(b, a))

    @given(boxes(), boxes())
    def test_range(self, a, b):
        assert 0.0 <= bbox_iou(a, b) <= 1.0

    @given(boxes())
    def test_self_is_one(self, a):
        assert bbox_iou(a, a) == pytest.approx(1.0)


class TestLuma:
    def test_black(self):
        assert luma(np.array([[0, 0, 0]], dtype=np.uint8))[0] == 0

    def test_white(self):
        assert luma(np.array([[255, 255, 255]], dtype=np.uint8))[0] == 255

    def test_pure_red(self):
        # round(0.299 * 255) = round(76.245)
        assert luma(np.array([[255, 0, 0]], dtype=np.uint8))[0] == 76

    def test_accepts_rasters(self):
        raster = np.full((5, 7, 3), 90, dtype=np.uint8)
        assert luma(raster).shape == (5, 7)
        assert np.all(luma(raster) == 90)

    @given(
        st.integers(0, 255),
        st.integers(0, 255),
        st.integers(0, 255),
        st.integers(0, 2),
    )
    def test_monotone_per_channel(self, r, g, b, channel):
        base = np.array([[r, g, b]], dtype=np.uint8)
        bumped = base.copy()
        if bumped[0, channel] == 255:
            return
        bumped[0, channel] += 1
        assert luma(bumped)[0] >= luma(base)[0]


class TestValidation:
    def test_bbox_rejects_empty(self):
        with pytest.raises(ValueError):
            BBox(5, 0, 5, 10)
        with pytest.raises(ValueError):
            BBox(0, 9, 10, 9)

    def test_bbox_clamped(self):
        assert BBox(-5, -5, 4, 4).clamped(10, 10) == BBox(0, 0, 4, 4)
        assert BBox(20, 20, 30, 30).clamped(10, 10) is None

    def test_video_meta(self):
        with pytest.raises(ValueError):
            VideoMeta(0, 10, 5)
        with pytest.raises(ValueError):
            VideoMeta(10, 10, -1)
        with pytest.raises(ValueError):
            VideoMeta(10, 10, 5, fps_num=0)
        meta = VideoMeta(10, 20, 5, 30000, 1001)
        assert float(meta.fps) == pytest.approx(29.97, abs=0.01)
        assert meta.frame_bytes == 10 * 20 * 3

    def test_counting_line(self):
        with pytest.raises(ValueError):
            CountingLine(-1)
        with pytest.raises(ValueError):
            CountingLine(720).validate_for(VideoMeta(1280, 720, 10))
        CountingLine(719).validate_for(VideoMeta(1280, 720, 10))

    def test_detection_confidence(self):
        with pytest.raises(ValueError):
            Detection(BBox(0, 0, 1, 1), "Car", 1.5)

    def test_class_set(self):
        assert "Car" in ClassSet()
        with pytest.raises(ValueError):
            ClassSet(())
        with pytest.raises(ValueError):
            ClassSet(("Car", "Car"))

    def test_frame_raster_is_frozen(self):
        from vrcount.model import Frame

        frame = Frame(0, np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            frame.pixels[0, 0, 0] = 1
