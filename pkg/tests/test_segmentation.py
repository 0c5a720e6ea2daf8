import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynfeat.flow import MotionRegion
from dynfeat.segmentation import (
    DEFAULT_MOVABLE_CLASSES,
    Detection,
    SegmentationSet,
    SegmentLabels,
    SegmentStatus,
    attach_detections,
    box_iou,
    select_dynamic_segments,
)


def region_from_mask(mask):
    rr, cc = np.nonzero(mask)
    return MotionRegion(rr, cc, (cc.min(), rr.min(), cc.max() + 1, rr.max() + 1))


@pytest.fixture
def two_boxes():
    ids = np.zeros((40, 60), dtype=np.int32)
    ids[5:15, 5:25] = 1
    ids[20:35, 30:50] = 2
    return SegmentationSet(ids)


class TestSegmentationSet:
    def test_properties(self, two_boxes):
        assert two_boxes.n_segments == 2
        assert two_boxes.areas[1:].tolist() == [200, 300]
        assert two_boxes.bboxes == {1: (5, 5, 25, 15), 2: (30, 20, 50, 35)}
        assert two_boxes.areas[1:].sum() <= two_boxes.width * two_boxes.height

    def test_non_contiguous_rejected(self):
        ids = np.zeros((4, 4), dtype=int)
        ids[0, 0], ids[1, 1] = 1, 3
        with pytest.raises(ValueError):
            SegmentationSet(ids)

    def test_overlap_goes_to_smaller(self):
        big = np.zeros((10, 10), dtype=bool)
        big[0:8, 0:8] = True
        small = np.zeros((10, 10), dtype=bool)
        small[6:10, 6:10] = True
        segs = SegmentationSet.from_masks([big, small])
        assert segs.ids[7, 7] == 2
        assert segs.areas[1:].tolist() == [64 - 4, 16]

    def test_lookup(self, two_boxes):
        pix = np.array([[10.2, 9.7], [40, 30], [0, 0], [-3, 5], [100, 100]])
        assert two_boxes.lookup(pix).tolist() == [1, 2, 0, 0, 0]


class TestIoU:
    def test_identical(self):
        assert box_iou((0, 0, 4, 4), (0, 0, 4, 4)) == 1.0

    def test_disjoint(self):
        assert box_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0

    def test_third(self):
        # intersection 1x2, union 4 + 4 - 2
        assert box_iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(2 / 6)


class TestAttach:
    def test_exact_box(self, two_boxes):
        dets = [Detection("car", (30, 20, 50, 35), 0.9)]
        assert attach_detections(two_boxes, dets) == {2: "car"}

    def test_threshold(self):
        ids = np.zeros((4, 6), dtype=int)
        ids[0:2, 0:2] = 1
        segs = SegmentationSet(ids)
        det = [Detection("dog", (1, 0, 3, 2))]
        assert attach_detections(segs, det, iou_min=1 / 3) == {1: "dog"}
        assert attach_detections(segs, det, iou_min=0.34) == {}

    def test_highest_confidence_wins(self, two_boxes):
        dets = [Detection("cat", (5, 5, 25, 15), 0.6), Detection("dog", (5, 5, 25, 15), 0.95)]
        assert attach_detections(two_boxes, dets) == {1: "dog"}

    def test_clamped_and_unmatched(self, two_boxes):
        dets = [Detection("person", (28, 18, 500, 35.0), 0.9), Detection("chair", (0, 36, 4, 40), 0.9)]
        # clamped to x_max = 60: IoU = 300 / (32 * 17)
        assert attach_detections(two_boxes, dets, iou_min=0.56) == {}
        assert attach_detections(two_boxes, dets, iou_min=0.55) == {2: "person"}

    def test_movable_filter(self, two_boxes):
        dets = [Detection("chair", (5, 5, 25, 15), 0.9)]
        assert attach_detections(two_boxes, dets, movable_classes=DEFAULT_MOVABLE_CLASSES) == {}


class TestSelect:
    def test_person_without_regions(self, two_boxes):
        labels = select_dynamic_segments(two_boxes, {1: "person"}, [])
        assert labels.status[1] is SegmentStatus.DYNAMIC_MOVABLE
        assert labels.status[2] is SegmentStatus.STATIC

    def test_region_overlap(self, two_boxes):
        region = np.zeros(two_boxes.ids.shape, dtype=bool)
        region[20:35, 32:50] = True   # 90% of region inside segment 2
        region[20:35, 28:30] = True
        labels = select_dynamic_segments(two_boxes, {}, [region_from_mask(region)])
        assert labels.status == [SegmentStatus.STATIC, SegmentStatus.STATIC, SegmentStatus.DYNAMIC_FLOW]

    def test_nothing(self, two_boxes):
        labels = select_dynamic_segments(two_boxes, {}, [])
        assert labels.dynamic_ids() == []

    def test_overlap_min(self, two_boxes):
        region = np.zeros(two_boxes.ids.shape, dtype=bool)
        region[0:40, 26:30] = True
        region[20:22, 30:40] = True   # 20 of 180 px in segment 2
        labels = select_dynamic_segments(two_boxes, {}, [region_from_mask(region)])
        assert labels.dynamic_ids() == []
        labels = select_dynamic_segments(two_boxes, {}, [region_from_mask(region)], overlap_min=0.1)
        assert labels.dynamic_ids() == [2]

    def test_tie_goes_to_lower_id(self):
        ids = np.zeros((10, 10), dtype=int)
        ids[:, :5] = 1
        ids[:, 5:] = 2
        segs = SegmentationSet(ids)
        region = np.zeros((10, 10), dtype=bool)
        region[2:8, 2:8] = True
        labels = select_dynamic_segments(segs, {}, [region_from_mask(region)])
        assert labels.dynamic_ids() == [1]

    def test_one_segment_per_region(self, two_boxes):
        region = np.ones(two_boxes.ids.shape, dtype=bool)
        labels = select_dynamic_segments(two_boxes, {}, [region_from_mask(region)], overlap_min=0.0)
        assert labels.dynamic_ids() == [2]

    def test_movable_status_kept_over_flow(self, two_boxes):
        region = np.zeros(two_boxes.ids.shape, dtype=bool)
        region[5:15, 5:25] = True
        labels = select_dynamic_segments(two_boxes, {1: "dog"}, [region_from_mask(region)])
        assert labels.status[1] is SegmentStatus.DYNAMIC_MOVABLE
        assert labels.to_dict()["1"] == {"status": "dynamic-movable", "class": "dog"}

    @given(
        classes=st.dictionaries(st.sampled_from([1, 2]), st.sampled_from(["person", "chair", "car"])),
        r0=st.integers(0, 30), c0=st.integers(0, 50),
    )
    def test_sources_independent(self, classes, r0, c0):
        ids = np.zeros((40, 60), dtype=np.int32)
        ids[5:15, 5:25] = 1
        ids[20:35, 30:50] = 2
        segs = SegmentationSet(ids)
        region = np.zeros(ids.shape, dtype=bool)
        region[r0:r0 + 10, c0:c0 + 10] = True
        regions = [region_from_mask(region)]
        with_both = select_dynamic_segments(segs, classes, regions)
        no_flow = select_dynamic_segments(segs, classes, [])
        no_dets = select_dynamic_segments(segs, {}, regions)
        for sid in (1, 2):
            movable = no_flow.status[sid] is SegmentStatus.DYNAMIC_MOVABLE
            assert (with_both.status[sid] is SegmentStatus.DYNAMIC_MOVABLE) == movable
            if not movable:
                assert with_both.status[sid] is no_dets.status[sid]


def test_all_static_labels():
    labels = SegmentLabels.all_static(3)
    assert labels.n_segments == 3
    assert not labels.dynamic_mask().any()
