"""Class-agnostic segments, detection-class attachment and dynamic selection."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

DEFAULT_MOVABLE_CLASSES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe",
)


class SegmentStatus(str, enum.Enum):
    STATIC = "static"
    DYNAMIC_MOVABLE = "dynamic-movable"
    DYNAMIC_FLOW = "dynamic-flow"

    @property
    def is_dynamic(self) -> bool:
        return self is not SegmentStatus.STATIC


@dataclass(frozen=True)
class Detection:
    class_name: str
    bbox: tuple  # (x_min, y_min, x_max, y_max) in pixels
    confidence: float = 1.0

    def clamped(self, width, height) -> "Detection":
        x0, y0, x1, y1 = self.bbox
        box = (
            float(np.clip(x0, 0, width)), float(np.clip(y0, 0, height)),
            float(np.clip(x1, 0, width)), float(np.clip(y1, 0, height)),
        )
        return Detection(self.class_name, box, self.confidence)

    @property
    def is_valid(self) -> bool:
        x0, y0, x1, y1 = self.bbox
        return x0 < x1 and y0 < y1 and 0.0 <= self.confidence <= 1.0


class SegmentationSet:
    """Disjoint segments stored as an id map (0 = unsegmented).

    Segment bounding boxes use pixel-edge coordinates: a segment spanning
    columns ``c0..c1`` has ``x_min = c0`` and ``x_max = c1 + 1``.
    """

    def __init__(self, ids):
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ValueError("segment id map must be 2-D")
        if ids.size and ids.min() < 0:
            raise ValueError("segment ids must be non-negative")
        ids = ids.astype(np.int32)
        n = int(ids.max()) if ids.size else 0
        areas = np.bincount(ids.ravel(), minlength=n + 1)
        missing = [i for i in range(1, n + 1) if areas[i] == 0]
        if missing:
            raise ValueError(f"segment ids must be contiguous 1..{n}; missing {missing}")
        self.ids = ids
        self.n_segments = n
        self.areas = areas
        self.bboxes = {}
        if n:
            for sid, sl in enumerate(ndimage.find_objects(ids), start=1):
                self.bboxes[sid] = (sl[1].start, sl[0].start, sl[1].stop, sl[0].stop)

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @classmethod
    def empty(cls, width, height) -> "SegmentationSet":
        return cls(np.zeros((height, width), dtype=np.int32))

    @classmethod
    def from_masks(cls, masks) -> "SegmentationSet":
        """Build from possibly overlapping boolean masks.

        Contested pixels go to the smaller mask. Masks left empty after
        resolution are dropped and the remaining ids renumbered in input order.
        """
        masks = [np.asarray(m, dtype=bool) for m in masks]
        if not masks:
            raise ValueError("at least one mask is required")
        ids = np.zeros(masks[0].shape, dtype=np.int32)
        sizes = [int(m.sum()) for m in masks]
        # paint largest first so smaller masks overwrite
        for i in sorted(range(len(masks)), key=lambda i: (-sizes[i], -i)):
            ids[masks[i]] = i + 1
        present = np.unique(ids[ids > 0])
        remap = np.zeros(len(masks) + 1, dtype=np.int32)
        remap[present] = np.arange(1, present.size + 1)
        return cls(remap[ids])

    def lookup(self, pixels) -> np.ndarray:
        """Segment id at (rounded) pixel positions; 0 outside the image."""
        p = np.rint(np.asarray(pixels, dtype=float)).astype(int)
        u, v = p[..., 0], p[..., 1]
        inside = (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)
        out = np.zeros(u.shape, dtype=np.int32)
        out[inside] = self.ids[v[inside], u[inside]]
        return out


@dataclass
class SegmentLabels:
    """Status per segment id; index 0 is the unsegmented background."""

    status: list
    classes: dict = field(default_factory=dict)

    @classmethod
    def all_static(cls, n_segments) -> "SegmentLabels":
        return cls([SegmentStatus.STATIC] * (n_segments + 1))

    @property
    def n_segments(self) -> int:
        return len(self.status) - 1

    def dynamic_mask(self) -> np.ndarray:
        return np.array([s.is_dynamic for s in self.status], dtype=bool)

    def dynamic_ids(self) -> list[int]:
        return [i for i, s in enumerate(self.status) if i > 0 and s.is_dynamic]

    def to_dict(self) -> dict:
        return {
            str(i): {"status": s.value, "class": self.classes.get(i)}
            for i, s in enumerate(self.status) if i > 0
        }


def box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def attach_detections(segs: SegmentationSet, detections, iou_min=0.5, movable_classes=None) -> dict:
    """Assign detection classes to the segments whose boxes match them best.

    Detections are processed by descending confidence; a segment keeps the
    first class it receives. With ``movable_classes`` given, other classes
    are ignored. Returns ``{segment_id: class_name}``.
    """
    classes = {}
    dets = [d.clamped(segs.width, segs.height) for d in detections]
    dets = [d for d in dets if d.is_valid]
    if movable_classes is not None:
        dets = [d for d in dets if d.class_name in movable_classes]
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    for i in order:
        det = dets[i]
        best_id, best_iou = 0, -1.0
        for sid in range(1, segs.n_segments + 1):
            iou = box_iou(segs.bboxes[sid], det.bbox)
            if iou > best_iou:
                best_id, best_iou = sid, iou
        if best_id and best_iou >= iou_min and best_id not in classes:
            classes[best_id] = det.class_name
    return classes


def select_dynamic_segments(
    segs: SegmentationSet,
    classes: dict,
    regions,
    movable_classes=DEFAULT_MOVABLE_CLASSES,
    overlap_min=0.3,
) -> SegmentLabels:
    """Label segments dynamic by movable class or by motion-region overlap."""
    labels = SegmentLabels.all_static(segs.n_segments)
    labels.classes = dict(classes)
    movable = set(movable_classes)
    for sid, name in classes.items():
        if name in movable:
            labels.status[sid] = SegmentStatus.DYNAMIC_MOVABLE
    for region in regions:
        overlap = np.bincount(segs.ids[region.rows, region.cols], minlength=segs.n_segments + 1)
        overlap[0] = 0
        sid = int(np.argmax(overlap))  # first maximum, i.e. lowest id on ties
        if sid == 0 or overlap[sid] < overlap_min * region.area:
            continue
        if labels.status[sid] is SegmentStatus.STATIC:
            labels.status[sid] = SegmentStatus.DYNAMIC_FLOW
    return labels
