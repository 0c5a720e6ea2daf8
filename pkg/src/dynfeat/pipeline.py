"""Frame-by-frame driver: boundaries -> segment labels -> tracking."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .errors import DynFeatError, TrackingLost
from .evaluation import Trajectory
from .flow import BoundaryMap, extract_motion_regions, motion_boundaries
from .geometry import Pose
from .segmentation import SegmentLabels, attach_detections, select_dynamic_segments
from .tracking import FrameState, classify_quasi, track_frame

log = logging.getLogger(__name__)


@dataclass
class FrameClassification:
    boundary: BoundaryMap
    regions: list
    classes: dict
    labels: SegmentLabels


@dataclass
class FrameDiagnostics:
    index: int
    n_features: int
    n_quasi_dynamic: int
    n_static: int
    n_dynamic: int
    iterations: int
    converged: bool
    tracking_lost: bool
    segment_labels: dict
    dynamic_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PipelineResult:
    trajectory: Trajectory
    diagnostics: list
    states: list

    @property
    def lost_frames(self) -> list[int]:
        return [d.index for d in self.diagnostics if d.tracking_lost]


def classify_frame(frame, config: RunConfig) -> FrameClassification:
    """Segment labels for one frame from its flow, masks and detections."""
    boundary = motion_boundaries(frame.flow, config.boundary)
    regions = extract_motion_regions(boundary.binary, config.min_region_area)
    classes = attach_detections(frame.segments, frame.detections, config.iou_min)
    labels = select_dynamic_segments(
        frame.segments, classes, regions, config.movable_classes, config.overlap_min
    )
    return FrameClassification(boundary, regions, classes, labels)


def predict_pose(poses: list) -> Pose:
    """Constant-velocity prediction; the last pose while fewer than two exist."""
    if len(poses) < 2:
        return poses[-1]
    return poses[-1] @ (poses[-2].inverse() @ poses[-1])


def run_pipeline(source, config: RunConfig | None = None) -> PipelineResult:
    """Track every frame of ``source`` and return the estimated trajectory.

    ``source`` is anything with ``intrinsics``, ``timestamps``, ``n_frames``
    and ``frame(k)``, e.g. a :class:`~dynfeat.dataset.Dataset`. Frame 0
    fixes the world frame at identity.
    """
    config = config or RunConfig()
    K = source.intrinsics
    poses = [Pose.identity()]
    diagnostics, states = [], []
    use_classification = not config.disable_classification
    for k in range(1, source.n_frames):
        try:
            frame = source.frame(k)
            if use_classification:
                labels = classify_frame(frame, config).labels
            else:
                labels = SegmentLabels.all_static(frame.segments.n_segments)
            init = predict_pose(poses)
            matches = frame.matches
            try:
                state = track_frame(
                    matches, labels, poses[-1], K, init=init,
                    robust=config.robust, consistency=config.consistency,
                    min_features=config.min_static_features,
                    classify=use_classification, refine=not config.disable_consistency_check,
                )
            except TrackingLost as exc:
                log.warning("frame %d: tracking lost (%s); keeping predicted pose", k, exc)
                quasi = classify_quasi(matches, labels)
                state = FrameState(
                    rough_pose=init, pose=init, rough_static=~quasi, static=~quasi,
                    segment_labels=labels, quasi_dynamic=quasi, dynamic=quasi,
                    converged=False, tracking_lost=True,
                )
        except DynFeatError as exc:
            raise type(exc)(f"frame {k}: {exc}") from exc
        poses.append(state.pose)
        states.append(state)
        diagnostics.append(FrameDiagnostics(
            index=k,
            n_features=len(matches),
            n_quasi_dynamic=int(state.quasi_dynamic.sum()),
            n_static=int(state.static.sum()),
            n_dynamic=int(state.dynamic.sum()),
            iterations=state.iterations,
            converged=state.converged,
            tracking_lost=state.tracking_lost,
            segment_labels=state.segment_labels.to_dict(),
            dynamic_ids=[int(i) for i in matches.ids[state.dynamic]],
        ))
    traj = Trajectory(np.asarray(source.timestamps, dtype=float)[: len(poses)], poses)
    return PipelineResult(traj, diagnostics, states)
