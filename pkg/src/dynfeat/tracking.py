"""Feature classification, robust pose estimation and scene-flow refinement.

Poses handed in and out of this module are body-to-world. The solver
works on the world-to-camera transform internally, since that is the map
the reprojection residual is written in.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.spatial.transform import Rotation

from .errors import InvalidDepth, TrackingLost
from .geometry import CameraIntrinsics, Pose, backproject
from .segmentation import SegmentLabels, SegmentStatus

log = logging.getLogger(__name__)

MIN_STATIC_FEATURES = 30


class RobustParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    loss: str = Field("huber", pattern="^(huber|l2)$")
    # 95% chi-square quantile for 2 DOF
    huber_delta: float = Field(float(np.sqrt(5.991)), gt=0)
    sigma: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    max_gn_iterations: int = Field(50, ge=1)
    epsilon: float = Field(1e-12, gt=0)

    @field_validator("sigma")
    @classmethod
    def _spd(cls, v):
        m = np.asarray(v, dtype=float)
        if not np.allclose(m, m.T) or np.any(np.linalg.eigvalsh(m) <= 0):
            raise ValueError("sigma must be symmetric positive definite")
        return v


class ConsistencyParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sceneflow_threshold: float = Field(0.05, gt=0)
    dynamic_fraction: float = Field(0.3, gt=0, lt=1)
    max_refine_iterations: int = Field(5, ge=1)


@dataclass
class FeatureMatches:
    """Correspondences between frame k-1 and frame k, one row per feature."""

    ids: np.ndarray
    p_prev: np.ndarray
    p_cur: np.ndarray
    d_prev: np.ndarray
    d_cur: np.ndarray
    segment_ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        n = self.ids.size
        self.p_prev = np.asarray(self.p_prev, dtype=float).reshape(n, 2)
        self.p_cur = np.asarray(self.p_cur, dtype=float).reshape(n, 2)
        self.d_prev = np.asarray(self.d_prev, dtype=float).reshape(n)
        self.d_cur = np.asarray(self.d_cur, dtype=float).reshape(n)
        self.segment_ids = np.asarray(self.segment_ids, dtype=np.int64).reshape(n)

    def __len__(self):
        return self.ids.size

    def subset(self, mask) -> "FeatureMatches":
        return FeatureMatches(
            self.ids[mask], self.p_prev[mask], self.p_cur[mask],
            self.d_prev[mask], self.d_cur[mask], self.segment_ids[mask],
        )

    @classmethod
    def empty(cls) -> "FeatureMatches":
        return cls(np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(0))


@dataclass
class PoseEstimate:
    pose: Pose
    cost: float
    iterations: int
    converged: bool
    n_features: int
    cost_history: list = field(default_factory=list)


@dataclass
class RefineResult:
    pose: Pose
    static: np.ndarray
    dynamic: np.ndarray
    segment_labels: SegmentLabels
    iterations: int
    converged: bool
    scene_flow: np.ndarray


@dataclass
class FrameState:
    """Outcome of tracking one frame."""

    rough_pose: Pose
    pose: Pose
    rough_static: np.ndarray
    static: np.ndarray
    segment_labels: SegmentLabels
    quasi_dynamic: np.ndarray
    dynamic: np.ndarray
    iterations: int = 0
    converged: bool = True
    tracking_lost: bool = False


def classify_quasi(matches: FeatureMatches, labels: SegmentLabels) -> np.ndarray:
    """True for features lying in a dynamic segment (quasi-dynamic)."""
    dyn = labels.dynamic_mask()
    sid = matches.segment_ids
    known = (sid >= 0) & (sid < dyn.size)
    out = np.zeros(len(matches), dtype=bool)
    out[known] = dyn[sid[known]]
    return out


def huber_cost(sq, delta):
    """Huber loss applied to squared (whitened) residual norms."""
    sq = np.asarray(sq, dtype=float)
    r = np.sqrt(sq)
    return np.where(r <= delta, sq, 2.0 * delta * r - delta * delta)


def _robust_cost_and_weights(sq, params: RobustParams):
    if params.loss == "l2":
        return sq, np.ones_like(sq)
    r = np.sqrt(sq)
    d = params.huber_delta
    w = np.where(r <= d, 1.0, d / np.maximum(r, 1e-300))
    return huber_cost(sq, d), w


def _residuals(R, t, X, p, K):
    Xc = X @ R.T + t
    z = Xc[:, 2]
    proj = np.stack([K.fx * Xc[:, 0] / z + K.cx, K.fy * Xc[:, 1] / z + K.cy], axis=1)
    return p - proj, Xc


def estimate_pose(
    matches: FeatureMatches,
    prev_pose: Pose,
    K: CameraIntrinsics,
    params: RobustParams | None = None,
    init: Pose | None = None,
    min_features: int = MIN_STATIC_FEATURES,
) -> PoseEstimate:
    """Camera pose at frame k minimising robust reprojection error.

    Landmarks are lifted from the previous frame's pixels and depths and
    placed in the world with ``prev_pose``; the current pixels are the
    observations. Solved by iteratively reweighted Gauss-Newton on a
    left-multiplied 6-DOF update with step halving on cost increase.
    """
    params = params or RobustParams()
    if len(matches) < min_features:
        raise TrackingLost(f"{len(matches)} static features, need {min_features}", n_features=len(matches))
    if np.any(~(matches.d_prev > 0)):
        raise InvalidDepth("match depths must be positive")

    X = prev_pose.apply(backproject(matches.p_prev, matches.d_prev, K))
    p = matches.p_cur
    init = prev_pose if init is None else init
    T_cw = init.inverse()
    R, t = T_cw.rotation, T_cw.translation

    L = np.linalg.cholesky(np.asarray(params.sigma, dtype=float))
    Linv = np.linalg.inv(L)

    def evaluate(R, t):
        r, Xc = _residuals(R, t, X, p, K)
        if np.any(Xc[:, 2] <= 1e-9):
            return np.inf, None, None, None
        e = r @ Linv.T
        sq = np.einsum("ij,ij->i", e, e)
        cost, w = _robust_cost_and_weights(sq, params)
        return float(cost.sum()), e, w, Xc

    cost, e, w, Xc = evaluate(R, t)
    if not np.isfinite(cost):
        raise TrackingLost("initial pose puts landmarks behind the camera", n_features=len(matches))

    history = [cost]
    converged = False
    it = 0
    for it in range(1, params.max_gn_iterations + 1):
        x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
        n = x.size
        # d(proj)/d(Xc)
        dpi = np.zeros((n, 2, 3))
        dpi[:, 0, 0] = K.fx / z
        dpi[:, 0, 2] = -K.fx * x / (z * z)
        dpi[:, 1, 1] = K.fy / z
        dpi[:, 1, 2] = -K.fy * y / (z * z)
        # d(Xc)/d(xi) for xi = (omega, v): [-[Xc]_x, I]
        dX = np.zeros((n, 3, 6))
        dX[:, 0, 1], dX[:, 0, 2] = z, -y
        dX[:, 1, 0], dX[:, 1, 2] = -z, x
        dX[:, 2, 0], dX[:, 2, 1] = y, -x
        dX[:, :, 3:] = np.eye(3)
        J = -np.einsum("ab,nbc,ncd->nad", Linv, dpi, dX)
        Jw = J * w[:, None, None]
        H = np.einsum("nai,naj->ij", Jw, J)
        g = np.einsum("nai,na->i", Jw, e)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, g, rcond=None)[0]

        accepted = False
        scale = 1.0
        for _ in range(20):
            dR = Rotation.from_rotvec(scale * step[:3]).as_matrix()
            R_new = dR @ R
            t_new = dR @ t + scale * step[3:]
            new = evaluate(R_new, t_new)
            if new[0] <= cost:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            converged = True
            break
        improvement = cost - new[0]
        R, t = R_new, t_new
        cost, e, w, Xc = new
        history.append(cost)
        if np.linalg.norm(scale * step) < params.epsilon or improvement <= params.epsilon * max(cost, 1.0) * 1e-3:
            converged = True
            break

    # re-orthonormalise accumulated rotation
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    pose = Pose(R, t).inverse()
    if not converged:
        log.debug("pose estimation hit %d iterations without converging", params.max_gn_iterations)
    return PoseEstimate(pose, cost, it, converged, len(matches), history)


def scene_flow(matches: FeatureMatches, cur_pose: Pose, prev_pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """World-frame landmark displacement between frame k-1 and frame k."""
    m_cur = backproject(matches.p_cur, matches.d_cur, K)
    m_prev = backproject(matches.p_prev, matches.d_prev, K)
    return cur_pose.apply(m_cur) - prev_pose.apply(m_prev)


def relabel_segments(
    labels: SegmentLabels,
    segment_ids: np.ndarray,
    feature_dynamic: np.ndarray,
    dynamic_fraction: float,
) -> SegmentLabels:
    """Re-evaluate segment status from per-feature scene-flow verdicts.

    A segment becomes dynamic when strictly more than ``dynamic_fraction`` of
    its features are dynamic; movable-class segments stay dynamic. Segments
    without features keep their previous status.
    """
    status = list(labels.status)
    n = len(status)
    sid = np.where((segment_ids >= 0) & (segment_ids < n), segment_ids, 0)
    total = np.bincount(sid, minlength=n)
    dyn = np.bincount(sid, weights=feature_dynamic.astype(float), minlength=n)
    for s in range(1, n):
        if status[s] is SegmentStatus.DYNAMIC_MOVABLE or total[s] == 0:
            continue
        if dyn[s] > dynamic_fraction * total[s]:
            if status[s] is SegmentStatus.STATIC:
                status[s] = SegmentStatus.DYNAMIC_FLOW
        else:
            status[s] = SegmentStatus.STATIC
    return SegmentLabels(status, dict(labels.classes))


def consistency_refine(
    matches: FeatureMatches,
    static: np.ndarray,
    labels: SegmentLabels,
    rough_pose: Pose,
    prev_pose: Pose,
    K: CameraIntrinsics,
    robust: RobustParams | None = None,
    consistency: ConsistencyParams | None = None,
    min_features: int = MIN_STATIC_FEATURES,
) -> RefineResult:
    """Alternate scene-flow classification and pose re-estimation.

    ``static`` is the feature set the rough pose was estimated from. Each
    round recomputes scene flow with the current pose, flags features whose
    displacement exceeds the threshold, re-evaluates segments and, if the
    static set changed, re-estimates the pose on the new set.
    """
    robust = robust or RobustParams()
    consistency = consistency or ConsistencyParams()
    current = np.asarray(static, dtype=bool).copy()
    pose = rough_pose
    converged = False
    seg = labels
    flow = np.zeros((len(matches), 3))
    iterations = 0
    for iterations in range(1, consistency.max_refine_iterations + 1):
        flow = scene_flow(matches, pose, prev_pose, K)
        moving = np.linalg.norm(flow, axis=1) > consistency.sceneflow_threshold
        seg = relabel_segments(labels, matches.segment_ids, moving, consistency.dynamic_fraction)
        new_static = ~moving & ~classify_quasi(matches, seg)
        if np.array_equal(new_static, current):
            converged = True
            break
        if new_static.sum() < min_features:
            raise TrackingLost(
                f"consistency check left {int(new_static.sum())} static features",
                n_features=int(new_static.sum()),
            )
        current = new_static
        pose = estimate_pose(matches.subset(current), prev_pose, K, robust, init=pose, min_features=min_features).pose
    return RefineResult(
        pose=pose, static=current, dynamic=~current, segment_labels=seg,
        iterations=iterations, converged=converged, scene_flow=flow,
    )


def track_frame(
    matches: FeatureMatches,
    labels: SegmentLabels,
    prev_pose: Pose,
    K: CameraIntrinsics,
    init: Pose | None = None,
    robust: RobustParams | None = None,
    consistency: ConsistencyParams | None = None,
    min_features: int = MIN_STATIC_FEATURES,
    classify: bool = True,
    refine: bool = True,
) -> FrameState:
    """Rough pose from quasi-static features, then consistency refinement.

    With ``classify=False`` every feature is treated as static and no
    refinement runs, which reproduces a plain robust tracker.
    """
    if classify:
        quasi = classify_quasi(matches, labels)
    else:
        quasi = np.zeros(len(matches), dtype=bool)
        labels = SegmentLabels.all_static(labels.n_segments)
    rough_static = ~quasi
    rough = estimate_pose(matches.subset(rough_static), prev_pose, K, robust, init=init, min_features=min_features)
    if not (classify and refine):
        return FrameState(
            rough_pose=rough.pose, pose=rough.pose, rough_static=rough_static, static=rough_static,
            segment_labels=labels, quasi_dynamic=quasi, dynamic=quasi.copy(),
            iterations=0, converged=rough.converged,
        )
    refined = consistency_refine(
        matches, rough_static, labels, rough.pose, prev_pose, K, robust, consistency, min_features
    )
    return FrameState(
        rough_pose=rough.pose, pose=refined.pose, rough_static=rough_static, static=refined.static,
        segment_labels=refined.segment_labels, quasi_dynamic=quasi, dynamic=refined.dynamic,
        iterations=refined.iterations, converged=refined.converged,
    )
