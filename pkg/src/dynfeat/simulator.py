"""Synthetic rigid-body scenes with exact depth, flow, masks and matches.

The static world is a cloud of point landmarks; every background pixel
takes the depth of the nearest visible landmark in the image, so the
background is a mosaic of fronto-parallel tiles. Movers are boxes,
ray-cast exactly per pixel and z-buffered against the background. Feature
matches come from the landmarks and from point grids on the box faces.

All randomness derives from the configured seed; per-frame noise uses a
seed sequence keyed by the frame index so frames render independently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial import cKDTree

from .errors import ConfigError
from .geometry import CameraIntrinsics, Pose, pixel_grid
from .segmentation import Detection, SegmentationSet
from .tracking import FeatureMatches

DETECTION_DILATION = 2
DETECTION_CONFIDENCE = 0.9
NOISE_TRUNCATION = 4.0
MIN_DEPTH = 1e-3

Vec3 = tuple[float, float, float]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class IntrinsicsConfig(_Model):
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)

    def build(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


class TrajectoryConfig(_Model):
    """Pose per frame, either listed or generated.

    Generated translation is ``start + velocity*k + sin_amplitude*sin(phi)
    + cos_amplitude*cos(phi)`` with ``phi = 2*pi*k/period + phase``;
    rotation is ``Exp(angular_velocity*k + rot_amplitude*sin(phi)) Exp(start_rotvec)``.
    Listed poses are TUM-ordered ``[tx, ty, tz, qx, qy, qz, qw]``.
    """

    poses: Optional[list[tuple[float, float, float, float, float, float, float]]] = None
    start: Vec3 = (0.0, 0.0, 0.0)
    start_rotvec: Vec3 = (0.0, 0.0, 0.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    angular_velocity: Vec3 = (0.0, 0.0, 0.0)
    sin_amplitude: Vec3 = (0.0, 0.0, 0.0)
    cos_amplitude: Vec3 = (0.0, 0.0, 0.0)
    rot_amplitude: Vec3 = (0.0, 0.0, 0.0)
    period: float = Field(20.0, gt=0)
    phase: float = 0.0

    def build(self, n_frames) -> list[Pose]:
        if self.poses is not None:
            if len(self.poses) != n_frames:
                raise ConfigError(f"trajectory lists {len(self.poses)} poses for {n_frames} frames")
            return [Pose.from_quaternion(p[3:], p[:3]) for p in self.poses]
        base = Pose.from_rotvec(self.start_rotvec).rotation
        out = []
        for k in range(n_frames):
            phi = 2 * np.pi * k / self.period + self.phase
            t = (
                np.array(self.start) + k * np.array(self.velocity)
                + np.sin(phi) * np.array(self.sin_amplitude) + np.cos(phi) * np.array(self.cos_amplitude)
            )
            rv = k * np.array(self.angular_velocity) + np.sin(phi) * np.array(self.rot_amplitude)
            out.append(Pose(Pose.from_rotvec(rv).rotation @ base, t))
        return out


class MoverConfig(_Model):
    size: Vec3
    trajectory: TrajectoryConfig
    class_name: Optional[str] = None
    grid_step: float = Field(0.05, gt=0)

    @model_validator(mode="after")
    def _positive(self):
        if min(self.size) <= 0:
            raise ValueError("box dimensions must be positive")
        return self


class LandmarkConfig(_Model):
    count: int = Field(500, ge=0)
    extent_min: Vec3 = (-3.0, -2.0, 4.0)
    extent_max: Vec3 = (3.0, 2.0, 6.0)


class NoiseConfig(_Model):
    pixel_sigma: float = Field(0.0, ge=0)
    flow_sigma: float = Field(0.0, ge=0)
    depth_sigma: float = Field(0.0, ge=0)


class SceneConfig(_Model):
    intrinsics: IntrinsicsConfig = IntrinsicsConfig(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)
    n_frames: int = Field(30, ge=2)
    frame_rate: float = Field(25.0, gt=0)
    landmarks: LandmarkConfig = LandmarkConfig()
    camera: TrajectoryConfig = TrajectoryConfig()
    movers: list[MoverConfig] = []
    noise: NoiseConfig = NoiseConfig()
    seed: int = 0


@dataclass
class Scene:
    config: SceneConfig
    intrinsics: CameraIntrinsics
    landmarks: np.ndarray
    camera_poses: list
    mover_poses: list
    mover_points: list
    mover_normals: list
    timestamps: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.config.n_frames

    @property
    def n_movers(self) -> int:
        return len(self.mover_poses)

    def half_extents(self, m) -> np.ndarray:
        return 0.5 * np.asarray(self.config.movers[m].size, dtype=float)

    def mover_displacement(self, m, k) -> np.ndarray:
        """World displacement of every grid point of mover ``m`` from k-1 to k."""
        pts = self.mover_points[m]
        return self.mover_poses[m][k].apply(pts) - self.mover_poses[m][k - 1].apply(pts)


@dataclass
class View:
    """Per-frame rendering that needs no previous frame."""

    index: int
    pose: Pose
    depth: np.ndarray
    mover_index: np.ndarray  # -1 for background
    segments: SegmentationSet
    segment_of_mover: dict
    detections: list


@dataclass
class FrameTruth:
    index: int
    pose: Pose
    depth: np.ndarray
    depth_clean: np.ndarray
    flow: np.ndarray
    flow_clean: np.ndarray
    segments: SegmentationSet
    detections: list
    matches: FeatureMatches
    matches_clean: FeatureMatches
    feature_owner: np.ndarray  # mover index or -1
    feature_dynamic: np.ndarray
    mover_index: np.ndarray
    segment_of_mover: dict = field(default_factory=dict)

    @property
    def mover_pixel_fraction(self) -> float:
        return float((self.mover_index >= 0).mean())


def _face_grid(half, step):
    """Points and outward normals on the six faces of a box, inset from edges."""
    pts, normals = [], []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        na = max(1, int(np.floor(2 * half[a] / step)))
        nb = max(1, int(np.floor(2 * half[b] / step)))
        ga = -half[a] + (np.arange(na) + 0.5) * (2 * half[a] / na)
        gb = -half[b] + (np.arange(nb) + 0.5) * (2 * half[b] / nb)
        A, B = np.meshgrid(ga, gb, indexing="ij")
        for sign in (-1.0, 1.0):
            p = np.zeros((A.size, 3))
            p[:, a], p[:, b], p[:, axis] = A.ravel(), B.ravel(), sign * half[axis]
            n = np.zeros((A.size, 3))
            n[:, axis] = sign
            pts.append(p)
            normals.append(n)
    return np.concatenate(pts), np.concatenate(normals)


def build_scene(config: SceneConfig | dict) -> Scene:
    if isinstance(config, dict):
        config = SceneConfig.model_validate(config)
    try:
        K = config.intrinsics.build()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng(config.seed)
    lo = np.asarray(config.landmarks.extent_min, dtype=float)
    hi = np.asarray(config.landmarks.extent_max, dtype=float)
    if np.any(hi < lo):
        raise ConfigError("landmark extent_max must not be below extent_min")
    landmarks = lo + (hi - lo) * rng.random((config.landmarks.count, 3))

    camera = config.camera.build(config.n_frames)
    mover_poses, mover_points, mover_normals = [], [], []
    for i, mover in enumerate(config.movers):
        poses = mover.trajectory.build(config.n_frames)
        half = 0.5 * np.asarray(mover.size, dtype=float)
        for k, (bp, cp) in enumerate(zip(poses, camera)):
            local = bp.inverse().apply(cp.translation)
            if np.all(np.abs(local) <= half):
                raise ConfigError(f"mover {i} envelops the camera at frame {k}")
        pts, normals = _face_grid(half, mover.grid_step)
        mover_poses.append(poses)
        mover_points.append(pts)
        mover_normals.append(normals)
    timestamps = np.arange(config.n_frames) / config.frame_rate
    return Scene(config, K, landmarks, camera, mover_poses, mover_points, mover_normals, timestamps)


def _ray_box(origin, dirs, half):
    """Entry distance of rays ``origin + s*dirs`` into an axis-aligned box; inf on miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (-half - origin) * inv
        t2 = (half - origin) * inv
    # rays parallel to a slab: inside the slab -> unbounded, outside -> miss
    parallel = dirs == 0
    inside = np.abs(origin) <= half
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = lo.max(axis=-1)
    t_far = hi.min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def _cast_movers(scene: Scene, k, dirs):
    """Nearest mover depth and index along camera-frame rays with unit z."""
    depth = np.full(dirs.shape[0], np.inf)
    index = np.full(dirs.shape[0], -1, dtype=np.int64)
    cam = scene.camera_poses[k]
    for m in range(scene.n_movers):
        to_box = scene.mover_poses[m][k].inverse() @ cam
        t = _ray_box(to_box.translation, dirs @ to_box.rotation.T, scene.half_extents(m))
        closer = t < depth
        depth[closer] = t[closer]
        index[closer] = m
    return depth, index


def _landmark_visibility(scene: Scene, k):
    """Camera-frame landmarks, their pixels and a visibility flag at frame k."""
    K = scene.intrinsics
    lm = scene.camera_poses[k].inverse().apply(scene.landmarks)
    z = lm[:, 2]
    front = z > MIN_DEPTH
    pix = np.full((lm.shape[0], 2), -1.0)
    pix[front] = np.stack([K.fx * lm[front, 0] / z[front] + K.cx, K.fy * lm[front, 1] / z[front] + K.cy], axis=1)
    visible = front & K.contains(pix)
    if visible.any() and scene.n_movers:
        dirs = lm[visible] / z[visible, None]
        mdepth, _ = _cast_movers(scene, k, dirs)
        occluded = mdepth < z[visible]
        idx = np.flatnonzero(visible)
        visible[idx[occluded]] = False
    return lm, pix, visible


def _mover_feature_visibility(scene: Scene, m, k):
    K = scene.intrinsics
    world = scene.mover_poses[m][k].apply(scene.mover_points[m])
    to_cam = scene.camera_poses[k].inverse()
    pc = to_cam.apply(world)
    normals = scene.mover_normals[m] @ (to_cam.rotation @ scene.mover_poses[m][k].rotation).T
    z = pc[:, 2]
    front = z > MIN_DEPTH
    pix = np.full((pc.shape[0], 2), -1.0)
    pix[front] = np.stack([K.fx * pc[front, 0] / z[front] + K.cx, K.fy * pc[front, 1] / z[front] + K.cy], axis=1)
    visible = front & K.contains(pix) & (np.einsum("ij,ij->i", normals, pc) < 0)
    if visible.any():
        dirs = pc[visible] / z[visible, None]
        mdepth, midx = _cast_movers(scene, k, dirs)
        ok = (midx == m) & (np.abs(mdepth - z[visible]) <= 1e-7 * z[visible])
        idx = np.flatnonzero(visible)
        visible[idx[~ok]] = False
    return pc, pix, visible


def render_view(scene: Scene, k) -> View:
    if not 0 <= k < scene.n_frames:
        raise IndexError(f"frame {k} out of range [0, {scene.n_frames})")
    K = scene.intrinsics
    grid = pixel_grid(K).reshape(-1, 2)
    dirs = np.concatenate([(grid - [K.cx, K.cy]) / [K.fx, K.fy], np.ones((grid.shape[0], 1))], axis=1)

    _, lm_pix, lm_visible = _landmark_visibility(scene, k)
    lm_cam = scene.camera_poses[k].inverse().apply(scene.landmarks)
    if lm_visible.any():
        tree = cKDTree(lm_pix[lm_visible])
        _, nearest = tree.query(grid, workers=-1)
        bg_depth = lm_cam[lm_visible, 2][nearest]
    else:
        bg_depth = np.full(grid.shape[0], scene.config.landmarks.extent_max[2])

    mdepth, midx = _cast_movers(scene, k, dirs)
    mover_wins = mdepth < bg_depth
    depth = np.where(mover_wins, mdepth, bg_depth).reshape(K.height, K.width)
    mover_index = np.where(mover_wins, midx, -1).reshape(K.height, K.width)

    ids = np.zeros(mover_index.shape, dtype=np.int32)
    segment_of_mover = {}
    for m in range(scene.n_movers):
        mask = mover_index == m
        if mask.any():
            segment_of_mover[m] = len(segment_of_mover) + 1
            ids[mask] = segment_of_mover[m]
    segments = SegmentationSet(ids)

    detections = []
    for m, sid in segment_of_mover.items():
        name = scene.config.movers[m].class_name
        if name is None:
            continue
        x0, y0, x1, y1 = segments.bboxes[sid]
        d = DETECTION_DILATION
        det = Detection(name, (x0 - d, y0 - d, x1 + d, y1 + d), DETECTION_CONFIDENCE)
        detections.append(det.clamped(K.width, K.height))
    return View(k, scene.camera_poses[k], depth, mover_index, segments, segment_of_mover, detections)


def _truncated_normal(rng, sigma, shape):
    if sigma == 0:
        return np.zeros(shape)
    return np.clip(rng.normal(0.0, sigma, shape), -NOISE_TRUNCATION * sigma, NOISE_TRUNCATION * sigma)


def dense_flow(scene: Scene, view: View) -> tuple[np.ndarray, np.ndarray]:
    """Exact flow ``p_k - p_{k-1}`` for every pixel of ``view``.

    Returns ``(flow, valid)``; pixels whose surface point is behind the
    previous camera get zero flow and ``valid = False``.
    """
    k = view.index
    K = scene.intrinsics
    grid = pixel_grid(K).reshape(-1, 2)
    d = view.depth.reshape(-1)
    cam_pts = np.concatenate([(grid - [K.cx, K.cy]) / [K.fx, K.fy] * d[:, None], d[:, None]], axis=1)
    world = scene.camera_poses[k].apply(cam_pts)
    midx = view.mover_index.reshape(-1)
    for m in range(scene.n_movers):
        sel = midx == m
        if sel.any():
            motion = scene.mover_poses[m][k - 1] @ scene.mover_poses[m][k].inverse()
            world[sel] = motion.apply(world[sel])
    prev = scene.camera_poses[k - 1].inverse().apply(world)
    valid = prev[:, 2] > MIN_DEPTH
    z = np.where(valid, prev[:, 2], 1.0)
    p_prev = np.stack([K.fx * prev[:, 0] / z + K.cx, K.fy * prev[:, 1] / z + K.cy], axis=1)
    flow = np.where(valid[:, None], grid - p_prev, 0.0)
    return flow.reshape(K.height, K.width, 2), valid.reshape(K.height, K.width)


def render_frame_truth(scene: Scene, k) -> FrameTruth:
    if not 1 <= k < scene.n_frames:
        raise IndexError(f"frame {k} out of range [1, {scene.n_frames})")
    K = scene.intrinsics
    view = render_view(scene, k)
    flow_clean, _ = dense_flow(scene, view)

    # static landmarks seen in both frames
    lm_prev, pix_prev, vis_prev = _landmark_visibility(scene, k - 1)
    lm_cur, pix_cur, vis_cur = _landmark_visibility(scene, k)
    both = vis_prev & vis_cur
    rows = [dict(
        ids=np.flatnonzero(both), p_prev=pix_prev[both], p_cur=pix_cur[both],
        d_prev=lm_prev[both, 2], d_cur=lm_cur[both, 2],
        seg=np.zeros(int(both.sum()), dtype=np.int64), owner=np.full(int(both.sum()), -1),
        dyn=np.zeros(int(both.sum()), dtype=bool),
    )]
    offset = scene.landmarks.shape[0]
    for m in range(scene.n_movers):
        pc_prev, mp_prev, mv_prev = _mover_feature_visibility(scene, m, k - 1)
        pc_cur, mp_cur, mv_cur = _mover_feature_visibility(scene, m, k)
        sel = mv_prev & mv_cur
        n = int(sel.sum())
        moved = np.linalg.norm(scene.mover_displacement(m, k), axis=1) > 1e-9
        rows.append(dict(
            ids=offset + np.flatnonzero(sel), p_prev=mp_prev[sel], p_cur=mp_cur[sel],
            d_prev=pc_prev[sel, 2], d_cur=pc_cur[sel, 2],
            seg=np.full(n, view.segment_of_mover.get(m, 0), dtype=np.int64), owner=np.full(n, m),
            dyn=moved[sel],
        ))
        offset += scene.mover_points[m].shape[0]
    cat = {key: np.concatenate([r[key] for r in rows]) for key in rows[0]}
    # drop features whose pixel falls on another segment at the silhouette
    consistent = view.segments.lookup(cat["p_cur"]) == cat["seg"]
    cat = {key: v[consistent] for key, v in cat.items()}
    clean = FeatureMatches(cat["ids"], cat["p_prev"], cat["p_cur"], cat["d_prev"], cat["d_cur"], cat["seg"])

    rng = np.random.default_rng(np.random.SeedSequence([scene.config.seed, k]))
    noise = scene.config.noise
    n = len(clean)
    noisy = FeatureMatches(
        clean.ids,
        clean.p_prev + _truncated_normal(rng, noise.pixel_sigma, (n, 2)),
        clean.p_cur + _truncated_normal(rng, noise.pixel_sigma, (n, 2)),
        np.maximum(clean.d_prev + _truncated_normal(rng, noise.depth_sigma, n), MIN_DEPTH),
        np.maximum(clean.d_cur + _truncated_normal(rng, noise.depth_sigma, n), MIN_DEPTH),
        clean.segment_ids,
    )
    flow = flow_clean + _truncated_normal(rng, noise.flow_sigma, flow_clean.shape)
    depth = np.maximum(view.depth + _truncated_normal(rng, noise.depth_sigma, view.depth.shape), MIN_DEPTH)
    return FrameTruth(
        index=k, pose=view.pose, depth=depth, depth_clean=view.depth, flow=flow, flow_clean=flow_clean,
        segments=view.segments, detections=view.detections, matches=noisy, matches_clean=clean,
        feature_owner=cat["owner"], feature_dynamic=cat["dyn"], mover_index=view.mover_index,
        segment_of_mover=view.segment_of_mover,
    )


def noisy_depth(scene: Scene, view: View) -> np.ndarray:
    """Depth map with the configured noise, as written for frame 0."""
    rng = np.random.default_rng(np.random.SeedSequence([scene.config.seed, view.index]))
    sigma = scene.config.noise.depth_sigma
    return np.maximum(view.depth + _truncated_normal(rng, sigma, view.depth.shape), MIN_DEPTH)


def ground_truth(scene: Scene):
    from .evaluation import Trajectory

    return Trajectory(scene.timestamps, scene.camera_poses)


class SimulatedSequence:
    """In-memory frame source with the same ``frame(k)`` contract as a Dataset."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.intrinsics = scene.intrinsics
        self.timestamps = scene.timestamps
        self._truth = {}

    @property
    def n_frames(self) -> int:
        return self.scene.n_frames

    def truth(self, k) -> FrameTruth:
        if k not in self._truth:
            self._truth[k] = render_frame_truth(self.scene, k)
        return self._truth[k]

    def frame(self, k):
        from .dataset import FrameData

        if k == 0:
            view = render_view(self.scene, 0)
            return FrameData(0, float(self.timestamps[0]), noisy_depth(self.scene, view),
                             view.segments, view.detections)
        t = self.truth(k)
        return FrameData(k, float(self.timestamps[k]), t.depth, t.segments, t.detections, t.flow, t.matches)

    def groundtruth(self):
        return ground_truth(self.scene)


def write_dataset(scene: Scene, outdir) -> dict:
    """Render every frame to the on-disk layout and return the manifest."""
    from .dataset import DatasetWriter

    writer = DatasetWriter(outdir, scene.intrinsics, scene.timestamps)
    seq = SimulatedSequence(scene)
    for k in range(scene.n_frames):
        fd = seq.frame(k)
        writer.add_frame(k, fd.depth, fd.segments, fd.detections, fd.flow, fd.matches)
        seq._truth.pop(k, None)
    writer.add_groundtruth(ground_truth(scene))
    return writer.finish()
