"""Trajectory association, rigid alignment and ATE/RTE metrics."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AssociationError, DegenerateAlignment, InsufficientLength
from .geometry import Pose

log = logging.getLogger(__name__)

DEFAULT_MAX_DT = 0.02


class Trajectory:
    """Timestamped body-to-world poses with strictly increasing timestamps."""

    def __init__(self, timestamps, poses):
        self.timestamps = np.asarray(timestamps, dtype=float).reshape(-1)
        self.poses = list(poses)
        if self.timestamps.size != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Trajectory(self.timestamps[idx], self.poses[idx])
        return self.timestamps[idx], self.poses[idx]

    def select(self, indices) -> "Trajectory":
        indices = list(indices)
        return Trajectory(self.timestamps[indices], [self.poses[i] for i in indices])

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def transformed(self, S: Pose) -> "Trajectory":
        return Trajectory(self.timestamps, [S @ p for p in self.poses])

    def frame_rate(self) -> float:
        if len(self) < 2:
            raise InsufficientLength("frame rate needs at least two poses")
        return float(1.0 / np.median(np.diff(self.timestamps)))


def associate(est: Trajectory, gt: Trajectory, max_dt=DEFAULT_MAX_DT) -> tuple[Trajectory, Trajectory]:
    """Pair poses by nearest timestamp; one-to-one and order preserving."""
    if len(est) == 0 or len(gt) == 0:
        raise AssociationError("cannot associate an empty trajectory")
    candidates = []
    for i, t in enumerate(est.timestamps):
        j = int(np.searchsorted(gt.timestamps, t))
        for jj in (j - 1, j):
            if 0 <= jj < len(gt):
                dt = abs(gt.timestamps[jj] - t)
                if dt <= max_dt:
                    candidates.append((dt, i, jj))
    candidates.sort()
    used_e, used_g, pairs = set(), set(), []
    for _, i, j in candidates:
        if i not in used_e and j not in used_g:
            used_e.add(i)
            used_g.add(j)
            pairs.append((i, j))
    pairs.sort()
    monotone = []
    for i, j in pairs:
        if not monotone or j > monotone[-1][1]:
            monotone.append((i, j))
    if not monotone:
        raise AssociationError(f"no timestamp pairs within {max_dt} s")
    return est.select(i for i, _ in monotone), gt.select(j for _, j in monotone)


def align_rigid(est_positions, gt_positions) -> Pose:
    """Least-squares rigid transform ``S`` with ``gt ~ S * est`` (no scale).

    Raises DegenerateAlignment with fewer than three points or when the
    cross-covariance has rank below two (collinear tracks).
    """
    est = np.asarray(est_positions, dtype=float)
    gt = np.asarray(gt_positions, dtype=float)
    if est.shape != gt.shape or est.ndim != 2 or est.shape[1] != 3:
        raise ValueError("position arrays must both be (N, 3)")
    if est.shape[0] < 3:
        raise DegenerateAlignment(f"need at least 3 positions, got {est.shape[0]}")
    mu_e, mu_g = est.mean(axis=0), gt.mean(axis=0)
    H = (est - mu_e).T @ (gt - mu_g)
    U, s, Vt = np.linalg.svd(H)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise DegenerateAlignment("positions are collinear; rotation is not determined")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return Pose(R, mu_g - R @ mu_e)


def align_translation(est_positions, gt_positions) -> Pose:
    est = np.asarray(est_positions, dtype=float)
    gt = np.asarray(gt_positions, dtype=float)
    return Pose(np.eye(3), gt.mean(axis=0) - est.mean(axis=0))


def ate_errors(est: Trajectory, gt: Trajectory, S: Pose) -> np.ndarray:
    """Translation norm of ``T_k^-1 S That_k`` per paired pose."""
    return np.array([np.linalg.norm((g.inverse() @ S @ e).translation) for e, g in zip(est.poses, gt.poses)])


def rmse(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def ate_rmse(est: Trajectory, gt: Trajectory):
    """Returns ``(rmse, per_step_errors, S, degenerate)`` for paired trajectories."""
    if len(est) != len(gt):
        raise ValueError("trajectories must be paired")
    degenerate = False
    try:
        S = align_rigid(est.positions, gt.positions)
    except DegenerateAlignment as exc:
        log.warning("falling back to translation-only alignment: %s", exc)
        S = align_translation(est.positions, gt.positions)
        degenerate = True
    errors = ate_errors(est, gt, S)
    return rmse(errors), errors, S, degenerate


def rte_errors(est: Trajectory, gt: Trajectory, delta: int):
    """Per-step ``(translation_m, rotation_deg)`` of the relative-motion error."""
    n = len(est)
    if len(gt) != n:
        raise ValueError("trajectories must be paired")
    if delta < 1 or n <= delta:
        raise InsufficientLength(f"need more than delta={delta} poses, got {n}")
    trans, rot = [], []
    for k in range(n - delta):
        est_rel = est.poses[k].inverse() @ est.poses[k + delta]
        gt_rel = gt.poses[k].inverse() @ gt.poses[k + delta]
        E = est_rel.inverse() @ gt_rel
        trans.append(np.linalg.norm(E.translation))
        rot.append(np.degrees(E.rotation_angle()))
    return np.array(trans), np.array(rot)


def rte_rmse(est: Trajectory, gt: Trajectory, delta: int):
    """Returns ``(trans_rmse_m, rot_rmse_deg, trans_errors, rot_errors_deg)``."""
    trans, rot = rte_errors(est, gt, delta)
    return rmse(trans), rmse(rot), trans, rot


@dataclass
class EvalReport:
    ate_rmse: float
    rte_trans_rmse: float
    rte_rot_rmse: float
    delta: int
    n: int
    alignment: Pose
    alignment_degenerate: bool = False
    timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ate_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rte_trans_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rte_rot_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "ate_rmse_m": self.ate_rmse,
            "rte_trans_rmse_m": self.rte_trans_rmse,
            "rte_rot_rmse_deg": self.rte_rot_rmse,
            "delta": self.delta,
            "n": self.n,
            "alignment_degenerate": self.alignment_degenerate,
            "alignment": {
                "translation": self.alignment.translation.tolist(),
                "quaternion_xyzw": self.alignment.quaternion().tolist(),
            },
        }

    def write(self, outdir) -> tuple[Path, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        json_path = outdir / "report.json"
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        csv_path = outdir / "errors.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "timestamp", "ate_m", "rte_trans_m", "rte_rot_deg"])
            for k in range(self.n):
                has_rte = k < self.rte_trans_errors.size
                writer.writerow([
                    k, repr(float(self.timestamps[k])), repr(float(self.ate_errors[k])),
                    repr(float(self.rte_trans_errors[k])) if has_rte else "",
                    repr(float(self.rte_rot_errors[k])) if has_rte else "",
                ])
        return json_path, csv_path


def evaluate(est: Trajectory, gt: Trajectory, delta=None, max_dt=DEFAULT_MAX_DT) -> EvalReport:
    """Associate, align and compute both metrics.

    ``delta`` defaults to the ground-truth frame rate rounded to whole
    frames, i.e. a one-second window.
    """
    est_p, gt_p = associate(est, gt, max_dt)
    if delta is None:
        delta = max(1, int(round(gt.frame_rate())))
    ate, ate_err, S, degenerate = ate_rmse(est_p, gt_p)
    rte_t, rte_r, t_err, r_err = rte_rmse(est_p, gt_p, delta)
    return EvalReport(
        ate_rmse=ate, rte_trans_rmse=rte_t, rte_rot_rmse=rte_r, delta=delta, n=len(est_p),
        alignment=S, alignment_degenerate=degenerate, timestamps=est_p.timestamps,
        ate_errors=ate_err, rte_trans_errors=t_err, rte_rot_errors=r_err,
    )
