"""Dataset directory layout, manifest handling and per-frame loading.

Layout, relative to the manifest::

    manifest.json
    depth/NNNNNN.pfm         every frame
    masks/NNNNNN.pgm         every frame
    detections/NNNNNN.json   every frame
    flow/NNNNNN.flo          frames >= 1, flow p_k - p_{k-1}
    matches/NNNNNN.csv       frames >= 1, matches k-1 -> k
    groundtruth.txt          optional TUM trajectory
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import formats
from .errors import FormatError, ShapeError
from .evaluation import Trajectory
from .geometry import CameraIntrinsics
from .segmentation import SegmentationSet
from .tracking import FeatureMatches

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class FrameData:
    index: int
    timestamp: float
    depth: np.ndarray
    segments: SegmentationSet
    detections: list
    flow: Optional[np.ndarray] = None
    matches: Optional[FeatureMatches] = None


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def frame_paths(k: int) -> dict:
    name = f"{k:06d}"
    paths = {
        "depth": f"depth/{name}.pfm",
        "mask": f"masks/{name}.pgm",
        "detections": f"detections/{name}.json",
        "flow": None,
        "matches": None,
    }
    if k > 0:
        paths["flow"] = f"flow/{name}.flo"
        paths["matches"] = f"matches/{name}.csv"
    return paths


def read_maps(depth_path, mask_path, detections_path=None):
    """Depth, segments and detections of one frame, checked for equal size."""
    depth = formats.read_pfm(depth_path)
    segs = formats.read_mask(mask_path)
    if depth.shape != segs.ids.shape:
        raise ShapeError(f"depth {depth.shape} and mask {segs.ids.shape} differ in size")
    dets = formats.read_detections(detections_path) if detections_path else []
    return depth, segs, dets


class DatasetWriter:
    """Incrementally writes frames and finalises the manifest with checksums."""

    def __init__(self, root, intrinsics: CameraIntrinsics, timestamps):
        self.root = Path(root)
        self.intrinsics = intrinsics
        self.timestamps = np.asarray(timestamps, dtype=float)
        self.frames = []
        self.groundtruth = None
        for sub in ("depth", "masks", "detections", "flow", "matches"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def _path(self, rel):
        return self.root / rel

    def add_frame(self, k, depth, segments, detections, flow=None, matches=None):
        paths = frame_paths(k)
        try:
            formats.write_pfm(self._path(paths["depth"]), depth)
            formats.write_mask(self._path(paths["mask"]), segments)
            formats.write_detections(self._path(paths["detections"]), detections)
            if k > 0:
                formats.write_flow(self._path(paths["flow"]), flow)
                formats.write_matches(self._path(paths["matches"]), matches)
        except OSError as exc:
            raise OSError(f"failed writing frame {k} under {self.root}: {exc}") from exc
        self.frames.append({"index": k, "timestamp": float(self.timestamps[k]), **paths})

    def add_groundtruth(self, traj: Trajectory, name="groundtruth.txt"):
        formats.write_trajectory(self.root / name, traj)
        self.groundtruth = name

    def finish(self) -> dict:
        files = [p for f in self.frames for key, p in f.items() if key not in ("index", "timestamp") and p]
        if self.groundtruth:
            files.append(self.groundtruth)
        manifest = {
            "format_version": FORMAT_VERSION,
            "n_frames": len(self.frames),
            "intrinsics": self.intrinsics.to_dict(),
            "frames": sorted(self.frames, key=lambda f: f["index"]),
            "groundtruth": self.groundtruth,
            "checksums": {rel: sha256(self.root / rel) for rel in sorted(files)},
        }
        (self.root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")
        return manifest


class Dataset:
    """A dataset on disk, opened from its manifest."""

    def __init__(self, manifest_path):
        path = Path(manifest_path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        self.manifest_path = path
        self.root = path.parent
        try:
            self.manifest = json.loads(path.read_text())
        except OSError as exc:
            raise FormatError(f"cannot read manifest: {exc.strerror}", path=path) from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}", path=path, offset=exc.pos) from exc
        m = self.manifest
        try:
            if m.get("format_version") != FORMAT_VERSION:
                raise FormatError(f"unsupported format_version {m.get('format_version')!r}", path=path)
            self.intrinsics = CameraIntrinsics(**m["intrinsics"])
            self.frames = sorted(m["frames"], key=lambda f: f["index"])
            if [f["index"] for f in self.frames] != list(range(m["n_frames"])):
                raise FormatError("frame indices must be 0..n_frames-1", path=path)
            self.timestamps = np.array([f["timestamp"] for f in self.frames], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed manifest: {exc}", path=path) from exc
        for rel in self.referenced_files():
            if not (self.root / rel).is_file():
                raise FormatError(f"referenced file {rel} does not exist", path=path)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def referenced_files(self) -> list[str]:
        files = []
        for f in self.frames:
            files += [f[key] for key in ("depth", "mask", "detections", "flow", "matches") if f.get(key)]
        if self.manifest.get("groundtruth"):
            files.append(self.manifest["groundtruth"])
        return files

    def verify(self) -> list[str]:
        """Relative paths whose checksum is missing or does not match."""
        checksums = self.manifest.get("checksums", {})
        bad = []
        for rel in self.referenced_files():
            expected = checksums.get(rel)
            if expected is None or sha256(self.root / rel) != expected:
                bad.append(rel)
        return bad

    def groundtruth(self) -> Optional[Trajectory]:
        rel = self.manifest.get("groundtruth")
        return formats.read_trajectory(self.root / rel) if rel else None

    def frame(self, k: int) -> FrameData:
        if not 0 <= k < self.n_frames:
            raise IndexError(f"frame {k} out of range [0, {self.n_frames})")
        f = self.frames[k]
        depth, segs, dets = read_maps(
            self.root / f["depth"], self.root / f["mask"],
            self.root / f["detections"] if f.get("detections") else None,
        )
        shape = (self.intrinsics.height, self.intrinsics.width)
        if depth.shape != shape:
            raise ShapeError(f"frame {k}: depth is {depth.shape}, intrinsics say {shape}")
        flow = matches = None
        if k > 0:
            flow = formats.read_flow(self.root / f["flow"])
            if flow.shape[:2] != shape:
                raise ShapeError(f"frame {k}: flow is {flow.shape[:2]}, intrinsics say {shape}")
            matches = formats.read_matches(self.root / f["matches"])
        return FrameData(k, float(self.timestamps[k]), depth, segs, dets, flow, matches)
