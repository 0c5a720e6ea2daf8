"""Readers and writers for the on-disk dataset artifacts.

Binary readers are strict: wrong magic, truncation and trailing bytes all
raise :class:`FormatError` carrying the byte offset of the problem.
"""
from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path

import numpy as np

from .errors import FormatError
from .evaluation import Trajectory
from .geometry import Pose
from .segmentation import Detection, SegmentationSet
from .tracking import FeatureMatches

FLO_MAGIC = np.float32(202021.25)
MATCH_HEADER = ["id", "u_prev", "v_prev", "u_cur", "v_cur", "d_prev", "d_cur", "segment_id"]


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror}", path=path) from exc


# -- Middlebury .flo ----------------------------------------------------------

def write_flow(path, flow):
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC.astype("<f4").tobytes())
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(flow).tobytes())


def read_flow(path) -> np.ndarray:
    """Read a ``.flo`` file into an ``(H, W, 2)`` float32 array."""
    raw = _read_bytes(path)
    if len(raw) < 12:
        raise FormatError("truncated .flo header", path=path, offset=len(raw))
    magic = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if magic != FLO_MAGIC:
        raise FormatError(f"bad .flo magic {float(magic)!r}", path=path, offset=0)
    w, h = (int(x) for x in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if w <= 0 or h <= 0:
        raise FormatError(f"invalid .flo dimensions {w}x{h}", path=path, offset=4)
    expected = 12 + 8 * w * h
    if len(raw) < expected:
        raise FormatError(f"truncated .flo data, expected {expected} bytes", path=path, offset=len(raw))
    if len(raw) > expected:
        raise FormatError("trailing bytes after .flo data", path=path, offset=expected)
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2).copy()


# -- PNM headers --------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pnm_header(raw: bytes, n_tokens: int, path):
    """Parse whitespace-separated header tokens; returns tokens and data offset."""
    tokens, pos = [], 0
    for _ in range(n_tokens):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise FormatError("truncated header", path=path, offset=pos)
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(raw) or raw[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise FormatError("missing whitespace after header", path=path, offset=pos)
    return tokens, pos + 1


def _parse_int(token, path, what):
    try:
        value = int(token)
    except ValueError:
        raise FormatError(f"invalid {what} {token!r}", path=path) from None
    if value <= 0:
        raise FormatError(f"invalid {what} {value}", path=path)
    return value


# -- PFM depth ----------------------------------------------------------------

def write_pfm(path, image):
    """Greyscale little-endian PFM; rows stored bottom to top."""
    image = np.asarray(image, dtype="<f4")
    if image.ndim != 2:
        raise ValueError("PFM writer expects a 2-D array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    raw = _read_bytes(path)
    tokens, offset = _pnm_header(raw, 4, path)
    if tokens[0] == b"PF":
        raise FormatError("colour PFM is not supported; expected greyscale 'Pf'", path=path, offset=0)
    if tokens[0] != b"Pf":
        raise FormatError(f"bad PFM magic {tokens[0]!r}", path=path, offset=0)
    w = _parse_int(tokens[1], path, "width")
    h = _parse_int(tokens[2], path, "height")
    try:
        scale = float(tokens[3])
    except ValueError:
        raise FormatError(f"invalid PFM scale {tokens[3]!r}", path=path) from None
    if scale >= 0:
        raise FormatError("big-endian PFM (positive scale) is not supported", path=path)
    expected = offset + 4 * w * h
    if len(raw) < expected:
        raise FormatError(f"truncated PFM data, expected {expected} bytes", path=path, offset=len(raw))
    if len(raw) > expected:
        raise FormatError("trailing bytes after PFM data", path=path, offset=expected)
    return np.frombuffer(raw, dtype="<f4", offset=offset).reshape(h, w)[::-1].copy()


# -- PGM masks ----------------------------------------------------------------

def write_pgm(path, image):
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM writer expects a 2-D array")
    if image.size and (image.min() < 0 or image.max() > 255):
        raise ValueError("PGM values must lie in 0..255")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = _read_bytes(path)
    tokens, offset = _pnm_header(raw, 4, path)
    if tokens[0] != b"P5":
        raise FormatError(f"bad PGM magic {tokens[0]!r}; only binary P5 is supported", path=path, offset=0)
    w = _parse_int(tokens[1], path, "width")
    h = _parse_int(tokens[2], path, "height")
    maxval = _parse_int(tokens[3], path, "maxval")
    if maxval != 255:
        raise FormatError(f"PGM maxval must be 255, got {maxval}", path=path)
    expected = offset + w * h
    if len(raw) < expected:
        raise FormatError(f"truncated PGM data, expected {expected} bytes", path=path, offset=len(raw))
    if len(raw) > expected:
        raise FormatError("trailing bytes after PGM data", path=path, offset=expected)
    return np.frombuffer(raw, dtype=np.uint8, offset=offset).reshape(h, w).copy()


def write_mask(path, segs: SegmentationSet):
    if segs.n_segments > 255:
        raise ValueError("at most 255 segments fit in a byte mask")
    write_pgm(path, segs.ids)


def read_mask(path) -> SegmentationSet:
    ids = read_pgm(path)
    try:
        return SegmentationSet(ids)
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from exc


# -- detections ---------------------------------------------------------------

def write_detections(path, detections):
    payload = [
        {"class": d.class_name, "bbox": [float(x) for x in d.bbox], "confidence": float(d.confidence)}
        for d in detections
    ]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_detections(path) -> list[Detection]:
    try:
        payload = json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid detections JSON: {exc}", path=path) from exc
    if not isinstance(payload, list):
        raise FormatError("detections must be a JSON array", path=path)
    out = []
    for i, item in enumerate(payload):
        try:
            if set(item) - {"class", "bbox", "confidence"}:
                raise ValueError(f"unknown keys {sorted(set(item) - {'class', 'bbox', 'confidence'})}")
            bbox = tuple(float(x) for x in item["bbox"])
            if len(bbox) != 4:
                raise ValueError("bbox needs 4 numbers")
            det = Detection(str(item["class"]), bbox, float(item.get("confidence", 1.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"detection {i} malformed: {exc}", path=path) from exc
        if not det.is_valid:
            raise FormatError(f"detection {i} has an empty box or confidence outside [0, 1]", path=path)
        out.append(det)
    return out


# -- feature matches ----------------------------------------------------------

def write_matches(path, matches: FeatureMatches):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MATCH_HEADER)
        for i in range(len(matches)):
            writer.writerow([
                int(matches.ids[i]),
                repr(float(matches.p_prev[i, 0])), repr(float(matches.p_prev[i, 1])),
                repr(float(matches.p_cur[i, 0])), repr(float(matches.p_cur[i, 1])),
                repr(float(matches.d_prev[i])), repr(float(matches.d_cur[i])),
                int(matches.segment_ids[i]),
            ])


def read_matches(path) -> FeatureMatches:
    text = _read_bytes(path).decode("utf-8", errors="replace")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != MATCH_HEADER:
        raise FormatError(f"matches CSV must start with header {','.join(MATCH_HEADER)}", path=path, offset=0)
    ids, vals, segs = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(MATCH_HEADER):
            raise FormatError(f"line {lineno}: expected {len(MATCH_HEADER)} fields, got {len(row)}", path=path)
        try:
            ids.append(int(row[0]))
            vals.append([float(x) for x in row[1:7]])
            segs.append(int(row[7]))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}", path=path) from exc
    v = np.array(vals, dtype=float).reshape(-1, 6)
    if not np.isfinite(v).all():
        raise FormatError("non-finite value in matches", path=path)
    if np.any(v[:, 4:6] <= 0):
        raise FormatError("match depths must be positive", path=path)
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate feature ids", path=path)
    return FeatureMatches(np.array(ids), v[:, 0:2], v[:, 2:4], v[:, 4], v[:, 5], np.array(segs))


# -- TUM trajectories ---------------------------------------------------------

def write_tum_rows(path, rows):
    rows = np.asarray(rows, dtype=float).reshape(-1, 8)
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for r in rows:
            fh.write(" ".join(repr(float(x)) for x in r) + "\n")


def read_tum_rows(path) -> np.ndarray:
    text = _read_bytes(path).decode("utf-8", errors="replace")
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 8:
            raise FormatError(f"line {lineno}: expected 8 values, got {len(parts)}", path=path)
        try:
            rows.append([float(x) for x in parts])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}", path=path) from exc
    return np.array(rows, dtype=float).reshape(-1, 8)


def trajectory_rows(traj: Trajectory) -> np.ndarray:
    return np.array([
        [t, *p.translation, *p.quaternion()] for t, p in zip(traj.timestamps, traj.poses)
    ]).reshape(-1, 8)


def write_trajectory(path, traj: Trajectory):
    write_tum_rows(path, trajectory_rows(traj))


def read_trajectory(path) -> Trajectory:
    rows = read_tum_rows(path)
    poses = []
    for i, r in enumerate(rows):
        q = r[4:8]
        if not np.isclose(np.linalg.norm(q), 1.0, atol=1e-3):
            raise FormatError(f"pose {i}: quaternion is not unit length", path=path)
        poses.append(Pose.from_quaternion(q, r[1:4]))
    try:
        return Trajectory(rows[:, 0], poses)
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from exc
