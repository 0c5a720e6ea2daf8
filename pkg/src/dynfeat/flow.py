"""Optical-flow gradients, motion-boundary maps and candidate moving regions.

A flow field is an ``(H, W, 2)`` float array holding ``(du, dv)`` per pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from .errors import ShapeError

# Below this magnitude a flow vector has no meaningful direction.
MIN_FLOW_MAGNITUDE = 1e-6

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class BoundaryParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    k_magnitude: float = Field(0.5, gt=0)
    k_orientation: float = Field(2.0, gt=0)
    gate: float = Field(0.8, gt=0, lt=1)
    binarize_threshold: float = Field(0.5, gt=0, lt=1)
    radius: int = Field(1, ge=1)


@dataclass
class BoundaryMap:
    values: np.ndarray
    binary: np.ndarray

    @property
    def shape(self):
        return self.values.shape


@dataclass
class MotionRegion:
    rows: np.ndarray
    cols: np.ndarray
    # (x_min, y_min, x_max, y_max), max exclusive
    bbox: tuple

    @property
    def area(self) -> int:
        return int(self.rows.size)

    def mask(self, shape) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.rows, self.cols] = True
        return m


def check_flow(flow) -> np.ndarray:
    flow = np.asarray(flow, dtype=float)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"flow must have shape (H, W, 2), got {flow.shape}")
    if not np.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")
    return flow


def flow_gradient(flow):
    """Sobel gradient magnitude and flow orientation per pixel.

    The magnitude combines x/y derivatives of both flow channels by
    Euclidean norm; borders use replicate padding. Returns
    ``(gradient_magnitude, orientation)`` with orientation in ``(-pi, pi]``.
    """
    flow = check_flow(flow)
    sq = np.zeros(flow.shape[:2])
    for c in range(2):
        channel = flow[..., c]
        gx = ndimage.sobel(channel, axis=1, mode="nearest")
        gy = ndimage.sobel(channel, axis=0, mode="nearest")
        sq += gx * gx + gy * gy
    orientation = np.arctan2(flow[..., 1], flow[..., 0])
    return np.sqrt(sq), orientation


def boundary_magnitude(gradmag, k_magnitude) -> np.ndarray:
    gradmag = np.asarray(gradmag, dtype=float)
    return -np.expm1(-k_magnitude * gradmag)


def wrap_angle_difference(a, b) -> np.ndarray:
    """Absolute angular difference folded into ``[0, pi]``."""
    d = np.mod(np.abs(np.asarray(a) - np.asarray(b)), 2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def boundary_orientation(orientation, k_orientation, radius=1, valid=None) -> np.ndarray:
    """Boundary score from the largest orientation jump within ``radius``.

    ``valid`` flags pixels whose flow direction is defined; comparisons
    involving an invalid pixel contribute zero.
    """
    theta = np.asarray(orientation, dtype=float)
    h, w = theta.shape
    if valid is None:
        valid = np.ones_like(theta, dtype=bool)
    tp = np.pad(theta, radius, mode="edge")
    vp = np.pad(valid, radius, mode="edge")
    worst = np.zeros_like(theta)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            nb = tp[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            nv = vp[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            diff = np.where(valid & nv, wrap_angle_difference(theta, nb), 0.0)
            np.maximum(worst, diff, out=worst)
    return -np.expm1(-k_orientation * worst)


def combine_and_binarize(m_magnitude, m_orientation, params: BoundaryParams) -> BoundaryMap:
    m_magnitude = np.asarray(m_magnitude, dtype=float)
    m_orientation = np.asarray(m_orientation, dtype=float)
    if m_magnitude.shape != m_orientation.shape:
        raise ShapeError(f"boundary maps differ in shape: {m_magnitude.shape} vs {m_orientation.shape}")
    values = np.where(m_magnitude > params.gate, m_magnitude, m_magnitude * m_orientation)
    return BoundaryMap(values=values, binary=values > params.binarize_threshold)


def fill_enclosed(binary) -> np.ndarray:
    """Add every false pixel that cannot reach the border through false pixels.

    The exterior flood runs 4-connected, the dual of 8-connected regions, so
    a diagonal gap in a boundary does not leak.
    """
    return ndimage.binary_fill_holes(np.asarray(binary, dtype=bool))


def extract_motion_regions(binary, min_region_area=64) -> list[MotionRegion]:
    """8-connected components of the filled boundary map, largest first."""
    if isinstance(binary, BoundaryMap):
        binary = binary.binary
    filled = fill_enclosed(binary)
    labels, n = ndimage.label(filled, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    regions = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        rr, cc = np.nonzero(labels[sl] == idx)
        if rr.size < min_region_area:
            continue
        rr = rr + sl[0].start
        cc = cc + sl[1].start
        bbox = (sl[1].start, sl[0].start, sl[1].stop, sl[0].stop)
        regions.append(MotionRegion(rows=rr, cols=cc, bbox=bbox))
    # stable sort keeps scan order among equal areas
    regions.sort(key=lambda r: -r.area)
    return regions


def motion_boundaries(flow, params: BoundaryParams | None = None) -> BoundaryMap:
    """Full chain from a flow field to a thresholded boundary map."""
    params = params or BoundaryParams()
    flow = check_flow(flow)
    gradmag, orientation = flow_gradient(flow)
    valid = np.hypot(flow[..., 0], flow[..., 1]) >= MIN_FLOW_MAGNITUDE
    m_i = boundary_magnitude(gradmag, params.k_magnitude)
    m_o = boundary_orientation(orientation, params.k_orientation, params.radius, valid)
    return combine_and_binarize(m_i, m_o, params)
