from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynfeat.errors import ShapeError
from dynfeat.flow import (
    BoundaryParams,
    boundary_magnitude,
    boundary_orientation,
    combine_and_binarize,
    extract_motion_regions,
    flow_gradient,
    motion_boundaries,
    wrap_angle_difference,
)

from conftest import box_mover, small_scene

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)


def hand_sobel(channel):
    """Direct 3x3 correlation with replicate padding, one pixel at a time."""
    h, w = channel.shape
    padded = np.pad(channel, 1, mode="edge")
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            win = padded[r:r + 3, c:c + 3]
            gx[r, c] = (win * SOBEL_X).sum()
            gy[r, c] = (win * SOBEL_X.T).sum()
    return gx, gy


def bfs_exterior(binary):
    """False pixels reachable from the border through 4-connected false pixels."""
    h, w = binary.shape
    seen = np.zeros_like(binary, dtype=bool)
    queue = deque((r, c) for r in range(h) for c in range(w)
                  if (r in (0, h - 1) or c in (0, w - 1)) and not binary[r, c])
    for r, c in queue:
        seen[r, c] = True
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and not binary[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                queue.append((rr, cc))
    return seen


class TestFlowGradient:
    def test_constant_field(self):
        flow = np.broadcast_to([1.5, -0.7], (12, 9, 2))
        gradmag, orientation = flow_gradient(flow)
        assert np.all(gradmag == 0)
        np.testing.assert_allclose(orientation, np.arctan2(-0.7, 1.5))

    def test_vertical_step(self):
        flow = np.zeros((7, 10, 2))
        flow[:, 5:, 0] = 2.0
        gx, gy = hand_sobel(flow[..., 0])
        oracle = np.hypot(gx, gy)
        assert oracle.max() == 8.0
        gradmag, _ = flow_gradient(flow)
        np.testing.assert_allclose(gradmag, oracle, atol=1e-12)
        assert gradmag[:, 4].max() == pytest.approx(8.0)
        assert gradmag[:, 5].max() == pytest.approx(8.0)

    def test_impulse_symmetric(self):
        flow = np.zeros((9, 9, 2))
        flow[4, 4, 1] = 1.0
        gx, gy = hand_sobel(flow[..., 1])
        gradmag, _ = flow_gradient(flow)
        np.testing.assert_allclose(gradmag, np.hypot(gx, gy), atol=1e-12)
        patch = gradmag[3:6, 3:6]
        np.testing.assert_allclose(patch, patch[::-1, :])
        np.testing.assert_allclose(patch, patch[:, ::-1])
        np.testing.assert_allclose(patch, patch.T)
        assert gradmag.sum() == pytest.approx(patch.sum())

    def test_random_field_against_oracle(self, rng):
        flow = rng.normal(size=(6, 8, 2))
        expected = np.zeros((6, 8))
        for c in range(2):
            gx, gy = hand_sobel(flow[..., c])
            expected += gx**2 + gy**2
        np.testing.assert_allclose(flow_gradient(flow)[0], np.sqrt(expected), atol=1e-12)

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            flow_gradient(np.zeros((4, 4, 3)))


class TestBoundaryMagnitude:
    def test_values(self):
        assert boundary_magnitude(0.0, 0.5) == 0.0
        assert boundary_magnitude(2.0, 0.5) == pytest.approx(1 - np.exp(-1), abs=1e-12)
        assert boundary_magnitude(2.0, 0.5) == pytest.approx(0.632121, abs=1e-6)
        assert boundary_magnitude(1e6, 0.5) == 1.0

    @given(a=st.floats(0, 50), b=st.floats(0, 50), k=st.floats(0.01, 5))
    def test_monotone(self, a, b, k):
        lo, hi = sorted((a, b))
        assert boundary_magnitude(lo, k) <= boundary_magnitude(hi, k)


class TestBoundaryOrientation:
    def test_uniform(self):
        assert np.all(boundary_orientation(np.full((5, 5), 0.4), 2.0) == 0)

    def test_opposite_directions(self):
        theta = np.zeros((3, 4))
        theta[:, 2:] = np.pi
        m_o = boundary_orientation(theta, 2.0)
        assert m_o[1, 1] == pytest.approx(1 - np.exp(-2.0 * np.pi))
        assert m_o[1, 2] == pytest.approx(1 - np.exp(-2.0 * np.pi))
        assert m_o[1, 0] == 0.0

    def test_wrap(self):
        # brute force: shift the difference into (-pi, pi] by whole turns
        raw = 3.1 - (-3.1)
        while raw > np.pi:
            raw -= 2 * np.pi
        assert wrap_angle_difference(3.1, -3.1) == pytest.approx(abs(raw), abs=1e-12)
        assert wrap_angle_difference(3.1, -3.1) == pytest.approx(0.0832, abs=1e-4)

    @given(a=st.floats(-np.pi, np.pi), b=st.floats(-np.pi, np.pi))
    def test_wrap_brute_force(self, a, b):
        brute = min(abs(a - b + 2 * np.pi * n) for n in (-2, -1, 0, 1, 2))
        assert wrap_angle_difference(a, b) == pytest.approx(brute, abs=1e-12)

    def test_invalid_pixels_contribute_nothing(self):
        theta = np.zeros((3, 3))
        theta[1, 1] = np.pi
        valid = np.ones((3, 3), dtype=bool)
        valid[1, 1] = False
        assert np.all(boundary_orientation(theta, 2.0, valid=valid) == 0)


class TestCombine:
    params = BoundaryParams()

    def test_gate_branch(self):
        out = combine_and_binarize(np.array([[0.9]]), np.array([[0.1]]), self.params)
        assert out.values[0, 0] == 0.9 and out.binary[0, 0]

    def test_product_branch(self):
        out = combine_and_binarize(np.array([[0.5]]), np.array([[0.4]]), self.params)
        assert out.values[0, 0] == pytest.approx(0.2) and not out.binary[0, 0]

    def test_gate_is_strict(self):
        out = combine_and_binarize(np.array([[0.8]]), np.array([[0.5]]), self.params)
        assert out.values[0, 0] == pytest.approx(0.4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            combine_and_binarize(np.zeros((2, 2)), np.zeros((2, 3)), self.params)

    @given(
        arrays(float, (4, 4), elements=st.floats(0, 0.999)),
        arrays(float, (4, 4), elements=st.floats(0, 0.999)),
    )
    def test_bounds(self, m_i, m_o):
        out = combine_and_binarize(m_i, m_o, self.params).values
        gated = m_i > self.params.gate
        assert np.all(out[gated] == m_i[gated])
        assert np.all(out[~gated] <= np.minimum(m_i, m_o)[~gated] + 1e-15)
        assert np.all((out >= 0) & (out <= 1))

    def test_defaults(self):
        p = BoundaryParams()
        assert (p.k_magnitude, p.k_orientation, p.gate, p.binarize_threshold, p.radius) == (0.5, 2.0, 0.8, 0.5, 1)
        with pytest.raises(ValueError):
            BoundaryParams(gate=1.0)


class TestRegions:
    def test_empty(self):
        assert extract_motion_regions(np.zeros((30, 30), dtype=bool)) == []

    def test_solid_block(self):
        b = np.zeros((30, 30), dtype=bool)
        b[5:15, 8:18] = True
        (region,) = extract_motion_regions(b)
        assert region.area == 100
        assert region.bbox == (8, 5, 18, 15)

    def test_ring_fills_interior(self):
        b = np.zeros((40, 40), dtype=bool)
        b[10:30, 10:30] = True
        b[11:29, 11:29] = False
        ring = int(b.sum())
        hole = int((~bfs_exterior(b) & ~b).sum())
        assert (ring, hole) == (76, 324)
        (region,) = extract_motion_regions(b)
        assert region.area == ring + hole == 400

    def test_min_area_and_order(self):
        b = np.zeros((50, 50), dtype=bool)
        b[0:5, 0:5] = True      # 25 px, dropped
        b[10:20, 10:20] = True  # 100
        b[30:42, 30:42] = True  # 144
        regions = extract_motion_regions(b, min_region_area=64)
        assert [r.area for r in regions] == [144, 100]
        assert [r.area for r in extract_motion_regions(b, min_region_area=1)] == [144, 100, 25]

    def test_diagonal_pixels_connect(self):
        b = np.zeros((20, 20), dtype=bool)
        idx = np.arange(12)
        b[idx, idx] = True
        assert [r.area for r in extract_motion_regions(b, min_region_area=1)] == [12]

    @settings(max_examples=40, deadline=None)
    @given(arrays(bool, (16, 16)))
    def test_idempotent_and_scan_order_free(self, b):
        regions = extract_motion_regions(b, min_region_area=1)
        union = np.zeros_like(b)
        for r in regions:
            union |= r.mask(b.shape)
        again = extract_motion_regions(union, min_region_area=1)
        assert sorted(r.area for r in again) == sorted(r.area for r in regions)
        # fill oracle: region pixels = boundary pixels plus enclosed pixels
        np.testing.assert_array_equal(union, b | (~bfs_exterior(b) & ~b))
        # transposing the scan order gives the same pixel sets
        flipped = extract_motion_regions(b.T, min_region_area=1)
        key = lambda regs, tr: sorted(tuple(sorted(zip(*((r.cols, r.rows) if tr else (r.rows, r.cols))))) for r in regs)
        assert key(regions, False) == key(flipped, True)


def test_mover_silhouette_has_strong_gradient():
    # mover at background depth, camera rotating under 1 deg/frame
    scene = small_scene(
        n_frames=3,
        camera=dict(angular_velocity=(0.0, 0.01, 0.005)),
        landmarks=dict(count=400),
        movers=[box_mover((0.0, 0.0, 4.5), velocity=(0.06, 0.02, 0.0))],
    )
    from dynfeat.simulator import dense_flow, render_view

    view = render_view(scene, 2)
    flow, _ = dense_flow(scene, view)
    gradmag, _ = flow_gradient(flow)
    mover = view.mover_index >= 0
    padded = np.pad(mover, 1, mode="edge")
    outside_nb = np.zeros_like(mover)
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        outside_nb |= ~padded[1 + dr:1 + dr + mover.shape[0], 1 + dc:1 + dc + mover.shape[1]]
    silhouette = mover & outside_nb
    assert silhouette.sum() > 20
    background = np.median(gradmag[~mover])
    assert np.min(gradmag[silhouette]) >= 5 * background


def test_motion_boundaries_finds_mover():
    scene = small_scene(n_frames=3, movers=[box_mover((0.0, 0.0, 2.5), velocity=(0.1, 0.0, 0.0))])
    from dynfeat.simulator import render_frame_truth

    truth = render_frame_truth(scene, 2)
    bmap = motion_boundaries(truth.flow)
    assert np.all((bmap.values >= 0) & (bmap.values <= 1))
    regions = extract_motion_regions(bmap)
    assert regions
    overlap = (regions[0].mask(bmap.shape) & (truth.mover_index == 0)).sum()
    assert overlap >= 0.5 * (truth.mover_index == 0).sum()
