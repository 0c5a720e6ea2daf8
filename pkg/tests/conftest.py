import numpy as np
import pytest

from dynfeat.geometry import CameraIntrinsics
from dynfeat.simulator import build_scene

SMALL_INTRINSICS = dict(fx=130.0, fy=130.0, cx=79.5, cy=59.5, width=160, height=120)


def small_scene(**overrides):
    """A 160x120 scene; keyword overrides replace top-level config keys."""
    config = dict(
        intrinsics=SMALL_INTRINSICS,
        n_frames=6,
        seed=0,
        landmarks=dict(count=300),
        camera=dict(velocity=(0.01, 0.0, 0.0), rot_amplitude=(0.0, 0.005, 0.0), period=10),
    )
    config.update(overrides)
    return build_scene(config)


def box_mover(start, velocity=(0.05, 0.0, 0.0), size=(0.6, 0.6, 0.3), **extra):
    traj = dict(start=start, velocity=velocity)
    return dict(size=size, grid_step=0.06, trajectory=traj, **extra)


@pytest.fixture
def small_K():
    return CameraIntrinsics(**SMALL_INTRINSICS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
