"""Static/dynamic feature classification and camera tracking for RGB-D sequences.

Dynamic segments are found from movable-object detections and from
motion boundaries in the optical-flow gradient; the camera pose is then
estimated robustly from the remaining features and refined by a
scene-flow consistency check.
"""
from .errors import (
    AssociationError,
    ConfigError,
    DegenerateAlignment,
    DegenerateProjection,
    DynFeatError,
    FormatError,
    InsufficientLength,
    InvalidDepth,
    ShapeError,
    TrackingLost,
)
from .geometry import CameraIntrinsics, Pose

__version__ = "0.1.0"
