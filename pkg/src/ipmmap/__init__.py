"""Offline marking-level HD map construction with IPM self-calibration."""

from .errors import (
    AmbiguousAssociation,
    AtInfinity,
    BehindCamera,
    DegenerateCamera,
    DegenerateConfiguration,
    EmptyProblem,
    FormatError,
    InsufficientPairs,
    InvalidSpec,
    IpmmapError,
    MissingPose,
    MissingPrior,
    NoProgress,
    NumericalFailure,
    OutsideROI,
    ZeroArea,
)
from .geometry import (
    CameraModel,
    GroundPoint,
    Intrinsics,
    MapPoint,
    PixelPoint,
    RigidTransform,
    project,
    project_jacobian,
)
from .ipm import (
    Homography,
    PointPair,
    RegionOfInterest,
    apply_ipm,
    estimate_homography_dlt,
    homography_from_camera,
    roi_contains,
)

__version__ = "0.1.0"
