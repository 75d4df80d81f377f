"""Exception types shared across the mapping toolkit."""


class IpmmapError(Exception):
    """Base class for all toolkit errors."""


class BehindCamera(IpmmapError):
    """Point has depth at or below the minimum in front of the camera."""

    def __init__(self, depth: float):
        super().__init__(f"point behind camera (depth {depth:.3e} m)")
        self.depth = depth


class AtInfinity(IpmmapError):
    """Pixel maps to the line at infinity of the ground plane."""


class InsufficientPairs(IpmmapError):
    """Fewer point pairs than the minimum required for estimation."""


class DegenerateConfiguration(IpmmapError):
    """Point configuration does not determine a unique homography."""


class DegenerateCamera(IpmmapError):
    """Camera geometry yields a singular pixel-to-ground mapping."""


class OutsideROI(IpmmapError):
    """A detection corner falls outside the usable image region."""

    def __init__(self, corner_index: int):
        super().__init__(f"corner {corner_index} outside region of interest")
        self.corner_index = corner_index


class AmbiguousAssociation(IpmmapError):
    """Two map candidates are too close to choose between."""

    def __init__(self, first_id: int, second_id: int, separation: float):
        super().__init__(
            f"markings {first_id} and {second_id} tie within "
            f"{separation:.3f} m of each other"
        )
        self.first_id = first_id
        self.second_id = second_id
        self.separation = separation


class MissingPose(IpmmapError):
    """A detection frame has no corresponding vehicle pose."""

    def __init__(self, frame: int):
        super().__init__(f"no pose for frame {frame}")
        self.frame = frame


class EmptyProblem(IpmmapError):
    """Optimization requested on a map with no usable observations."""


class MissingPrior(IpmmapError):
    """A camera with observations has no translation prior."""

    def __init__(self, camera_id: str):
        super().__init__(f"camera '{camera_id}' has observations but no prior")
        self.camera_id = camera_id


class NumericalFailure(IpmmapError):
    """Non-finite cost or Jacobian encountered during optimization."""

    def __init__(self, message: str, residual_index=None):
        super().__init__(message)
        self.residual_index = residual_index


class NoProgress(IpmmapError):
    """Levenberg-Marquardt damping exceeded its ceiling without a step."""


class InvalidSpec(IpmmapError):
    """A scene or run configuration field is out of range or malformed."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


class ZeroArea(IpmmapError):
    """Neither polygon occupies any raster cell."""


class FormatError(IpmmapError):
    """A data file does not match its documented line format."""

    def __init__(self, path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number
