"""Exception hierarchy shared across the pipeline.

Every module raises subclasses of :class:`DroneBevError` so the command line
front end can map failures onto distinct exit codes.
"""


class DroneBevError(Exception):
    """Base class for all package errors."""


# geometry
class BehindCamera(DroneBevError):
    """Point projects with non-positive depth."""


class DegenerateView(DroneBevError):
    """Ground homography is singular for this camera."""


class AtInfinity(DroneBevError):
    """Back-projected pixel lands on the horizon line."""


class OutOfBounds(DroneBevError):
    """Ground point lies outside the BEV grid footprint."""


# calib
class Degenerate(DroneBevError):
    """Too few or ill-conditioned correspondences for a pose solve."""


class NoConvergence(DroneBevError):
    """Pose refinement hit its iteration cap with a large residual."""


class ColdStartFailure(DroneBevError):
    """First frame could not be calibrated for at least one drone."""


# register
class InsufficientMatches(DroneBevError):
    """Fewer than four descriptor matches."""


class DegenerateConsensus(DroneBevError):
    """RANSAC could not find four consistent inliers."""


# fuse
class NoUsableViews(DroneBevError):
    """No camera survived dropout, calibration and registration."""


class GridMismatch(DroneBevError):
    """Occupancy maps live on different grids."""


# evalmetrics
class NoGroundTruth(DroneBevError):
    """Metric undefined because the sequence has no ground truth objects."""


# io / cli
class SchemaError(DroneBevError):
    """Dataset or config file does not match the expected layout."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class IoFailure(DroneBevError):
    """Destination could not be written or read."""
