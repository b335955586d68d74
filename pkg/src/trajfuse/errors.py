"""Exception and warning types shared across the toolkit."""


class TrajfuseError(Exception):
    """Base class for all toolkit errors."""


class NonFiniteState(TrajfuseError):
    """A state vector picked up a NaN or Inf during propagation."""


class FormatError(TrajfuseError):
    """A trajectory or log file does not match the documented schema."""


class GridError(TrajfuseError):
    """Trajectory timestamps violate the uniform multi-rate grid."""


class SingularHessian(TrajfuseError):
    """The range-fit Hessian is numerically singular (tag at an anchor)."""


class DivergedResult(TrajfuseError):
    """Fixed-iteration range fit ended with a much worse residual than it started."""


class DegenerateGeometry(TrajfuseError):
    """Tag points are (near-)collinear; orientation is not recoverable."""


class EmptySeries(TrajfuseError):
    """A metric was requested over zero samples."""


class InvalidConfig(TrajfuseError):
    """An experiment or tuning configuration is inconsistent."""


class ReflectionCaseWarning(UserWarning):
    """Point-fit rotation required the determinant sign correction."""


class GimbalLockWarning(UserWarning):
    """Pitch within tolerance of +/-90 deg; roll/yaw split is conventional."""


class CoplanarAnchorsWarning(UserWarning):
    """Anchor set is coplanar; range fixes have a mirror ambiguity resolved
    only by the initial guess."""


class WeightCollapseWarning(UserWarning):
    """All particle likelihoods underflowed; weights were reset to uniform."""
