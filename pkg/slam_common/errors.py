""" Exceptions raised by the filter. Every failure mode of the library has its
    own class so that callers can react to, e.g., a lost track without
    parsing messages.
"""


class SlamError(Exception):
    """ Base class of all the errors raised by slam_common """


class NonPositiveDepth(SlamError, ValueError):
    """ A point at or behind the camera plane was projected/unprojected """


class NearPiRotation(SlamError, ValueError):
    """ Rotation logarithm requested too close to the cut locus (angle ~ pi) """


class DimensionMismatch(SlamError, ValueError):
    """ Operands of a Gaussian operation are not conformable """


class SingularHeadBlock(SlamError, ValueError):
    """ The conditioning block of a joint Gaussian is not invertible """


class NotPositiveDefinite(SlamError, ValueError):
    """ Cholesky failed even after jitter escalation """


class OutOfBounds(SlamError, ValueError):
    """ A grid query fell outside the interior sampling domain """


class EmptyUpdate(SlamError):
    """ A depth frame selected no voxel (frustum and grid are disjoint) """


class IndexOutOfRange(SlamError, IndexError):
    """ A voxel, slice or channel index is outside the grid """


class ShapeMismatch(SlamError, ValueError):
    """ Two frames that must be compared have different shapes """


class NoValidPixels(SlamError):
    """ No sampled pixel survived projection and outlier rejection """


class TrackingLost(SlamError):
    """ The optimised pose does not explain the observation """


class InvalidConfig(SlamError, ValueError):
    """ A configuration value is missing or violates its invariant """


class DegenerateTrajectory(SlamError, ValueError):
    """ Consecutive trajectory samples coincide in time """


class MissingIndexFile(SlamError, FileNotFoundError):
    """ A dataset folder lacks one of its index files """


class NoAssociations(SlamError):
    """ No pair of timestamps could be associated """


class TooFewSamples(SlamError, ValueError):
    """ Not enough samples for a statistic """


class SnapshotFormatError(SlamError, ValueError):
    """ A map snapshot file is truncated or has a wrong header """
