"""Exception types shared across the package.

Every error raised by lotfusion derives from :class:`LotfusionError` so
callers can catch the whole family with one clause.
"""


class LotfusionError(Exception):
    """Base class for all lotfusion errors."""


# --- geometry ---------------------------------------------------------------

class PointAtInfinity(LotfusionError):
    """A projected point has a homogeneous coordinate too close to zero."""


class SingularMatrix(LotfusionError):
    """A matrix required to be invertible is (numerically) singular."""


class DegenerateProjection(LotfusionError):
    """A projected polygon collapsed to (numerically) zero area."""


class DegenerateConfiguration(LotfusionError):
    """Point correspondences do not determine a unique homography."""


class InsufficientConsensus(LotfusionError):
    """RANSAC could not find a model with enough inliers."""


# --- registration -----------------------------------------------------------

class DimensionMismatch(LotfusionError):
    """Descriptor vectors of differing dimension were mixed."""


class TooFewFeatures(LotfusionError):
    """A feature set is too small for the requested operation."""


class RegistrationFailed(LotfusionError):
    """The full matching pipeline failed for a camera pair.

    Signals that the pair must be registered manually (an externally
    supplied homography) or excluded from overlap accounting.
    """


# --- protocol ---------------------------------------------------------------

class NotInitialized(LotfusionError):
    """A node was asked to count before completing initialization."""


class MissingOrientation(LotfusionError):
    """Neither orientation of a pair's overlap count was reported."""


class IncompleteRound(LotfusionError):
    """A round is missing expected reports and cannot be finalized."""


# --- transport --------------------------------------------------------------

class UnknownAddress(LotfusionError):
    """Send target is not registered with the transport."""


class ChannelClosed(LotfusionError):
    """The channel refused the message (closed endpoint or oversized frame)."""


class ReceiveTimeout(LotfusionError):
    """No message arrived within the receive budget.

    This is a signal, not a failure: round orchestration catches it to
    flag partial rounds.
    """


class SchemaMismatch(LotfusionError):
    """Serialized data carries an unsupported version or malformed shape."""


# --- scenario / eval --------------------------------------------------------

class InfeasibleConfig(LotfusionError):
    """A world or run configuration cannot produce a valid scenario."""


class EmptyInput(LotfusionError):
    """A metric was asked to summarize an empty result set."""
