"""Exception types raised by the tracking stack."""


class BitvoError(Exception):
    """Base class for all bitvo-specific errors."""


class InvalidDepthError(BitvoError, ValueError):
    """A depth value is non-positive or not finite where a valid one is required."""


class AmbiguousRotationError(BitvoError, ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class DegenerateSystemError(BitvoError):
    """The weighted normal equations are singular or under-determined."""


class EmptySelectionError(BitvoError):
    """Pixel selection produced no usable points."""


class DegradedKeyframeError(BitvoError):
    """Too few usable pixels to build a keyframe."""


class MissingDepthError(BitvoError):
    """Depth data is required (first frame / keyframe creation) but absent."""
