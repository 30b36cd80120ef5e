"""Exception hierarchy shared by all genkv modules."""


class GenKVError(Exception):
    """Base class for every error raised by genkv."""


class DimensionError(GenKVError, ValueError):
    """Array shapes or sizes are incompatible."""


class ValidationError(GenKVError, ValueError):
    """Input data violates a structural requirement."""


class ParameterError(GenKVError, ValueError):
    """A scalar parameter is out of its admissible range."""


class StateError(GenKVError, RuntimeError):
    """Operation not allowed in the object's current state."""


class CapacityError(GenKVError, ValueError):
    """The embedding bank is too small for the requested episode."""


class DegenerateSignalError(GenKVError, ValueError):
    """Reference signal has zero power, so an SNR cannot be calibrated."""


class ParseError(GenKVError, ValueError):
    """A file or config could not be parsed."""
