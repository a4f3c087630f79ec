"""Exception hierarchy shared by every module."""


class DistBNError(Exception):
    """Base class for all package errors."""


class NetworkFormatError(DistBNError):
    """The network document could not be parsed."""


class StructureError(DistBNError):
    """The graph is malformed (cycle, bad parent reference, wrong shape)."""


class NetworkValidationError(DistBNError):
    """A CPT has the wrong arity or is not a probability distribution."""


class ConsistencyError(DistBNError):
    """Counter values contradict each other (joint count above parent count)."""


class CapacityError(DistBNError):
    """A configured size or enumeration cap was exceeded."""
