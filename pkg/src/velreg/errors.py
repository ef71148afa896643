"""Exception hierarchy. CLI maps these onto exit codes (2 = validation/IO, 1 = solver)."""


class VelregError(Exception):
    """Base class for all package errors."""


class GridError(VelregError):
    """Invalid grid definition or a field/grid mismatch."""


class ResampleError(VelregError):
    """Restriction factor does not divide the dims, or prolongation target too small."""


class VolumeIOError(VelregError):
    """Unreadable, malformed, or unsupported volume file."""


class TransportError(VelregError):
    """Non-finite input or output in a transport solve."""


class ObjectiveError(VelregError):
    """Objective or gradient evaluation produced a non-finite result."""


class SearchError(VelregError):
    """Regularization parameter search cannot satisfy the Jacobian bound."""
