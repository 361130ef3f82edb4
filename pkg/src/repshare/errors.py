"""Exception hierarchy shared by all repshare modules."""


class RepshareError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(RepshareError):
    """Malformed or out-of-contract tensor file (bad magic, header, or payload)."""


class UnsupportedDtype(FormatError):
    """Tensor file declares a dtype other than little-endian float32."""


class UnsupportedLayout(FormatError):
    """Tensor file declares Fortran (column-major) layout."""


class IoError(RepshareError):
    """Underlying I/O failure (missing file, unwritable path, short read)."""


class ShapeError(RepshareError):
    """Operands have incompatible shapes or example counts."""


class DegenerateInput(RepshareError):
    """Too few examples for a Gram matrix (n < 2)."""


class UndefinedSimilarity(RepshareError):
    """Centered Gram matrix is entirely zero (zero-variance representation)."""


class GraphError(RepshareError):
    """Structurally or shape-wise invalid model graph; message names the stage."""


class CutViolation(RepshareError):
    """A stage after the cut tried to read a placeholder slot."""


class UndefinedCorrelation(RepshareError):
    """Pearson r undefined: fewer than two points or zero variance."""


class FitError(RepshareError):
    """No threshold candidate leaves enough points to fit the line."""


class PlanError(RepshareError):
    """Plan enumeration is missing a required similarity entry or dump."""
