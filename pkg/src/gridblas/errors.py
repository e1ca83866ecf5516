"""Exception types shared across the package."""


class GridBlasError(Exception):
    """Base class for library errors."""


class DimError(GridBlasError, ValueError):
    """Operand dimensions do not conform."""


class ShapeError(GridBlasError, ValueError):
    """A process grid or layer count is infeasible."""


class FormatError(GridBlasError, ValueError):
    """Malformed input file."""


class IoError(GridBlasError, OSError):
    """A file could not be written or opened."""


class DeadlockError(GridBlasError, RuntimeError):
    """A collective did not complete: missing or mismatched participants."""


class ArityError(GridBlasError, ValueError):
    """Per-destination payload list does not match the group size."""


class BudgetError(GridBlasError, ValueError):
    """A memory budget cannot hold even a single output column."""


class StochasticityError(GridBlasError, ValueError):
    """Matrix columns do not sum to one."""


class IndexWidthError(GridBlasError, OverflowError):
    """A local dimension does not fit the local index type."""
