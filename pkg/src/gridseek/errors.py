"""Exception hierarchy shared by all gridseek modules."""


class GridseekError(Exception):
    """Base class for all library errors."""


class InvalidBudgetError(GridseekError):
    """Budget outside [1, N] or otherwise unusable."""


class InvalidCellError(GridseekError):
    """Cell index outside the grid."""


class RequeriedCellError(GridseekError):
    """Attempt to query a cell that already has an outcome."""


class BudgetExhaustedError(GridseekError):
    """Attempt to step with no remaining budget."""


class NoActionError(GridseekError):
    """No unqueried cell is left to act on."""


class InconsistentCountError(GridseekError):
    """Aggregate counts that contradict each other (e.g. more hits than targets)."""


class GenerationConfigError(GridseekError):
    """Synthetic-task configuration that cannot be realized."""


class FormatError(GridseekError):
    """On-disk payload that does not conform to the VASF/VASP formats."""

    def __init__(self, message, path=None, offset=None):
        detail = message
        if path is not None:
            detail += f" (file: {path}"
            if offset is not None:
                detail += f", byte offset {offset}"
            detail += ")"
        super().__init__(detail)
        self.path = path
        self.offset = offset


class ShapeError(GridseekError):
    """Array shapes inconsistent with the network/layer configuration."""


class NumericError(GridseekError):
    """Non-finite values encountered during optimization."""


class ContractViolation(GridseekError):
    """Caller broke a documented precondition (e.g. trace/policy mismatch)."""


class ConfigurationError(GridseekError):
    """Invalid experiment or CLI configuration."""
