"""Shared exception types."""


class BudgetExceeded(RuntimeError):
    """A search or enumeration hit its node/time budget before finishing."""


class GenerationCheckFailed(RuntimeError):
    """The generating-set certificate could not be established."""


class SaturationError(RuntimeError):
    """An exchange lookup failed, i.e. the generating set is not saturated."""
