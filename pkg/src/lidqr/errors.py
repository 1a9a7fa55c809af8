"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument or state violates a documented precondition."""


class DataError(ValueError):
    """User-supplied data is malformed (bad CSV, non-numeric cells, ...)."""


class NumericalError(RuntimeError):
    """A numerical routine failed (LP solver, resampling cap exceeded, ...)."""
