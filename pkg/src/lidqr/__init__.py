"""Bayesian multi-quantile regression with an interpolated-density likelihood."""

from .core import (
    CoefficientMatrix,
    Dataset,
    PriorSpec,
    QuantileGrid,
    check_loss,
    make_grid,
    validate_noncrossing,
)
from .errors import ContractError, DataError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "CoefficientMatrix",
    "Dataset",
    "PriorSpec",
    "QuantileGrid",
    "check_loss",
    "make_grid",
    "validate_noncrossing",
    "ContractError",
    "DataError",
    "NumericalError",
    "__version__",
]
