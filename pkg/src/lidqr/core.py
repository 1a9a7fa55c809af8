"""Core model types for multi-quantile linear regression.

Holds the quantile-level grid, the per-level coefficient matrix, the
regression dataset, the truncated-normal prior, and the small pure
functions the rest of the package builds on: the check loss, grid
construction by dyadic refinement, and the strict non-crossing predicate.

All types are immutable after construction (arrays are marked read-only),
so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

__all__ = [
    "QuantileGrid",
    "Dataset",
    "CoefficientMatrix",
    "PriorSpec",
    "check_loss",
    "make_grid",
    "validate_noncrossing",
    "default_names",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def check_loss(u, tau):
    """Asymmetric absolute loss: u*tau for u >= 0, u*(tau-1) for u < 0.

    Accepts scalars or arrays for ``u``. The result is nonnegative and
    zero exactly at u = 0.
    """
    tau = float(tau)
    if not (0.0 < tau < 1.0):
        raise ContractError(f"tau must be in (0,1), got {tau}")
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ContractError("check_loss requires finite residuals")
    out = np.where(u >= 0, u * tau, u * (tau - 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile levels in the open interval (0,1)."""

    levels: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if levels.ndim != 1 or levels.size < 1:
            raise ContractError("grid needs at least one level")
        if not np.all(np.isfinite(levels)):
            raise ContractError("grid levels must be finite")
        if levels[0] <= 0.0 or levels[-1] >= 1.0:
            raise ContractError("grid levels must lie strictly inside (0,1)")
        if np.any(np.diff(levels) <= 0):
            raise ContractError("grid levels must be strictly increasing")
        object.__setattr__(self, "levels", _readonly(levels))

    @property
    def m(self) -> int:
        return self.levels.size

    @property
    def max_gap(self) -> float:
        """Largest spacing, counting the boundary gaps to 0 and 1."""
        padded = np.concatenate([[0.0], self.levels, [1.0]])
        return float(np.max(np.diff(padded)))

    def index_of(self, tau: float, atol: float = 1e-9) -> int:
        """Index of the grid level equal to ``tau`` (within ``atol``)."""
        hits = np.flatnonzero(np.isclose(self.levels, tau, rtol=0.0, atol=atol))
        if hits.size == 0:
            raise ContractError(f"tau={tau} is not a member of the quantile grid")
        return int(hits[0])

    def contains(self, tau: float, atol: float = 1e-9) -> bool:
        return bool(np.any(np.isclose(self.levels, tau, rtol=0.0, atol=atol)))


def make_grid(m0: int, refinements: int = 0) -> QuantileGrid:
    """Equally spaced levels k/(m0+1), dyadically refined.

    With ``refinements = 0`` the grid is {1/(m0+1), ..., m0/(m0+1)}. Each
    refinement inserts the midpoint of every current gap, including the
    boundary gaps down to 0 and up to 1 (the endpoints themselves are never
    levels). A grid built this way always has max gap <= 2/m.
    """
    if not isinstance(m0, (int, np.integer)) or m0 < 1:
        raise ContractError("m0 must be a positive integer")
    if not isinstance(refinements, (int, np.integer)) or refinements < 0:
        raise ContractError("refinements must be a nonnegative integer")
    levels = np.arange(1, m0 + 1, dtype=float) / (m0 + 1)
    for _ in range(refinements):
        padded = np.concatenate([[0.0], levels, [1.0]])
        mids = 0.5 * (padded[:-1] + padded[1:])
        levels = np.sort(np.concatenate([levels, mids]))
    return QuantileGrid(levels)


def default_names(p: int) -> tuple[str, ...]:
    """Coefficient names when the data carries none: intercept, x1, x2, ..."""
    return ("intercept",) + tuple(f"x{i}" for i in range(1, p))


@dataclass(frozen=True)
class Dataset:
    """Design matrix with a leading all-ones intercept column, plus response.

    ``names`` labels the p columns of X; the first is always "intercept".
    """

    X: np.ndarray
    Y: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 1:
            raise ContractError("X must be 2-D and Y 1-D")
        n, p = X.shape
        if n < 1 or p < 1 or Y.shape[0] != n:
            raise ContractError(f"incompatible shapes X={X.shape}, Y={Y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ContractError("dataset contains non-finite entries")
        if not np.all(X[:, 0] == 1.0):
            raise ContractError("first column of X must be identically 1 (intercept)")
        names = tuple(self.names) if self.names else default_names(p)
        if len(names) != p:
            raise ContractError(f"expected {p} column names, got {len(names)}")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "Y", _readonly(Y))
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.names)


@dataclass(frozen=True)
class CoefficientMatrix:
    """One coefficient row per quantile level: row j is the plane at level j."""

    B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2:
            raise ContractError("coefficient matrix must be 2-D (levels x predictors)")
        if not np.all(np.isfinite(B)):
            raise ContractError("coefficient matrix contains non-finite entries")
        object.__setattr__(self, "B", _readonly(B))

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def predicted_quantiles(self, data: Dataset) -> np.ndarray:
        """n x m matrix of fitted quantile values x_i' beta(tau_j)."""
        if data.p != self.p:
            raise ContractError(f"predictor count mismatch: data p={data.p}, B p={self.p}")
        return data.X @ self.B.T


def validate_noncrossing(B: CoefficientMatrix, data: Dataset) -> bool:
    """True iff the fitted quantile planes strictly increase across levels
    at every observed design row. Pure predicate; exact comparisons, no
    tolerance."""
    Q = B.predicted_quantiles(data)
    if B.m == 1:
        return True
    return bool(np.all(np.diff(Q, axis=1) > 0.0))


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Independent normal marginals over the m*p coefficients, truncated to
    the non-crossing region.

    ``mean`` and ``sd`` are flat vectors in row-major (level-major) order.
    Densities are evaluated without the truncation normalizer, which is a
    constant over the feasible region and cancels in every ratio we form.
    """

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if mean.shape != sd.shape or mean.ndim != 1:
            raise ContractError("prior mean and sd must be equal-length vectors")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(sd))):
            raise ContractError("prior parameters must be finite")
        if np.any(sd <= 0):
            raise ContractError("prior sd entries must be positive")
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "sd", _readonly(sd))

    @classmethod
    def normal(cls, m: int, p: int, mean: float = 0.0, sd: float = 10.0) -> "PriorSpec":
        """Identical N(mean, sd^2) marginals for all m*p coefficients."""
        size = m * p
        return cls(np.full(size, float(mean)), np.full(size, float(sd)))

    def matrices(self, m: int, p: int) -> tuple[np.ndarray, np.ndarray]:
        if self.mean.size != m * p:
            raise ContractError(f"prior length {self.mean.size} != m*p = {m * p}")
        return self.mean.reshape(m, p), self.sd.reshape(m, p)

    def log_density(self, B: CoefficientMatrix, data: Dataset) -> float:
        """Unnormalized log prior; -inf when B violates non-crossing."""
        mu, sd = self.matrices(B.m, B.p)
        if not validate_noncrossing(B, data):
            return -np.inf
        z = (B.B - mu) / sd
        return float(np.sum(-0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI))
