"""Interpolated-density likelihood for multi-quantile regression.

Given fitted quantile values q_1 < ... < q_m at a design point, the density
is piecewise constant between consecutive quantiles — mass (tau_{j+1}-tau_j)
spread uniformly over (q_j, q_{j+1}) — with half-normal tails of scale
``tail_sd`` carrying the remaining tau_1 and 1-tau_m of mass below q_1 and
above q_m. The construction integrates to 1 by telescoping, and evaluation
is done in log space so products over large samples never underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CoefficientMatrix, Dataset, QuantileGrid, validate_noncrossing
from .errors import ContractError

__all__ = ["LidModel", "lid_pdf", "lid_loglik", "interpolation_error_sup"]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG_2 = np.log(2.0)


@dataclass(frozen=True)
class LidModel:
    """Coefficient matrix + grid + tail scale, bundled for evaluation."""

    B: CoefficientMatrix
    grid: QuantileGrid
    tail_sd: float

    def __post_init__(self):
        if self.B.m != self.grid.m:
            raise ContractError(
                f"coefficient rows ({self.B.m}) != grid levels ({self.grid.m})"
            )
        if not (np.isfinite(self.tail_sd) and self.tail_sd > 0):
            raise ContractError("tail_sd must be a positive finite number")


def _log_half_normal(dev: np.ndarray, sd: float) -> np.ndarray:
    """log of (2/sd)*phi(dev/sd): a half-normal folded onto one side."""
    z = np.asarray(dev, dtype=float) / sd
    return _LOG_2 - np.log(sd) - 0.5 * z * z - _LOG_SQRT_2PI


def interval_membership(Q: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Count of fitted quantiles at or below each response.

    0 means the left tail (y < q_1), m the right tail (y >= q_m), and
    k in between means y lies in [q_k, q_{k+1}) (1-based). Points equal
    to a quantile value land in the interval to its right.
    """
    return np.sum(Q <= np.asarray(y, dtype=float)[:, None], axis=1)


def logpdf_rows(
    Q: np.ndarray, y: np.ndarray, levels: np.ndarray, tail_sd: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation log density given fitted quantiles Q (n x m).

    Returns (log densities, membership counts). Rows of Q must already be
    strictly increasing; this hot path does not re-validate.
    """
    y = np.asarray(y, dtype=float)
    n, m = Q.shape
    k = interval_membership(Q, y)
    logf = np.empty(n)

    left = k == 0
    right = k == m
    mid = ~(left | right)

    if np.any(left):
        logf[left] = np.log(levels[0]) + _log_half_normal(y[left] - Q[left, 0], tail_sd)
    if np.any(right):
        logf[right] = np.log1p(-levels[-1]) + _log_half_normal(
            y[right] - Q[right, m - 1], tail_sd
        )
    if np.any(mid):
        km = k[mid]
        widths = Q[mid, km] - Q[mid, km - 1]
        logf[mid] = np.log(levels[km] - levels[km - 1]) - np.log(widths)
    return logf, k


def _quantile_values(model: LidModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.B.p,):
        raise ContractError(f"x must have length {model.B.p}, got shape {x.shape}")
    q = model.B.B @ x
    if np.any(np.diff(q) <= 0.0):
        raise ContractError("fitted quantiles cross at this design point")
    return q


def lid_pdf(model: LidModel, x: np.ndarray, y: float) -> float:
    """Density of the response at design point ``x``.

    Piecewise constant between consecutive fitted quantiles, half-normal
    beyond the extremes. Ties y == q_j belong to the interval on the right.
    """
    q = _quantile_values(model, x)
    logf, _ = logpdf_rows(q[None, :], np.array([float(y)]), model.grid.levels, model.tail_sd)
    return float(np.exp(logf[0]))


def lid_loglik(model: LidModel, data: Dataset) -> float:
    """Sum of per-observation log densities; -inf only via tail underflow."""
    if data.p != model.B.p:
        raise ContractError(f"predictor count mismatch: data p={data.p}, B p={model.B.p}")
    if not validate_noncrossing(model.B, data):
        raise ContractError("fitted quantiles cross at some observed design point")
    Q = model.B.predicted_quantiles(data)
    logf, _ = logpdf_rows(Q, data.Y, model.grid.levels, model.tail_sd)
    return float(np.sum(logf))


def interpolation_error_sup(
    true_cdf_inverse,
    true_pdf,
    grid: QuantileGrid,
    probe_points,
    tail_sd: float = 1.0,
) -> tuple[float, int]:
    """Worst-case gap between the interpolated density and a known density.

    Builds the interpolated density from the *exact* quantiles of the target
    distribution (``true_cdf_inverse`` evaluated on the grid) and measures
    max |interpolated - true| over ``probe_points``. Probes outside the open
    span (q_1, q_m) are skipped; their count is returned alongside the sup.
    Used by the diagnostic harness to watch the error shrink as the grid is
    refined.
    """
    q = np.array([float(true_cdf_inverse(t)) for t in grid.levels])
    if np.any(np.diff(q) <= 0.0):
        raise ContractError("true_cdf_inverse must be strictly increasing on the grid")
    probes = np.asarray(list(probe_points), dtype=float)
    inside = (probes > q[0]) & (probes < q[-1])
    skipped = int(np.sum(~inside))
    probes = probes[inside]
    if probes.size == 0:
        return 0.0, skipped

    model = LidModel(CoefficientMatrix(q[:, None]), grid, tail_sd)
    x = np.ones(1)
    worst = 0.0
    for y in probes:
        gap = abs(lid_pdf(model, x, float(y)) - float(true_pdf(y)))
        if gap > worst:
            worst = gap
    return worst, skipped
