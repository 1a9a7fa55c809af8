"""Classical comparators: check-loss quantile regression and friends.

Implements single-level quantile regression as a linear program (exact
vertex solutions, which makes optimality certifiable in tests), efficiency
weights estimated from a local quantile-slope difference, pair-bootstrap
standard errors, and a random-walk sampler under the asymmetric-Laplace
working likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import Dataset, PriorSpec, check_loss
from .errors import ContractError, NumericalError

if TYPE_CHECKING:  # pragma: no cover
    from .sampler import ChainOutput, SamplerConfig

__all__ = [
    "RqFit",
    "rq_fit",
    "estimate_weights",
    "wrq_fit",
    "pair_bootstrap",
    "ald_log_density",
    "ald_chain",
    "ald_default_config",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RqFit:
    """A fitted quantile-regression plane at a single level.

    ``objective`` is the attained (weighted) check-loss sum, recomputed
    exactly from ``beta`` rather than read off the solver. ``weights`` is
    None for unweighted fits. ``fallback_unweighted`` marks weighted fits
    that degenerated to the unweighted problem because every estimated
    weight was zero.
    """

    beta: np.ndarray
    tau: float
    objective: float
    weights: np.ndarray | None = None
    fallback_unweighted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta", _readonly(np.atleast_1d(self.beta)))
        if self.weights is not None:
            object.__setattr__(self, "weights", _readonly(self.weights))

    def residuals(self, data: Dataset) -> np.ndarray:
        return data.Y - data.X @ self.beta


def _validate_tau(tau: float) -> float:
    tau = float(tau)
    if not (0.0 < tau < 1.0):
        raise ContractError(f"tau must be in (0,1), got {tau}")
    return tau


def rq_fit(data: Dataset, tau: float, weights: np.ndarray | None = None) -> RqFit:
    """Minimize sum_i w_i * rho_tau(y_i - x_i'beta) by linear programming.

    Splits each residual into positive and negative parts (u+, u-) and
    solves min tau*sum(w u+) + (1-tau)*sum(w u-) subject to
    X beta + u+ - u- = Y with u+, u- >= 0. The minimizer can be non-unique;
    the attained objective is what callers should rely on.
    """
    tau = _validate_tau(tau)
    n, p = data.n, data.p
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ContractError(f"weights must have length {n}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ContractError("weights must be finite and nonnegative")
        if not np.any(w > 0):
            raise ContractError("weights must not be all zero")

    eye = sparse.eye(n, format="csc")
    A_eq = sparse.hstack([sparse.csc_matrix(data.X), eye, -eye], format="csc")
    c = np.concatenate([np.zeros(p), tau * w, (1.0 - tau) * w])
    bounds = [(None, None)] * p + [(0.0, None)] * (2 * n)
    res = linprog(c, A_eq=A_eq, b_eq=data.Y, bounds=bounds, method="highs")
    if not res.success:
        raise NumericalError(f"quantile-regression LP failed: {res.message}")
    beta = res.x[:p]
    objective = float(np.sum(w * check_loss(data.Y - data.X @ beta, tau)))
    return RqFit(beta=beta, tau=tau, objective=objective,
                 weights=None if weights is None else w)


def estimate_weights(data: Dataset, tau: float, delta_tau: float = 0.05) -> np.ndarray:
    """Per-observation efficiency weights from a local slope of the
    conditional quantile function.

    Fits unweighted quantile regressions at tau +/- delta_tau and sets
    w_i = 2*delta_tau / (x_i'(beta_hi - beta_lo)). Observations where the
    denominator is nonpositive or nonfinite (crossed local fits) get
    weight 0.
    """
    tau = _validate_tau(tau)
    delta_tau = float(delta_tau)
    if not (0.0 < tau - delta_tau and tau + delta_tau < 1.0):
        raise ContractError(
            f"need 0 < tau-delta < tau+delta < 1, got tau={tau}, delta={delta_tau}"
        )
    hi = rq_fit(data, tau + delta_tau)
    lo = rq_fit(data, tau - delta_tau)
    denom = data.X @ (hi.beta - lo.beta)
    with np.errstate(divide="ignore", over="ignore"):
        w = 2.0 * delta_tau / denom
    w[~np.isfinite(w) | (w < 0)] = 0.0
    return w


def wrq_fit(data: Dataset, tau: float, delta_tau: float = 0.05) -> RqFit:
    """Quantile regression reweighted by estimated efficiency weights.

    Falls back to the unweighted fit (flagged on the result) when every
    estimated weight is zero.
    """
    w = estimate_weights(data, tau, delta_tau)
    if not np.any(w > 0):
        fit = rq_fit(data, tau)
        return RqFit(beta=fit.beta, tau=fit.tau, objective=fit.objective,
                     weights=None, fallback_unweighted=True)
    return rq_fit(data, tau, weights=w)


def pair_bootstrap(data: Dataset, tau: float, B: int, seed: int) -> np.ndarray:
    """Coefficient-wise standard errors from resampling (x, y) pairs.

    Draws B resamples of the rows with replacement, refits the quantile
    regression on each, and returns the per-coefficient sample standard
    deviation. Resamples whose design matrix loses rank are redrawn, up
    to 10*B total attempts.
    """
    tau = _validate_tau(tau)
    if not isinstance(B, (int, np.integer)) or B < 2:
        raise ContractError("need at least B=2 bootstrap replicates")
    rng = np.random.default_rng(seed)
    betas = np.empty((B, data.p))
    attempts = 0
    done = 0
    while done < B:
        if attempts >= 10 * B:
            raise NumericalError(
                f"rank-deficient resamples exhausted {10 * B} attempts"
            )
        attempts += 1
        idx = rng.integers(0, data.n, size=data.n)
        Xb = data.X[idx]
        if np.linalg.matrix_rank(Xb) < data.p:
            continue
        betas[done] = rq_fit(Dataset(Xb, data.Y[idx], data.names), tau).beta
        done += 1
    return np.std(betas, axis=0, ddof=1)


# ---------------------------------------------------------------------------
# Asymmetric-Laplace working likelihood
# ---------------------------------------------------------------------------

def ald_log_density(u, tau: float):
    """log of tau*(1-tau)*exp(-rho_tau(u)), the asymmetric-Laplace kernel."""
    tau = _validate_tau(tau)
    return np.log(tau * (1.0 - tau)) - check_loss(u, tau)


def ald_default_config(seed: int) -> "SamplerConfig":
    """Chain settings conventionally used with this working likelihood:
    5000 iterations, half discarded as burn-in, no thinning."""
    from .sampler import SamplerConfig

    return SamplerConfig(iters=5000, burnin=2500, thin=1, seed=seed)


def ald_chain(
    data: Dataset, tau: float, prior: PriorSpec, cfg: "SamplerConfig"
) -> "ChainOutput":
    """Random-walk Metropolis for a single quantile level under the
    asymmetric-Laplace working likelihood.

    The prior is over the p coefficients of beta(tau). The proposal is a
    joint normal step with per-coordinate scale ``cfg.proposal_sd`` when
    set, else 0.1x the prior sd. Draws are returned with a level axis of
    size one so the output shape matches the multi-level sampler.
    """
    from .sampler import ChainOutput

    tau = _validate_tau(tau)
    if prior.mean.size != data.p:
        raise ContractError(f"prior length {prior.mean.size} != p = {data.p}")
    mu, sd = prior.mean, prior.sd
    scale = np.full(data.p, cfg.proposal_sd) if cfg.proposal_sd else 0.1 * sd

    def logpost(beta: np.ndarray) -> float:
        loglik = float(np.sum(ald_log_density(data.Y - data.X @ beta, tau)))
        z = (beta - mu) / sd
        return loglik + float(np.sum(-0.5 * z * z))

    rng = np.random.default_rng(cfg.seed)
    beta = rq_fit(data, tau).beta.copy()
    lp = logpost(beta)
    kept = []
    accepted = 0
    for t in range(cfg.iters):
        cand = beta + scale * rng.standard_normal(data.p)
        lp_cand = logpost(cand)
        if np.log(rng.random()) < lp_cand - lp:
            beta, lp = cand, lp_cand
            accepted += 1
        if t >= cfg.burnin and (t - cfg.burnin) % cfg.thin == 0:
            kept.append(beta.copy())

    draws = np.asarray(kept)[:, None, :]  # (draws, 1 level, p)
    loglik = lp - float(np.sum(-0.5 * ((beta - mu) / sd) ** 2))
    return ChainOutput(
        draws=draws,
        accept_count=accepted,
        propose_count=cfg.iters,
        seed=cfg.seed,
        final_loglik=loglik,
    )
