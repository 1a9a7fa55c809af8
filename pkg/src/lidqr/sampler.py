"""Constrained coordinate-wise Metropolis-Hastings over the quantile planes.

The chain targets the posterior proportional to prior(B) x interpolated
likelihood, restricted to coefficient matrices whose fitted quantiles never
cross at any observed design point. Each step perturbs a single entry
B[j, l]; the proposal is confined to the exact interval of values that keep
the matrix feasible with everything else held fixed, so every visited state
is feasible by construction.

Proposals are Uniform over the interval when both endpoints are finite
(symmetric, the proposal ratio cancels exactly) and a truncated normal
otherwise, with the exact forward/reverse density correction in the
acceptance ratio. The likelihood update is either a full recomputation or
an incremental one touching only the observations whose density involves
the perturbed quantile level; both paths are exact and the incremental one
is selected automatically for large n x m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .baselines import rq_fit
from .core import (
    CoefficientMatrix,
    Dataset,
    PriorSpec,
    QuantileGrid,
    default_names,
    validate_noncrossing,
)
from .density import logpdf_rows
from .errors import ContractError

__all__ = [
    "SamplerConfig",
    "ChainOutput",
    "StepResult",
    "init_parallel",
    "proposal_bounds",
    "propose_coordinate",
    "truncnorm_logpdf",
    "mh_step",
    "run_chain",
    "posterior_summaries",
    "contrast_draws",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Above this many likelihood terms (n x m), steps update only the
# observations adjacent to the perturbed level instead of recomputing
# every term. Both paths are exact; see tests for the cross-check.
INCREMENTAL_CUTOVER = 20_000


@dataclass(frozen=True)
class SamplerConfig:
    """Chain-length and scale settings for the Metropolis samplers.

    ``proposal_sd`` (truncated-normal scale) and ``tail_sd_override``
    (density tail scale) may be left None, in which case ``run_chain``
    derives them from the spread of the initialization-fit residuals.
    """

    iters: int
    burnin: int
    thin: int = 1
    seed: int = 0
    proposal_sd: float | None = None
    tail_sd_override: float | None = None

    def __post_init__(self):
        if self.iters < 1:
            raise ContractError("iters must be >= 1")
        if not (0 <= self.burnin < self.iters):
            raise ContractError("need 0 <= burnin < iters")
        if self.thin < 1:
            raise ContractError("thin must be >= 1")
        if self.proposal_sd is not None and not self.proposal_sd > 0:
            raise ContractError("proposal_sd must be positive when given")
        if self.tail_sd_override is not None and not self.tail_sd_override > 0:
            raise ContractError("tail_sd_override must be positive when given")

    @classmethod
    def desk_scale(cls, m: int, p: int, seed: int = 0, **overrides) -> "SamplerConfig":
        """Defaults sized for quick runs: about a thousand updates per
        coordinate, half burn-in, and roughly a thousand stored draws."""
        iters = overrides.pop("iters", 2000 * m * p)
        burnin = overrides.pop("burnin", iters // 2)
        thin = overrides.pop("thin", max(1, iters // 2000))
        return cls(iters=iters, burnin=burnin, thin=thin, seed=seed, **overrides)


@dataclass(frozen=True)
class ChainOutput:
    """Stored draws plus bookkeeping from a finished chain.

    ``draws`` is a (num draws, m, p) array: post-burn-in, thinned states,
    every one of which is feasible for the training data.
    """

    draws: np.ndarray
    accept_count: int
    propose_count: int
    seed: int
    final_loglik: float

    def __post_init__(self):
        draws = np.ascontiguousarray(self.draws, dtype=float)
        if draws.ndim != 3:
            raise ContractError("draws must be (num draws, levels, predictors)")
        draws.flags.writeable = False
        object.__setattr__(self, "draws", draws)
        if not (0 <= self.accept_count <= self.propose_count):
            raise ContractError("need 0 <= accept_count <= propose_count")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / max(1, self.propose_count)

    def coefficients(self, i: int) -> CoefficientMatrix:
        return CoefficientMatrix(self.draws[i])

    def mean_matrix(self) -> CoefficientMatrix:
        """Posterior-mean coefficient matrix (the point estimate)."""
        if self.n_draws == 0:
            raise ContractError("chain stored no draws")
        return CoefficientMatrix(self.draws.mean(axis=0))


@dataclass(frozen=True)
class StepResult:
    """One Metropolis step: the (possibly unchanged) state plus diagnostics."""

    state: CoefficientMatrix
    loglik: float
    accepted: bool
    j: int
    l: int
    proposal: float
    lower: float
    upper: float
    log_ratio: float


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_parallel(data: Dataset, grid: QuantileGrid) -> CoefficientMatrix:
    """Feasible starting point built from parallel single-level fits.

    All rows share the slopes of the median fit; row j takes the intercept
    of the single-level fit at level tau_j. Intercepts are then sorted and,
    if any tie exactly, spread by a tiny increasing offset — parallel
    planes with strictly increasing intercepts can never cross.
    """
    med = rq_fit(data, 0.5)
    intercepts = np.array([rq_fit(data, float(t)).beta[0] for t in grid.levels])
    intercepts = np.sort(intercepts)
    if np.any(np.diff(intercepts) == 0.0):
        eps = 1e-6 * (1.0 + abs(float(intercepts.max())))
        intercepts = intercepts + eps * np.arange(grid.m)
    B = np.tile(med.beta, (grid.m, 1))
    B[:, 0] = intercepts
    return CoefficientMatrix(B)


# ---------------------------------------------------------------------------
# Feasibility-preserving proposals
# ---------------------------------------------------------------------------

def _bounds_from_arrays(
    B: np.ndarray, Q: np.ndarray, X: np.ndarray, j: int, l: int
) -> tuple[float, float]:
    """Open interval of values for B[j, l] keeping all rows of Q ordered."""
    m = B.shape[0]
    xl = X[:, l]
    pos = xl > 0.0
    neg = xl < 0.0
    any_pos = bool(pos.any())
    any_neg = bool(neg.any())
    lo = -math.inf
    hi = math.inf
    if j > 0:
        d = Q[:, j - 1] - Q[:, j]  # negative offsets
        if any_pos:
            lo = max(lo, float(np.max(d[pos] / xl[pos])))
        if any_neg:
            hi = min(hi, float(np.min(d[neg] / xl[neg])))
    if j < m - 1:
        d = Q[:, j + 1] - Q[:, j]  # positive offsets
        if any_pos:
            hi = min(hi, float(np.min(d[pos] / xl[pos])))
        if any_neg:
            lo = max(lo, float(np.max(d[neg] / xl[neg])))
    cur = float(B[j, l])
    return cur + lo, cur + hi


def proposal_bounds(
    B: CoefficientMatrix, data: Dataset, j: int, l: int
) -> tuple[float, float]:
    """Exact feasible interval for coordinate (j, l) with the rest fixed.

    The current value always lies strictly inside. Either side may be
    infinite: the first and last levels are unbounded away from their
    single neighbour, and observations with x[l] == 0 constrain nothing.
    """
    if not (0 <= j < B.m and 0 <= l < B.p):
        raise ContractError(f"coordinate ({j},{l}) out of range for {B.m}x{B.p}")
    if not validate_noncrossing(B, data):
        raise ContractError("state is infeasible: fitted quantiles cross")
    Q = B.predicted_quantiles(data)
    return _bounds_from_arrays(B.B, Q, data.X, j, l)


def truncnorm_logpdf(
    x: float, center: float, sd: float, lower: float, upper: float
) -> float:
    """Log density at ``x`` of Normal(center, sd^2) truncated to (lower, upper)."""
    if not lower < x < upper:
        return -math.inf
    a = ndtr((lower - center) / sd) if lower > -math.inf else 0.0
    b = ndtr((upper - center) / sd) if upper < math.inf else 1.0
    z = (x - center) / sd
    return -0.5 * z * z - math.log(sd) - _LOG_SQRT_2PI - math.log(b - a)


def propose_coordinate(
    current: float,
    lower: float,
    upper: float,
    proposal_sd: float,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """Draw a candidate in (lower, upper) and report proposal log densities.

    Doubly bounded intervals use a Uniform draw, so the forward and reverse
    log densities are equal by construction. Otherwise the draw comes from
    Normal(current, proposal_sd^2) truncated to the interval via inverse-CDF
    sampling, and the reverse density is evaluated for the chain's
    acceptance correction. Exactly one uniform variate is consumed either
    way.
    """
    if not lower < current < upper:
        raise ContractError("current value must lie strictly inside (lower, upper)")
    if math.isfinite(lower) and math.isfinite(upper):
        width = upper - lower
        proposal = lower + width * rng.random()
        logq = -math.log(width)
        return proposal, logq, logq
    a = ndtr((lower - current) / proposal_sd) if lower > -math.inf else 0.0
    b = ndtr((upper - current) / proposal_sd) if upper < math.inf else 1.0
    t = a + rng.random() * (b - a)
    t = min(max(t, 5e-324), 1.0 - 1e-16)
    proposal = current + proposal_sd * float(ndtri(t))
    log_q_forward = truncnorm_logpdf(proposal, current, proposal_sd, lower, upper)
    log_q_reverse = truncnorm_logpdf(current, proposal, proposal_sd, lower, upper)
    return proposal, log_q_forward, log_q_reverse


# ---------------------------------------------------------------------------
# The step kernel (shared by mh_step and run_chain)
# ---------------------------------------------------------------------------

class _ChainState:
    """Mutable working state: coefficient matrix, fitted quantiles, and the
    per-observation log-density cache."""

    __slots__ = ("B", "Q", "logf", "k", "loglik", "incremental")

    def __init__(self, B, data, levels, tail_sd, incremental):
        self.B = np.array(B, dtype=float)
        self.Q = data.X @ self.B.T
        self.logf, self.k = logpdf_rows(self.Q, data.Y, levels, tail_sd)
        self.loglik = float(self.logf.sum())
        self.incremental = bool(incremental)


class _Context:
    """Immutable per-run precomputations shared by every step."""

    __slots__ = ("X", "Y", "levels", "prior_mean", "prior_sd", "tail_sd",
                 "proposal_sd", "m", "p")

    def __init__(self, data, grid, prior, tail_sd, proposal_sd):
        self.X = data.X
        self.Y = data.Y
        self.levels = grid.levels
        self.prior_mean, self.prior_sd = prior.matrices(grid.m, data.p)
        self.tail_sd = float(tail_sd)
        self.proposal_sd = float(proposal_sd)
        self.m = grid.m
        self.p = data.p


def _safe_delta(new: float, old: float) -> float:
    if math.isfinite(new) and math.isfinite(old):
        return new - old
    if new == -math.inf:
        return -math.inf
    return math.inf  # escaping a zero-density state


def _step(st: _ChainState, ctx: _Context, rng: np.random.Generator):
    j = int(rng.integers(ctx.m))
    l = int(rng.integers(ctx.p))
    lower, upper = _bounds_from_arrays(st.B, st.Q, ctx.X, j, l)
    cur = st.B[j, l]
    proposal, lqf, lqr = propose_coordinate(cur, lower, upper, ctx.proposal_sd, rng)

    qj_new = st.Q[:, j] + (proposal - cur) * ctx.X[:, l]
    # The interval is open; a proposal that rounds onto an endpoint would
    # create a zero-width (infinite-density) interval, so reject it outright.
    if j > 0 and not np.all(qj_new > st.Q[:, j - 1]):
        return False, j, l, proposal, lower, upper, -math.inf
    if j < ctx.m - 1 and not np.all(qj_new < st.Q[:, j + 1]):
        return False, j, l, proposal, lower, upper, -math.inf

    mu = ctx.prior_mean[j, l]
    psd = ctx.prior_sd[j, l]
    dprior = 0.5 * ((cur - mu) ** 2 - (proposal - mu) ** 2) / (psd * psd)

    if st.incremental:
        sel = (st.k == j) | (st.k == j + 1)
        Qsel = st.Q[sel]  # fancy indexing copies
        Qsel[:, j] = qj_new[sel]
        logf_new, k_new = logpdf_rows(Qsel, ctx.Y[sel], ctx.levels, ctx.tail_sd)
        dloglik = _safe_delta(float(logf_new.sum()), float(st.logf[sel].sum()))
    else:
        Qfull = np.array(st.Q)
        Qfull[:, j] = qj_new
        logf_new, k_new = logpdf_rows(Qfull, ctx.Y, ctx.levels, ctx.tail_sd)
        dloglik = _safe_delta(float(logf_new.sum()), st.loglik)

    log_r = dprior + dloglik + lqr - lqf
    if math.isnan(log_r):
        return False, j, l, proposal, lower, upper, log_r
    u = rng.random()
    log_u = math.log(u) if u > 0.0 else -math.inf
    if log_u >= log_r:
        return False, j, l, proposal, lower, upper, log_r

    st.B[j, l] = proposal
    st.Q[:, j] = qj_new
    if st.incremental:
        st.logf[sel] = logf_new
        st.k[sel] = k_new
        st.loglik += dloglik
    else:
        st.logf = logf_new
        st.k = k_new
        st.loglik = float(logf_new.sum())
    return True, j, l, proposal, lower, upper, log_r


def mh_step(
    state: CoefficientMatrix,
    loglik: float,
    data: Dataset,
    grid: QuantileGrid,
    prior: PriorSpec,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> StepResult:
    """One coordinate update from ``state``, whose log-likelihood is ``loglik``.

    Picks level j and coordinate l uniformly, proposes inside the feasible
    interval, and accepts with probability
    min(1, exp(dprior + dloglik + log q_reverse - log q_forward)), the prior
    term using untruncated normal densities (the truncation constant is
    shared by the two feasible states and cancels). Requires ``cfg`` to
    carry explicit ``proposal_sd`` and ``tail_sd_override`` since there is
    no initialization fit to derive them from.
    """
    if cfg.proposal_sd is None or cfg.tail_sd_override is None:
        raise ContractError(
            "mh_step needs explicit proposal_sd and tail_sd_override in cfg"
        )
    if not validate_noncrossing(state, data):
        raise ContractError("state is infeasible: fitted quantiles cross")
    ctx = _Context(data, grid, prior, cfg.tail_sd_override, cfg.proposal_sd)
    st = _ChainState(state.B, data, grid.levels, ctx.tail_sd, incremental=False)
    accepted, j, l, proposal, lower, upper, log_r = _step(st, ctx, rng)
    if accepted:
        return StepResult(CoefficientMatrix(st.B), st.loglik, True,
                          j, l, proposal, lower, upper, log_r)
    return StepResult(state, loglik, False, j, l, proposal, lower, upper, log_r)


# ---------------------------------------------------------------------------
# Full chains
# ---------------------------------------------------------------------------

def _resolve_scales(
    data: Dataset, cfg: SamplerConfig
) -> tuple[float, float]:
    """(tail_sd, proposal_sd), derived from median-fit residuals when unset."""
    resid = rq_fit(data, 0.5).residuals(data)
    resid_sd = float(np.std(resid, ddof=1)) if data.n > 1 else 0.0
    if not (math.isfinite(resid_sd) and resid_sd > 0):
        resid_sd = 1.0
    tail_sd = cfg.tail_sd_override if cfg.tail_sd_override is not None else resid_sd
    if cfg.proposal_sd is not None:
        proposal_sd = cfg.proposal_sd
    else:
        proposal_sd = 0.5 * resid_sd / math.sqrt(data.p)
    return tail_sd, proposal_sd


def run_chain(
    data: Dataset,
    grid: QuantileGrid,
    prior: PriorSpec,
    cfg: SamplerConfig,
    incremental: bool | None = None,
) -> ChainOutput:
    """Run the constrained coordinate sampler and collect thinned draws.

    Starts from the parallel-planes initializer, performs ``cfg.iters``
    coordinate updates, and stores every ``cfg.thin``-th state once
    ``cfg.burnin`` steps have passed. Fully deterministic given the inputs;
    ``incremental=None`` lets the likelihood-update strategy be chosen by
    problem size.
    """
    prior.matrices(grid.m, data.p)  # shape check up front
    init = init_parallel(data, grid)
    tail_sd, proposal_sd = _resolve_scales(data, cfg)
    if incremental is None:
        incremental = data.n * grid.m > INCREMENTAL_CUTOVER
    ctx = _Context(data, grid, prior, tail_sd, proposal_sd)
    st = _ChainState(init.B, data, grid.levels, tail_sd, incremental)
    rng = np.random.default_rng(cfg.seed)

    n_store = (cfg.iters - cfg.burnin + cfg.thin - 1) // cfg.thin
    draws = np.empty((n_store, grid.m, data.p))
    stored = 0
    accepted = 0
    for t in range(cfg.iters):
        if _step(st, ctx, rng)[0]:
            accepted += 1
        if t >= cfg.burnin and (t - cfg.burnin) % cfg.thin == 0:
            draws[stored] = st.B
            stored += 1
    return ChainOutput(
        draws=draws,
        accept_count=accepted,
        propose_count=cfg.iters,
        seed=cfg.seed,
        final_loglik=st.loglik,
    )


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def contrast_draws(
    chain: ChainOutput, grid: QuantileGrid, column: int, tau_a: float, tau_b: float
) -> np.ndarray:
    """Per-draw difference of one coefficient between two levels:
    coefficient[column] at tau_a minus at tau_b."""
    ja, jb = grid.index_of(tau_a), grid.index_of(tau_b)
    return chain.draws[:, ja, column] - chain.draws[:, jb, column]


def _summary_row(values: np.ndarray) -> dict:
    q025, q50, q975 = np.quantile(values, [0.025, 0.5, 0.975])
    return {
        "mean": float(np.mean(values)),
        "sd": float(np.std(values, ddof=1)) if values.size > 1 else 0.0,
        "q2.5": float(q025),
        "q50": float(q50),
        "q97.5": float(q975),
    }


def posterior_summaries(
    chain: ChainOutput,
    grid: QuantileGrid,
    names: tuple[str, ...] | None = None,
    contrasts: tuple[tuple[int, float, float], ...] = (),
):
    """Tabulate mean, sd, and central quantiles for every coefficient.

    One row per (level, coefficient); ``contrasts`` entries
    (column, tau_a, tau_b) append rows for cross-level differences such as
    the slope at 0.75 minus the slope at 0.5. Returns a pandas DataFrame.
    """
    import pandas as pd

    if chain.n_draws == 0:
        raise ContractError("chain stored no draws")
    _, m, p = chain.draws.shape
    if m != grid.m:
        raise ContractError(f"chain has {m} levels, grid has {grid.m}")
    if names is None:
        names = default_names(p)
    rows = []
    for j, tau in enumerate(grid.levels):
        for c in range(p):
            row = {"parameter": names[c], "level": float(tau)}
            row.update(_summary_row(chain.draws[:, j, c]))
            rows.append(row)
    for column, tau_a, tau_b in contrasts:
        vals = contrast_draws(chain, grid, column, tau_a, tau_b)
        row = {
            "parameter": f"{names[column]}[{tau_a:g}]-[{tau_b:g}]",
            "level": math.nan,
        }
        row.update(_summary_row(vals))
        rows.append(row)
    return pd.DataFrame(rows)
