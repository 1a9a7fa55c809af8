"""Simulation studies, coverage evaluation, and the small-case grid oracle.

Two synthetic heteroscedastic designs with analytically known quantile
coefficients drive the comparisons: per-replicate datasets are generated
from seeds derived as (master seed, replicate), method chains from
(master seed, replicate, method id), so every method sees identical data
and dropping a method never perturbs the others. The module also provides
an exhaustive 2-D discretization of the posterior for intercept-only
two-level problems, used as the ground truth the sampler is tested
against.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .baselines import ald_chain, rq_fit, wrq_fit
from .core import Dataset, PriorSpec, QuantileGrid, default_names, make_grid
from .errors import ContractError, NumericalError
from .sampler import SamplerConfig, run_chain

__all__ = [
    "METHOD_IDS",
    "SimSpec",
    "FitOptions",
    "Target",
    "parse_target",
    "derive_seed",
    "gen_example1",
    "gen_example2",
    "gen_dataset",
    "true_coefficients",
    "point_estimates",
    "run_mse_study",
    "MseStudyResult",
    "oob_coverage",
    "GridPosterior",
    "grid_posterior_oracle",
    "tv_distance",
    "histogram_probs",
    "tv_to_samples",
]

log = logging.getLogger(__name__)

# Fixed method identifiers; they enter seed derivation, so renumbering
# would silently change every simulated result.
METHOD_IDS = {"rq": 1, "ewrq": 2, "lid": 3, "ald": 4, "oracle": 5}


def derive_seed(master: int, *path: int) -> int:
    """Collision-resistant child seed for a labelled position in the study."""
    ss = np.random.SeedSequence([int(master), *[int(x) for x in path]])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Synthetic designs
# ---------------------------------------------------------------------------

def gen_example1(n: int, seed: int) -> Dataset:
    """Heteroscedastic single-covariate design: y = 5 + x + (1+x) eps with
    x ~ LogNormal(0,1) and eps ~ Normal(0,1)."""
    if n < 2:
        raise ContractError("need n >= 2")
    rng = np.random.default_rng(seed)
    x = rng.lognormal(mean=0.0, sigma=1.0, size=n)
    eps = rng.standard_normal(n)
    y = 5.0 + x + (1.0 + x) * eps
    return Dataset(np.column_stack([np.ones(n), x]), y)


def gen_example2(n: int, seed: int) -> Dataset:
    """Two-covariate variant: y = 5 + x1 + x2 + (1 + x1 + x2) eps with
    x1 ~ LogNormal(0,1), x2 ~ Bernoulli(0.5), eps ~ Normal(0,1)."""
    if n < 2:
        raise ContractError("need n >= 2")
    rng = np.random.default_rng(seed)
    x1 = rng.lognormal(mean=0.0, sigma=1.0, size=n)
    x2 = rng.integers(0, 2, size=n).astype(float)
    eps = rng.standard_normal(n)
    y = 5.0 + x1 + x2 + (1.0 + x1 + x2) * eps
    return Dataset(np.column_stack([np.ones(n), x1, x2]), y)


_EXAMPLE_P = {1: 2, 2: 3}


def gen_dataset(example: int, n: int, seed: int) -> Dataset:
    if example == 1:
        return gen_example1(n, seed)
    if example == 2:
        return gen_example2(n, seed)
    raise ContractError(f"unknown example {example}")


def true_coefficients(example: int, tau: float) -> np.ndarray:
    """Exact quantile-plane coefficients of the synthetic designs.

    The noise scale is 1 plus the sum of covariates, so each conditional
    quantile is the base plane shifted by the standard-normal quantile in
    every coordinate: intercept 5 + z(tau), slopes 1 + z(tau).
    """
    if not (0.0 < tau < 1.0):
        raise ContractError(f"tau must be in (0,1), got {tau}")
    z = float(ndtri(tau))
    p = _EXAMPLE_P.get(example)
    if p is None:
        raise ContractError(f"unknown example {example}")
    return np.array([5.0 + z] + [1.0 + z] * (p - 1))


@dataclass(frozen=True)
class SimSpec:
    """A simulation study: which design, how big, how many replicates."""

    example: int
    n: int
    reps: int
    seed: int = 0

    def __post_init__(self):
        if self.example not in _EXAMPLE_P:
            raise ContractError(f"unknown example {self.example}")
        if self.n < _EXAMPLE_P[self.example] + 1:
            raise ContractError("n must exceed the number of coefficients")
        if self.reps < 1:
            raise ContractError("reps must be >= 1")

    @property
    def p(self) -> int:
        return _EXAMPLE_P[self.example]

    @property
    def names(self) -> tuple[str, ...]:
        return default_names(self.p)

    def dataset(self, rep: int) -> Dataset:
        """Replicate data; depends only on (seed, rep), never on methods."""
        return gen_dataset(self.example, self.n, derive_seed(self.seed, rep))


# ---------------------------------------------------------------------------
# Targets: single coefficients and cross-level contrasts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Target:
    """A scored quantity: coefficient ``name`` at ``tau_a``, or the
    difference of that coefficient between ``tau_a`` and ``tau_b``."""

    name: str
    tau_a: float
    tau_b: float | None = None

    @property
    def label(self) -> str:
        if self.tau_b is None:
            return f"{self.name}@{self.tau_a:g}"
        return f"{self.name}@{self.tau_a:g}-{self.name}@{self.tau_b:g}"

    @property
    def taus(self) -> tuple[float, ...]:
        return (self.tau_a,) if self.tau_b is None else (self.tau_a, self.tau_b)

    def value(self, betas: dict[float, np.ndarray], names: tuple[str, ...]) -> float:
        col = names.index(self.name)
        v = float(betas[self.tau_a][col])
        if self.tau_b is not None:
            v -= float(betas[self.tau_b][col])
        return v


def _parse_atom(atom: str) -> tuple[str, float]:
    name, sep, tau = atom.partition("@")
    if not sep or not name:
        raise ContractError(f"expected NAME@TAU, got {atom!r}")
    try:
        t = float(tau)
    except ValueError:
        raise ContractError(f"bad quantile level in {atom!r}") from None
    if not (0.0 < t < 1.0):
        raise ContractError(f"quantile level out of (0,1) in {atom!r}")
    return name, t


def parse_target(text: str) -> Target:
    """Parse "name@tau" or "name@tau_a-name@tau_b" (same name both sides)."""
    parts = text.split("-")
    if len(parts) == 1:
        name, tau = _parse_atom(parts[0])
        return Target(name, tau)
    if len(parts) == 2:
        na, ta = _parse_atom(parts[0])
        nb, tb = _parse_atom(parts[1])
        if na != nb:
            raise ContractError(
                f"contrast must compare one coefficient across levels, got {text!r}"
            )
        return Target(na, ta, tb)
    raise ContractError(f"cannot parse target {text!r}")


# ---------------------------------------------------------------------------
# Fitting dispatch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitOptions:
    """Knobs shared by every method in a study; None means 'use defaults'."""

    m: int = 15
    refinements: int = 0
    prior_sd: float = 10.0
    iters: int | None = None
    burnin: int | None = None
    thin: int | None = None
    proposal_sd: float | None = None
    tail_sd: float | None = None
    delta_tau: float = 0.05
    ald_iters: int = 5000
    ald_burnin: int = 2500

    def grid(self) -> QuantileGrid:
        return make_grid(self.m, self.refinements)

    def lid_config(self, m: int, p: int, seed: int) -> SamplerConfig:
        iters = self.iters if self.iters is not None else 2000 * m * p
        burnin = self.burnin if self.burnin is not None else iters // 2
        thin = self.thin if self.thin is not None else max(1, iters // 2000)
        return SamplerConfig(iters=iters, burnin=burnin, thin=thin, seed=seed,
                             proposal_sd=self.proposal_sd,
                             tail_sd_override=self.tail_sd)

    def ald_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(iters=self.ald_iters, burnin=self.ald_burnin,
                             thin=1, seed=seed, proposal_sd=self.proposal_sd)


def point_estimates(
    method: str,
    data: Dataset,
    taus: tuple[float, ...],
    options: FitOptions,
    seed: int,
    example: int | None = None,
) -> dict[float, np.ndarray]:
    """Per-level coefficient estimates for one method on one dataset.

    Bayesian methods are summarized by their posterior mean, applied
    uniformly so comparisons score the same functional. The "oracle"
    method returns the true coefficients and needs ``example`` set.
    """
    if method not in METHOD_IDS:
        raise ContractError(f"unknown method {method!r}; choose from "
                            f"{sorted(METHOD_IDS)}")
    taus = tuple(float(t) for t in taus)
    if method == "rq":
        return {t: rq_fit(data, t).beta for t in taus}
    if method == "ewrq":
        return {t: wrq_fit(data, t, options.delta_tau).beta for t in taus}
    if method == "oracle":
        if example is None:
            raise ContractError("oracle estimates need the example id")
        return {t: true_coefficients(example, t) for t in taus}
    if method == "ald":
        prior = PriorSpec.normal(1, data.p, sd=options.prior_sd)
        out = {}
        for i, t in enumerate(taus):
            chain = ald_chain(data, t, prior,
                              options.ald_config(derive_seed(seed, i)))
            out[t] = chain.draws[:, 0, :].mean(axis=0)
        return out
    # lid: one multi-level chain covering all requested levels
    grid = options.grid()
    for t in taus:
        if not grid.contains(t):
            raise ContractError(
                f"tau={t} is not a level of the m={grid.m} grid; "
                "choose levels of the form k/(m+1) or adjust --m"
            )
    prior = PriorSpec.normal(grid.m, data.p, sd=options.prior_sd)
    chain = run_chain(data, grid, prior,
                      options.lid_config(grid.m, data.p, seed))
    mean = chain.mean_matrix()
    return {t: mean.B[grid.index_of(t)] for t in taus}


# ---------------------------------------------------------------------------
# The n x MSE study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MseStudyResult:
    """Aggregated study table plus per-method dropped-replicate counts."""

    table: pd.DataFrame
    dropped: dict[str, int]


def _study_targets(spec: SimSpec, taus, contrasts) -> list[Target]:
    targets = [Target(name, float(t)) for t in taus for name in spec.names]
    for c in contrasts:
        t = parse_target(c) if isinstance(c, str) else c
        if t.name not in spec.names:
            raise ContractError(f"contrast names unknown coefficient {t.name!r}")
        targets.append(t)
    return targets


def _replicate_errors(args) -> dict[str, dict[str, float] | None]:
    """Squared errors for one replicate; None marks a failed method."""
    spec, methods, taus, targets, options, rep = args
    data = spec.dataset(rep)
    truth = {t: true_coefficients(spec.example, t) for t in taus}
    out: dict[str, dict[str, float] | None] = {}
    for method in methods:
        try:
            betas = point_estimates(
                method, data, taus, options,
                seed=derive_seed(spec.seed, rep, METHOD_IDS[method]),
                example=spec.example,
            )
        except (ContractError, NumericalError) as exc:
            log.warning("rep %d: %s failed: %s", rep, method, exc)
            out[method] = None
            continue
        errs = {}
        for target in targets:
            est = target.value(betas, spec.names)
            true = target.value(truth, spec.names)
            errs[target.label] = (est - true) ** 2
        out[method] = errs
    return out


def run_mse_study(
    spec: SimSpec,
    methods,
    taus,
    contrasts=(),
    options: FitOptions = FitOptions(),
    threads: int = 1,
) -> MseStudyResult:
    """Replicate the design, fit every method, score n x MSE per target.

    Output rows carry n x (mean squared error) with the standard error of
    that mean across replicates. Replicates where a method fails are
    dropped for that method only and counted in ``dropped``. Results are
    identical for any ``threads`` value; workers only shard replicates.
    """
    methods = [str(m) for m in methods]
    for m in methods:
        if m not in METHOD_IDS:
            raise ContractError(f"unknown method {m!r}")
    taus = tuple(float(t) for t in taus)
    targets = _study_targets(spec, taus, contrasts)

    jobs = [(spec, methods, taus, targets, options, rep)
            for rep in range(spec.reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_rep = list(pool.map(_replicate_errors, jobs))
    else:
        per_rep = [_replicate_errors(j) for j in jobs]

    dropped = {m: sum(1 for r in per_rep if r[m] is None) for m in methods}
    rows = []
    for method in methods:
        kept = [r[method] for r in per_rep if r[method] is not None]
        for target in targets:
            errs = np.array([k[target.label] for k in kept])
            if errs.size == 0:
                rows.append({"method": method, "target": target.label,
                             "n_times_mse": math.nan, "se": math.nan})
                continue
            scaled = spec.n * errs
            se = (float(np.std(scaled, ddof=1)) / math.sqrt(errs.size)
                  if errs.size > 1 else math.nan)
            rows.append({"method": method, "target": target.label,
                         "n_times_mse": float(np.mean(scaled)), "se": se})
    for method, count in dropped.items():
        if count:
            log.warning("method %s dropped on %d/%d replicates",
                        method, count, spec.reps)
    return MseStudyResult(table=pd.DataFrame(rows), dropped=dropped)


# ---------------------------------------------------------------------------
# Out-of-bag coverage
# ---------------------------------------------------------------------------

def oob_coverage(
    data: Dataset,
    methods,
    taus,
    test_fraction: float = 0.1,
    seed: int = 0,
    options: FitOptions = FitOptions(),
) -> pd.DataFrame:
    """Fraction of held-out responses strictly below each fitted plane.

    Splits off ``test_fraction`` of the rows at random, fits each method on
    the remainder, and counts y_test < predicted quantile (ties count as
    not below). Nominal value is tau itself.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ContractError("test_fraction must be in (0,1)")
    n_test = int(round(data.n * test_fraction))
    if n_test < 1 or n_test >= data.n:
        raise ContractError(
            f"test_fraction={test_fraction} leaves an empty split at n={data.n}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    test = data.subset(perm[:n_test])
    train = data.subset(perm[n_test:])
    taus = tuple(float(t) for t in taus)
    rows = []
    for method in methods:
        est = point_estimates(method, train, taus, options,
                              seed=derive_seed(seed, METHOD_IDS[method]))
        for t in taus:
            pred = test.X @ est[t]
            rows.append({"method": method, "tau": t,
                         "coverage": float(np.mean(test.Y < pred)),
                         "n_test": n_test})
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Grid-oracle posterior for tiny two-level problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridPosterior:
    """Discretized posterior over (lower, upper) intercepts on shared edges.

    ``joint[i, j]`` is the probability of the cell with the lower intercept
    in bin i and the upper in bin j; infeasible cells (lower >= upper)
    carry zero mass. Marginals are plain cell-probability vectors.
    """

    edges: np.ndarray
    joint: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=float))
        object.__setattr__(self, "joint", np.asarray(self.joint, dtype=float))

    @property
    def resolution(self) -> int:
        return self.edges.size - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def marginal_lower(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def marginal_upper(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def aggregate(self, factor: int) -> "GridPosterior":
        """Coarsen by an integer factor (edges are nested by construction)."""
        R = self.resolution
        if factor < 1 or R % factor:
            raise ContractError(f"factor must divide the resolution {R}")
        k = R // factor
        joint = self.joint.reshape(k, factor, k, factor).sum(axis=(1, 3))
        return GridPosterior(edges=self.edges[::factor], joint=joint)


def grid_posterior_oracle(
    data: Dataset,
    grid: QuantileGrid,
    prior: PriorSpec,
    tail_sd: float,
    resolution: int = 400,
    span: float = 8.0,
) -> GridPosterior:
    """Brute-force normalized posterior for an intercept-only 2-level model.

    Evaluates prior x interpolated likelihood at every cell center of an
    axis-aligned grid over the feasible triangle (lower < upper intercept)
    and normalizes by the Riemann sum. The axis covers the data range
    padded by ``span`` tail standard deviations. Independent of the
    Metropolis machinery, so chains can be validated against it.
    """
    if data.p != 1:
        raise ContractError("oracle is for intercept-only models (p=1)")
    if grid.m != 2:
        raise ContractError("oracle is for two-level grids (m=2)")
    if data.n > 10:
        raise ContractError("oracle is for n <= 10")
    if resolution < 100:
        raise ContractError("need at least 100 cells per axis")
    mu, sd = prior.matrices(2, 1)
    lo = float(data.Y.min()) - span * tail_sd
    hi = float(data.Y.max()) + span * tail_sd
    edges = np.linspace(lo, hi, resolution + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])

    b1 = centers[:, None]
    b2 = centers[None, :]
    tau1, tau2 = grid.levels
    log_w_left = math.log(tau1)
    log_w_mid = math.log(tau2 - tau1)
    log_w_right = math.log1p(-tau2)
    log_half = math.log(2.0) - math.log(tail_sd) - 0.5 * math.log(2.0 * math.pi)

    loglik = np.zeros((resolution, resolution))
    with np.errstate(invalid="ignore", divide="ignore"):
        width = b2 - b1
        log_mid_density = log_w_mid - np.log(width)
        for y in data.Y:
            zl = (y - b1) / tail_sd
            zr = (y - b2) / tail_sd
            left = log_w_left + log_half - 0.5 * zl * zl
            right = log_w_right + log_half - 0.5 * zr * zr
            loglik = loglik + np.where(
                y < b1, left, np.where(y >= b2, right, log_mid_density)
            )

    z1 = (centers - mu[0, 0]) / sd[0, 0]
    z2 = (centers - mu[1, 0]) / sd[1, 0]
    logpost = (-0.5 * z1 * z1)[:, None] + (-0.5 * z2 * z2)[None, :] + loglik
    feasible = b1 < b2
    logpost = np.where(feasible, logpost, -np.inf)
    w = np.exp(logpost - logpost.max())
    return GridPosterior(edges=edges, joint=w / w.sum())


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total-variation distance between two cell-probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ContractError("distributions live on different bin sets")
    return 0.5 * float(np.sum(np.abs(p - q)))


def histogram_probs(edges: np.ndarray, samples: np.ndarray) -> tuple[np.ndarray, float]:
    """Empirical cell probabilities on ``edges`` plus the out-of-range mass."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ContractError("no samples to histogram")
    counts, _ = np.histogram(samples, bins=edges)
    probs = counts / samples.size
    return probs, float(1.0 - probs.sum())


def tv_to_samples(probs: np.ndarray, edges: np.ndarray, samples: np.ndarray) -> float:
    """TV distance between a discretized density and an empirical sample;
    sample mass falling outside the bin range counts fully against it."""
    q, outside = histogram_probs(edges, samples)
    return 0.5 * (float(np.sum(np.abs(probs - q))) + outside)
