"""HTTP service exposing the fitting, simulation, and evaluation pipelines.

The service is stateless: every request carries its data and configuration
inline, and equal requests produce equal responses (all randomness is driven
by the seed in the request). Domain errors map onto structured JSON errors:
bad arguments or infeasible configurations give 400 with code "contract",
malformed data gives 400 with code "data", and solver or sampler breakdowns
give 500 with code "numerical".
"""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..baselines import ald_chain, pair_bootstrap, rq_fit, wrq_fit
from ..core import Dataset, PriorSpec, QuantileGrid
from ..errors import ContractError, DataError, NumericalError
from ..sampler import ChainOutput, posterior_summaries, run_chain
from ..simulate import (
    FitOptions,
    SimSpec,
    Target,
    derive_seed,
    oob_coverage,
    parse_target,
    run_mse_study,
)
from .schemas import (
    EvaluateRequest,
    EvaluateResponse,
    FitRequest,
    FitResponse,
    HealthResponse,
    SimulateRequest,
    SimulateResponse,
    TableModel,
)

_ERROR_STATUS = {ContractError: 400, DataError: 400, NumericalError: 500}
_ERROR_CODE = {ContractError: "contract", DataError: "data", NumericalError: "numerical"}


def _cell(value):
    """Convert one table cell to a JSON-safe Python value."""
    if value is None:
        return None
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    v = float(value)
    return None if math.isnan(v) else v


def _table(df: pd.DataFrame) -> TableModel:
    rows = [[_cell(v) for v in row] for row in df.itertuples(index=False, name=None)]
    return TableModel(columns=[str(c) for c in df.columns], rows=rows)


def _finite_or_none(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


def _draw_columns(levels, names) -> list[str]:
    return [f"{tau:g}:{name}" for tau in levels for name in names]


def _contrast_targets(contrasts, names) -> list[Target]:
    targets = []
    for text in contrasts:
        t = parse_target(text)
        if t.tau_b is None:
            raise ContractError(
                f"contrast {text!r} must compare two levels, like name@0.75-name@0.5"
            )
        if t.name not in names:
            raise ContractError(
                f"contrast {text!r} names unknown coefficient {t.name!r}; "
                f"columns are {list(names)}"
            )
        targets.append(t)
    return targets


def _validated_taus(taus) -> list[float]:
    if not taus:
        raise ContractError("need at least one quantile level")
    out = [float(t) for t in taus]
    for t in out:
        if not 0.0 < t < 1.0:
            raise ContractError(f"quantile levels must lie in (0,1), got {t}")
    return out


def _fit_lid(data: Dataset, taus, targets, seed: int, opts: FitOptions) -> FitResponse:
    grid = opts.grid()
    needed = set(taus)
    for t in targets:
        needed.update(t.taus)
    for t in sorted(needed):
        if not grid.contains(t):
            raise ContractError(
                f"tau={t:g} is not a level of the m={grid.m} grid; "
                "choose levels of the form k/(m+1) or adjust m/refinements"
            )
    prior = PriorSpec.normal(grid.m, data.p, sd=opts.prior_sd)
    chain = run_chain(data, grid, prior, opts.lid_config(grid.m, data.p, seed))
    triples = tuple(
        (data.names.index(t.name), t.tau_a, t.tau_b) for t in targets
    )
    summary = posterior_summaries(chain, grid, data.names, triples)
    return FitResponse(
        method="lid",
        draw_columns=_draw_columns(grid.levels, data.names),
        draws=chain.draws.reshape(chain.n_draws, grid.m * data.p).tolist(),
        summary=_table(summary),
        grid_levels=[float(t) for t in grid.levels],
        acceptance_rate=chain.acceptance_rate,
        final_loglik=_finite_or_none(chain.final_loglik),
    )


def _fit_ald(data: Dataset, taus, targets, seed: int, opts: FitOptions) -> FitResponse:
    levels = sorted(set(taus))
    for t in targets:
        for tau in t.taus:
            if tau not in levels:
                raise ContractError(
                    f"contrast level {tau:g} must be among the requested taus"
                )
    prior = PriorSpec.normal(1, data.p, sd=opts.prior_sd)
    chains = [
        ald_chain(data, t, prior, opts.ald_config(derive_seed(seed, i)))
        for i, t in enumerate(levels)
    ]
    # Chains for different levels are independent; stacking them level-wise
    # gives valid per-level summaries, and contrast rows then describe the
    # difference of independent posteriors.
    stacked = ChainOutput(
        draws=np.concatenate([c.draws for c in chains], axis=1),
        accept_count=sum(c.accept_count for c in chains),
        propose_count=sum(c.propose_count for c in chains),
        seed=seed,
        final_loglik=math.nan,
    )
    pseudo_grid = QuantileGrid(np.array(levels))
    triples = tuple(
        (data.names.index(t.name), t.tau_a, t.tau_b) for t in targets
    )
    summary = posterior_summaries(stacked, pseudo_grid, data.names, triples)
    return FitResponse(
        method="ald",
        draw_columns=_draw_columns(levels, data.names),
        draws=stacked.draws.reshape(stacked.n_draws, len(levels) * data.p).tolist(),
        summary=_table(summary),
        acceptance_rate=stacked.acceptance_rate,
    )


def _fit_pointwise(
    method: str, data: Dataset, taus, targets, seed: int,
    opts: FitOptions, bootstrap: int | None,
) -> FitResponse:
    levels = list(dict.fromkeys(taus))  # keep request order, drop repeats
    for t in targets:
        for tau in t.taus:
            if tau not in levels:
                raise ContractError(
                    f"contrast level {tau:g} must be among the requested taus"
                )
    if bootstrap is not None and method != "rq":
        raise ContractError("bootstrap standard errors are available for rq only")
    notes: list[str] = []
    fits = {}
    for t in levels:
        if method == "rq":
            fits[t] = rq_fit(data, t)
        else:
            fits[t] = wrq_fit(data, t, opts.delta_tau)
            if fits[t].fallback_unweighted:
                notes.append(f"ewrq fell back to unweighted fitting at tau={t:g}")
    ses: dict[float, np.ndarray] = {}
    if bootstrap is not None:
        for i, t in enumerate(levels):
            ses[t] = pair_bootstrap(data, t, bootstrap, derive_seed(seed, i))
    rows = []
    for t in levels:
        for c, name in enumerate(data.names):
            rows.append({
                "parameter": name,
                "level": t,
                "mean": float(fits[t].beta[c]),
                "sd": float(ses[t][c]) if t in ses else None,
                "q2.5": None, "q50": None, "q97.5": None,
            })
    for t in targets:
        col = data.names.index(t.name)
        diff = float(fits[t.tau_a].beta[col] - fits[t.tau_b].beta[col])
        rows.append({
            "parameter": f"{t.name}[{t.tau_a:g}]-[{t.tau_b:g}]",
            "level": None, "mean": diff, "sd": None,
            "q2.5": None, "q50": None, "q97.5": None,
        })
    summary = pd.DataFrame(rows)
    point = [float(fits[t].beta[c]) for t in levels for c in range(data.p)]
    return FitResponse(
        method=method,
        draw_columns=_draw_columns(levels, data.names),
        draws=[point],
        summary=_table(summary),
        notes=notes,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="lidqr", version=__version__)

    for exc_type in (ContractError, DataError, NumericalError):
        def handler(request: Request, exc: Exception, _t=exc_type):
            return JSONResponse(
                status_code=_ERROR_STATUS[_t],
                content={"detail": {"code": _ERROR_CODE[_t], "message": str(exc)}},
            )
        app.add_exception_handler(exc_type, handler)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/fit", response_model=FitResponse)
    def fit(req: FitRequest) -> FitResponse:
        data = req.data.to_dataset()
        taus = _validated_taus(req.taus)
        targets = _contrast_targets(req.contrasts, data.names)
        opts = req.options.to_fit_options()
        if req.method == "lid":
            return _fit_lid(data, taus, targets, req.seed, opts)
        if req.method == "ald":
            return _fit_ald(data, taus, targets, req.seed, opts)
        return _fit_pointwise(
            req.method, data, taus, targets, req.seed, opts, req.bootstrap
        )

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        spec = SimSpec(example=req.example, n=req.n, reps=req.reps, seed=req.seed)
        result = run_mse_study(
            spec, req.methods, _validated_taus(req.taus),
            contrasts=tuple(req.contrasts),
            options=req.options.to_fit_options(),
            threads=req.threads,
        )
        return SimulateResponse(table=_table(result.table), dropped=result.dropped)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        table = oob_coverage(
            req.data.to_dataset(), req.methods, _validated_taus(req.taus),
            test_fraction=req.test_fraction, seed=req.seed,
            options=req.options.to_fit_options(),
        )
        return EvaluateResponse(table=_table(table))

    return app


app = create_app()
