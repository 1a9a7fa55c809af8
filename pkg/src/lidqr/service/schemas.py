"""Request and response models for the HTTP service.

Datasets travel inline as JSON (covariate columns plus a response vector), so
a recorded request is self-contained: replaying it needs no access to the
original CSV file.  All numeric payloads are plain floats, which survive a
JSON round trip exactly and keep replayed outputs byte-identical.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from ..core import Dataset
from ..errors import DataError
from ..simulate import FitOptions

Cell = str | int | float | None


class TablePayload(BaseModel):
    """A small numeric dataset: named covariate columns plus a response.

    ``columns`` excludes the intercept, which the service adds itself; an
    intercept-only design is ``columns=[]`` with one empty list per row.
    """

    columns: list[str] = Field(default_factory=list)
    rows: list[list[float]]
    response: list[float]

    def to_dataset(self) -> Dataset:
        n = len(self.response)
        if n == 0:
            raise DataError("dataset has no rows")
        if len(self.rows) != n:
            raise DataError(
                f"got {len(self.rows)} covariate rows for {n} response values"
            )
        p = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != p:
                raise DataError(
                    f"row {i} has {len(row)} values; expected {p}"
                )
        X = np.ones((n, 1 + p))
        if p:
            X[:, 1:] = np.asarray(self.rows, dtype=float)
        names = ("intercept", *self.columns)
        return Dataset(X=X, Y=np.asarray(self.response, dtype=float), names=names)


class FitOptionsModel(BaseModel):
    """Tuning knobs shared by all fitting methods; None means use defaults."""

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

    def to_fit_options(self) -> FitOptions:
        return FitOptions(
            m=self.m,
            refinements=self.refinements,
            prior_sd=self.prior_sd,
            iters=self.iters,
            burnin=self.burnin,
            thin=self.thin,
            proposal_sd=self.proposal_sd,
            tail_sd=self.tail_sd,
            delta_tau=self.delta_tau,
            ald_iters=self.ald_iters,
            ald_burnin=self.ald_burnin,
        )


class TableModel(BaseModel):
    """A generic table: column labels plus rows of JSON-safe cells."""

    columns: list[str]
    rows: list[list[Cell]]


class FitRequest(BaseModel):
    data: TablePayload
    method: Literal["lid", "rq", "ewrq", "ald"] = "lid"
    taus: list[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75])
    contrasts: list[str] = Field(default_factory=list)
    seed: int = 0
    bootstrap: int | None = None
    options: FitOptionsModel = Field(default_factory=FitOptionsModel)


class FitResponse(BaseModel):
    method: str
    draw_columns: list[str]
    draws: list[list[float]]
    summary: TableModel
    grid_levels: list[float] | None = None
    acceptance_rate: float | None = None
    final_loglik: float | None = None
    notes: list[str] = Field(default_factory=list)


class SimulateRequest(BaseModel):
    example: int = 1
    n: int = 100
    reps: int = 20
    methods: list[str] = Field(default_factory=lambda: ["rq", "lid"])
    taus: list[float] = Field(default_factory=lambda: [0.5])
    contrasts: list[str] = Field(default_factory=list)
    seed: int = 0
    threads: int = 1
    options: FitOptionsModel = Field(default_factory=FitOptionsModel)


class SimulateResponse(BaseModel):
    table: TableModel
    dropped: dict[str, int] = Field(default_factory=dict)


class EvaluateRequest(BaseModel):
    data: TablePayload
    methods: list[str] = Field(default_factory=lambda: ["rq", "lid"])
    taus: list[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75, 0.9])
    test_fraction: float = 0.1
    seed: int = 0
    options: FitOptionsModel = Field(default_factory=FitOptionsModel)


class EvaluateResponse(BaseModel):
    table: TableModel


class HealthResponse(BaseModel):
    status: str
    version: str
