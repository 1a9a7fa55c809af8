"""Command-line client for the quantile-regression service.

The CLI does no numerics itself: it reads CSV files, builds a JSON request,
posts it to the service (an in-process app by default, or a remote server
via ``--server``), and writes the reply as CSV files plus a ``manifest.json``.
The manifest embeds the exact request, so ``lidqr rerun`` reproduces every
output byte-for-byte without needing the original input file.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import hashlib
import io
import json
import sys
from functools import wraps
from pathlib import Path

import click
import httpx
import numpy as np
import pandas as pd

from . import __version__
from .errors import ContractError, DataError, NumericalError

_ERROR_BY_CODE = {
    "contract": ContractError,
    "data": DataError,
    "numerical": NumericalError,
}
_EXIT_CODES = {ContractError: 2, DataError: 3, NumericalError: 4}


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_domain_errors(fn):
    """Translate domain exceptions into exit codes with one-line messages."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ContractError, DataError, NumericalError) as exc:
            _fail(_EXIT_CODES[type(exc)], str(exc))

    return wrapper


class ServiceClient:
    """Posts requests to an in-process app or, with --server, over HTTP."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._client.post(path, json=payload)
        except httpx.HTTPError as exc:
            _fail(1, f"cannot reach service: {exc}")
        if resp.status_code == 200:
            return resp.json()
        detail = resp.json().get("detail")
        if isinstance(detail, dict) and detail.get("code") in _ERROR_BY_CODE:
            raise _ERROR_BY_CODE[detail["code"]](detail.get("message", ""))
        if isinstance(detail, list) and detail:  # request-model validation
            first = detail[0]
            where = ".".join(str(part) for part in first.get("loc", [])[1:])
            raise ContractError(f"invalid request field {where}: {first.get('msg')}")
        raise NumericalError(f"service returned status {resp.status_code}")


# ---------------------------------------------------------------------------
# Local input handling
# ---------------------------------------------------------------------------

def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise click.UsageError(f"{flag} must be a comma-separated list of numbers, "
                               f"got {text!r}")
    if not values:
        raise click.UsageError(f"{flag} is empty")
    return values


def _parse_names(text: str, flag: str) -> list[str]:
    names = [tok.strip() for tok in text.split(",") if tok.strip()]
    if not names:
        raise click.UsageError(f"{flag} is empty")
    return names


def _read_table(path: str, response: str) -> tuple[dict, dict]:
    """Read a headered CSV into a request payload; returns (payload, input_info)."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file not found: {path}")
    raw = p.read_bytes()
    info = {"path": str(path), "sha256": hashlib.sha256(raw).hexdigest()}
    try:
        df = pd.read_csv(io.BytesIO(raw))
    except (pd.errors.ParserError, pd.errors.EmptyDataError,
            UnicodeDecodeError, ValueError) as exc:
        raise DataError(f"cannot parse CSV {path}: {exc}") from exc
    if response not in df.columns:
        raise DataError(f"response column {response!r} not found; "
                        f"columns are {list(df.columns)}")
    numeric = {}
    for col in df.columns:
        try:
            numeric[col] = pd.to_numeric(df[col], errors="raise").to_numpy(dtype=float)
        except (ValueError, TypeError) as exc:
            raise DataError(f"column {col!r} has non-numeric cells") from exc
        if not np.isfinite(numeric[col]).all():
            raise DataError(f"column {col!r} has missing or non-finite cells")
    covariates = [c for c in df.columns if c != response]
    if covariates:
        rows = np.column_stack([numeric[c] for c in covariates]).tolist()
    else:
        rows = [[] for _ in range(len(df))]
    payload = {"columns": covariates, "rows": rows,
               "response": numeric[response].tolist()}
    return payload, info


# ---------------------------------------------------------------------------
# Output writing
# ---------------------------------------------------------------------------

def _write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def _manifest(command: str, request: dict, seed: int,
              input_info: dict | None, outputs: list[str]) -> dict:
    return {
        "artifact": "lidqr",
        "version": __version__,
        "command": command,
        "command_line": sys.argv[1:],
        "seed": seed,
        "input": input_info,
        "request": request,
        "outputs": outputs,
    }


def _emit(out_dir: str, command: str, body_tables: dict[str, dict],
          manifest: dict) -> None:
    outdir = Path(out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for filename, table in body_tables.items():
        _write_csv(outdir / filename, table["columns"], table["rows"])
    _write_manifest(outdir / "manifest.json", manifest)
    names = ", ".join([*body_tables, "manifest.json"])
    click.echo(f"{command}: wrote {names} in {outdir}")


# ---------------------------------------------------------------------------
# Shared flags
# ---------------------------------------------------------------------------

def fit_flags(fn):
    """Sampler and estimator knobs shared by fit, simulate, and evaluate."""
    flags = [
        click.option("--m", type=int, default=15, show_default=True,
                     help="number of starting quantile levels (grid k/(m+1))"),
        click.option("--refinements", type=int, default=0, show_default=True,
                     help="times to halve every grid gap"),
        click.option("--prior-sd", type=float, default=10.0, show_default=True,
                     help="normal prior standard deviation per coefficient"),
        click.option("--iters", type=int, default=None,
                     help="sampler steps (default scales with model size)"),
        click.option("--burnin", type=int, default=None,
                     help="steps discarded before storing draws"),
        click.option("--thin", type=int, default=None,
                     help="store every k-th post-burn-in state"),
        click.option("--proposal-sd", type=float, default=None,
                     help="proposal scale (default from residual spread)"),
        click.option("--tail-sd", type=float, default=None,
                     help="half-normal tail scale (default from residual spread)"),
        click.option("--delta-tau", type=float, default=0.05, show_default=True,
                     help="level offset for density-based regression weights"),
    ]
    for flag in reversed(flags):
        fn = flag(fn)
    return fn


def _options_payload(m, refinements, prior_sd, iters, burnin, thin,
                     proposal_sd, tail_sd, delta_tau) -> dict:
    return {
        "m": m, "refinements": refinements, "prior_sd": prior_sd,
        "iters": iters, "burnin": burnin, "thin": thin,
        "proposal_sd": proposal_sd, "tail_sd": tail_sd, "delta_tau": delta_tau,
        # --iters/--burnin drive whichever sampler the chosen method runs
        "ald_iters": iters if iters is not None else 5000,
        "ald_burnin": burnin if burnin is not None else 2500,
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
@click.option("--server", default=None, metavar="URL",
              help="base URL of a running service (default: run in-process)")
@click.option("--threads", type=int, default=None, envvar="LID_BQR_THREADS",
              help="worker processes for simulation studies "
                   "[env: LID_BQR_THREADS; default 1]")
@click.pass_context
def main(ctx, server, threads):
    """Bayesian multi-quantile regression: fit, simulate, evaluate."""
    ctx.obj = {"server": server, "threads": threads if threads else 1}


@main.command("fit")
@click.option("--input", "input_path", required=True, metavar="PATH",
              help="training data CSV (headered, numeric)")
@click.option("--response", default="y", show_default=True,
              help="name of the response column")
@click.option("--method", type=click.Choice(["lid", "rq", "ewrq", "ald"]),
              default="lid", show_default=True)
@click.option("--taus", "taus_text", default="0.25,0.5,0.75", show_default=True,
              metavar="LIST", help="comma-separated quantile levels")
@fit_flags
@click.option("--bootstrap", type=click.IntRange(min=1), default=None, metavar="B",
              help="pair-bootstrap replicates for rq standard errors")
@click.option("--contrast", "contrasts", multiple=True, metavar="SPEC",
              help='cross-level difference, e.g. "x1@0.75-x1@0.5" (repeatable)')
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", default=".", show_default=True, metavar="DIR")
@click.pass_obj
@handle_domain_errors
def cmd_fit(obj, input_path, response, method, taus_text, m, refinements,
            prior_sd, iters, burnin, thin, proposal_sd, tail_sd, delta_tau,
            bootstrap, contrasts, seed, out_dir):
    """Fit one method to a CSV dataset; write draws.csv and summary.csv."""
    data_payload, input_info = _read_table(input_path, response)
    request = {
        "data": data_payload,
        "method": method,
        "taus": _parse_floats(taus_text, "--taus"),
        "contrasts": list(contrasts),
        "seed": seed,
        "bootstrap": bootstrap,
        "options": _options_payload(m, refinements, prior_sd, iters, burnin,
                                    thin, proposal_sd, tail_sd, delta_tau),
    }
    body = ServiceClient(obj["server"]).post("/fit", request)
    for note in body["notes"]:
        click.echo(f"note: {note}", err=True)
    _emit(out_dir, "fit",
          {"draws.csv": {"columns": body["draw_columns"], "rows": body["draws"]},
           "summary.csv": body["summary"]},
          _manifest("fit", request, seed, input_info,
                    ["draws.csv", "summary.csv"]))


@main.command("simulate")
@click.option("--example", type=click.IntRange(1, 2), default=1, show_default=True,
              help="synthetic design to replicate")
@click.option("--n", type=click.IntRange(min=2), default=100, show_default=True,
              help="observations per replicate")
@click.option("--reps", type=click.IntRange(min=1), default=20, show_default=True,
              help="number of replicates")
@click.option("--methods", "methods_text", default="rq,lid", show_default=True,
              metavar="LIST", help="comma-separated method names")
@click.option("--taus", "taus_text", default="0.5", show_default=True,
              metavar="LIST", help="comma-separated quantile levels to score")
@fit_flags
@click.option("--contrast", "contrasts", multiple=True, metavar="SPEC",
              help="extra scored target, e.g. \"x1@0.75-x1@0.5\" (repeatable)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", default=".", show_default=True, metavar="DIR")
@click.pass_obj
@handle_domain_errors
def cmd_simulate(obj, example, n, reps, methods_text, taus_text, m, refinements,
                 prior_sd, iters, burnin, thin, proposal_sd, tail_sd, delta_tau,
                 contrasts, seed, out_dir):
    """Run a replicated accuracy study; write mse.csv."""
    request = {
        "example": example, "n": n, "reps": reps,
        "methods": _parse_names(methods_text, "--methods"),
        "taus": _parse_floats(taus_text, "--taus"),
        "contrasts": list(contrasts),
        "seed": seed,
        "threads": obj["threads"],
        "options": _options_payload(m, refinements, prior_sd, iters, burnin,
                                    thin, proposal_sd, tail_sd, delta_tau),
    }
    body = ServiceClient(obj["server"]).post("/simulate", request)
    for method, count in body["dropped"].items():
        if count:
            click.echo(f"note: {method} failed on {count} replicate(s)", err=True)
    _emit(out_dir, "simulate", {"mse.csv": body["table"]},
          _manifest("simulate", request, seed, None, ["mse.csv"]))


@main.command("evaluate")
@click.option("--input", "input_path", required=True, metavar="PATH",
              help="data CSV to split and score")
@click.option("--response", default="y", show_default=True,
              help="name of the response column")
@click.option("--methods", "methods_text", default="rq,lid", show_default=True,
              metavar="LIST", help="comma-separated method names")
@click.option("--taus", "taus_text", default="0.1,0.25,0.5,0.75,0.9",
              show_default=True, metavar="LIST")
@click.option("--test-fraction", type=float, default=0.1, show_default=True,
              help="fraction of rows held out for scoring")
@fit_flags
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", default=".", show_default=True, metavar="DIR")
@click.pass_obj
@handle_domain_errors
def cmd_evaluate(obj, input_path, response, methods_text, taus_text,
                 test_fraction, m, refinements, prior_sd, iters, burnin, thin,
                 proposal_sd, tail_sd, delta_tau, seed, out_dir):
    """Score held-out quantile coverage; write coverage.csv."""
    data_payload, input_info = _read_table(input_path, response)
    request = {
        "data": data_payload,
        "methods": _parse_names(methods_text, "--methods"),
        "taus": _parse_floats(taus_text, "--taus"),
        "test_fraction": test_fraction,
        "seed": seed,
        "options": _options_payload(m, refinements, prior_sd, iters, burnin,
                                    thin, proposal_sd, tail_sd, delta_tau),
    }
    body = ServiceClient(obj["server"]).post("/evaluate", request)
    _emit(out_dir, "evaluate", {"coverage.csv": body["table"]},
          _manifest("evaluate", request, seed, input_info, ["coverage.csv"]))


_OUTPUT_ENDPOINTS = {"fit": "/fit", "simulate": "/simulate", "evaluate": "/evaluate"}


@main.command("rerun")
@click.option("--manifest", "manifest_path", required=True, metavar="PATH",
              help="manifest.json from a previous run")
@click.option("--out", "out_dir", default=None, metavar="DIR",
              help="output directory (default: the manifest's directory)")
@click.pass_obj
@handle_domain_errors
def cmd_rerun(obj, manifest_path, out_dir):
    """Re-execute a recorded run; outputs are reproduced byte-for-byte."""
    p = Path(manifest_path)
    if not p.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"cannot parse manifest {manifest_path}: {exc}") from exc
    command = manifest.get("command")
    if command not in _OUTPUT_ENDPOINTS or "request" not in manifest:
        raise DataError(f"{manifest_path} is not a usable run manifest")
    body = ServiceClient(obj["server"]).post(_OUTPUT_ENDPOINTS[command],
                                             manifest["request"])
    if command == "fit":
        tables = {"draws.csv": {"columns": body["draw_columns"],
                                "rows": body["draws"]},
                  "summary.csv": body["summary"]}
    elif command == "simulate":
        tables = {"mse.csv": body["table"]}
    else:
        tables = {"coverage.csv": body["table"]}
    _emit(out_dir if out_dir else str(p.parent), command, tables, manifest)


if __name__ == "__main__":
    main()
