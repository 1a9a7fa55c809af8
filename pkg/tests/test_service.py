"""HTTP layer tests: request validation, error mapping, determinism."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from lidqr import __version__
from lidqr.errors import NumericalError
from lidqr.service import create_app


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


def _line_payload():
    # y = 1 + 2x exactly: any quantile plane is the line itself.
    x = [0.0, 1.0, 2.0, 3.0, 4.0]
    return {
        "columns": ["x1"],
        "rows": [[v] for v in x],
        "response": [1.0 + 2.0 * v for v in x],
    }


def _noisy_payload(n=40, seed=5):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 2.0, n)
    y = 1.0 + x + (0.5 + 0.2 * x) * rng.standard_normal(n)
    return {
        "columns": ["x1"],
        "rows": [[float(v)] for v in x],
        "response": [float(v) for v in y],
    }


QUICK = {"m": 3, "iters": 900, "burnin": 300, "thin": 3,
         "ald_iters": 400, "ald_burnin": 200}


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "version": __version__}


def test_fit_rq_exact_line(client):
    r = client.post("/fit", json={"data": _line_payload(), "method": "rq",
                                  "taus": [0.5]})
    assert r.status_code == 200
    body = r.json()
    assert body["method"] == "rq"
    assert body["draw_columns"] == ["0.5:intercept", "0.5:x1"]
    assert body["draws"] == [[pytest.approx(1.0), pytest.approx(2.0)]]
    assert body["summary"]["columns"] == [
        "parameter", "level", "mean", "sd", "q2.5", "q50", "q97.5"]
    by_param = {row[0]: row for row in body["summary"]["rows"]}
    assert by_param["intercept"][2] == pytest.approx(1.0)
    assert by_param["x1"][2] == pytest.approx(2.0)
    assert by_param["x1"][3] is None  # no bootstrap requested
    assert body["grid_levels"] is None


def test_fit_rq_bootstrap_sd(client):
    r = client.post("/fit", json={"data": _noisy_payload(), "method": "rq",
                                  "taus": [0.5], "bootstrap": 50, "seed": 3})
    assert r.status_code == 200
    by_param = {row[0]: row for row in r.json()["summary"]["rows"]}
    assert by_param["x1"][3] > 0.0


def test_fit_bootstrap_rejected_for_other_methods(client):
    r = client.post("/fit", json={"data": _noisy_payload(), "method": "ewrq",
                                  "taus": [0.5], "bootstrap": 20})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "contract"


def test_fit_ewrq_fallback_note_on_noiseless_line(client):
    r = client.post("/fit", json={"data": _line_payload(), "method": "ewrq",
                                  "taus": [0.5]})
    assert r.status_code == 200
    assert any("unweighted" in note for note in r.json()["notes"])


def test_fit_lid_round_trip(client):
    req = {"data": _noisy_payload(), "method": "lid", "taus": [0.25, 0.5, 0.75],
           "contrasts": ["x1@0.75-x1@0.5"], "seed": 11, "options": QUICK}
    r = client.post("/fit", json=req)
    assert r.status_code == 200
    body = r.json()
    assert body["grid_levels"] == [0.25, 0.5, 0.75]
    assert body["draw_columns"] == [
        "0.25:intercept", "0.25:x1", "0.5:intercept", "0.5:x1",
        "0.75:intercept", "0.75:x1"]
    draws = np.array(body["draws"])
    assert draws.shape[1] == 6 and draws.shape[0] > 0
    # every stored draw respects the ordering constraint on the training rows
    payload = _noisy_payload()
    X = np.column_stack([np.ones(len(payload["response"])),
                         [row[0] for row in payload["rows"]]])
    for flat in draws[:: max(1, len(draws) // 10)]:
        Q = X @ flat.reshape(3, 2).T
        assert np.all(np.diff(Q, axis=1) > 0)
    labels = [row[0] for row in body["summary"]["rows"]]
    assert labels.count("intercept") == 3 and labels.count("x1") == 3
    assert "x1[0.75]-[0.5]" in labels
    assert 0.0 < body["acceptance_rate"] < 1.0
    assert body["final_loglik"] is not None


def test_fit_lid_off_grid_tau_is_contract_error(client):
    r = client.post("/fit", json={"data": _noisy_payload(), "method": "lid",
                                  "taus": [0.3], "options": QUICK})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "contract"


def test_fit_ragged_rows_is_data_error(client):
    bad = _line_payload()
    bad["rows"] = bad["rows"][:-1]
    r = client.post("/fit", json={"data": bad, "method": "rq", "taus": [0.5]})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "data"


def test_fit_unknown_method_is_request_validation_error(client):
    r = client.post("/fit", json={"data": _line_payload(), "method": "mystery",
                                  "taus": [0.5]})
    assert r.status_code == 422


def test_fit_unknown_contrast_name(client):
    r = client.post("/fit", json={"data": _noisy_payload(), "method": "rq",
                                  "taus": [0.25, 0.75],
                                  "contrasts": ["zz@0.75-zz@0.25"]})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "contract"


def test_fit_ald_summarizes_each_level(client):
    r = client.post("/fit", json={"data": _noisy_payload(), "method": "ald",
                                  "taus": [0.25, 0.75],
                                  "contrasts": ["x1@0.75-x1@0.25"],
                                  "seed": 2, "options": QUICK})
    assert r.status_code == 200
    body = r.json()
    levels = {row[1] for row in body["summary"]["rows"] if row[1] is not None}
    assert levels == {0.25, 0.75}
    assert "x1[0.75]-[0.25]" in [row[0] for row in body["summary"]["rows"]]
    assert body["draw_columns"][:2] == ["0.25:intercept", "0.25:x1"]
    assert 0.0 < body["acceptance_rate"] < 1.0


def test_fit_ald_contrast_must_use_requested_levels(client):
    r = client.post("/fit", json={"data": _noisy_payload(), "method": "ald",
                                  "taus": [0.25, 0.75],
                                  "contrasts": ["x1@0.9-x1@0.25"],
                                  "options": QUICK})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "contract"


def test_simulate_table_layout_and_determinism(client):
    req = {"example": 1, "n": 30, "reps": 2, "methods": ["rq", "ewrq"],
           "taus": [0.5], "contrasts": [], "seed": 7, "options": QUICK}
    r1 = client.post("/simulate", json=req)
    r2 = client.post("/simulate", json=req)
    assert r1.status_code == 200
    body = r1.json()
    assert body["table"]["columns"] == ["method", "target", "n_times_mse", "se"]
    methods = {row[0] for row in body["table"]["rows"]}
    assert methods == {"rq", "ewrq"}
    assert body["dropped"] == {"rq": 0, "ewrq": 0}
    assert r1.text == r2.text  # byte-identical replies for equal requests


def test_simulate_rejects_unknown_method(client):
    r = client.post("/simulate", json={"example": 1, "n": 20, "reps": 1,
                                       "methods": ["nope"], "taus": [0.5]})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "contract"


def test_evaluate_coverage_table(client):
    r = client.post("/evaluate", json={"data": _noisy_payload(n=60),
                                       "methods": ["rq"], "taus": [0.25, 0.75],
                                       "test_fraction": 0.2, "seed": 1})
    assert r.status_code == 200
    table = r.json()["table"]
    assert table["columns"] == ["method", "tau", "coverage", "n_test"]
    assert len(table["rows"]) == 2
    for row in table["rows"]:
        assert 0.0 <= row[2] <= 1.0
        assert row[3] == 12


def test_evaluate_bad_fraction(client):
    r = client.post("/evaluate", json={"data": _noisy_payload(),
                                       "methods": ["rq"], "taus": [0.5],
                                       "test_fraction": 1.5})
    assert r.status_code == 400
    assert r.json()["detail"]["code"] == "contract"


def test_numerical_error_maps_to_500(client, monkeypatch):
    import importlib

    # the package re-exports the FastAPI instance as ``app``, which shadows
    # the submodule on plain attribute access; go through the module system
    service_app = importlib.import_module("lidqr.service.app")

    def boom(*args, **kwargs):
        raise NumericalError("solver failed")

    monkeypatch.setattr(service_app, "rq_fit", boom)
    r = client.post("/fit", json={"data": _line_payload(), "method": "rq",
                                  "taus": [0.5]})
    assert r.status_code == 500
    assert r.json()["detail"]["code"] == "numerical"
