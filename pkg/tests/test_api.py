"""
Tests for the analysis HTTP API
"""
import pytest
from fastapi.testclient import TestClient

from app.main import app
from mdiqkd.io import load_published_key_params
from mdiqkd.models import cell_keys


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as test_client:
        yield test_client


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["service"] == "MDI-QKD Analysis"
    assert body["settings"]["optimizer_max_budget"] == 400
    assert "X-Processing-Time" in response.headers


def test_root_lists_endpoints(client):
    assert client.get("/").json()["endpoints"]["analyze"] == "/api/analyze"


def test_key_rate_with_published_parameters(client):
    params = load_published_key_params()["key_rate"]
    response = client.post("/api/key-rate", json=params)
    assert response.status_code == 200
    body = response.json()
    assert 9.3e-9 <= body["rate"] <= 10.3e-9
    assert 1570 <= body["key_length"] <= 1740


def test_key_rate_rejects_probability_above_one(client):
    params = dict(load_published_key_params()["key_rate"], e11_x_upper=1.5)
    assert client.post("/api/key-rate", json=params).status_code == 422


def test_analyze_published_tables(client):
    response = client.post("/api/analyze", json={"use_published_tables": True})
    assert response.status_code == 200
    report = response.json()["report"]
    assert set(report["bounds"]) == {"infinite_key", "finite_n_alpha"}
    assert "published_parameter_key_rate" in report
    e11 = float(report["bounds"]["finite_n_alpha"]["e11_x_upper"])
    assert 0.151 / 2.5 <= e11 <= 0.151 * 2.5


def test_analyze_supplied_cells(client):
    cells = [{"basis": b.value, "intensity_a": a.value, "intensity_b": i.value, "gain": 0.0, "qber": None}
             for b, a, i in cell_keys()]
    response = client.post("/api/analyze", json={"cells": cells})
    # All-zero tables leave no single-photon yield to certify
    assert response.status_code == 422
    assert response.json()["error_type"] in ("DecoyBoundError", "BoundValidityError")


@pytest.mark.parametrize("payload", [
    {},
    {"use_published_tables": True, "cells": []},
    {"cells": [{"basis": "Z", "intensity_a": "signal", "intensity_b": "signal", "gain": 1e-5, "qber": 0.01}]},
])
def test_analyze_needs_exactly_one_source(client, payload):
    assert client.post("/api/analyze", json=payload).status_code == 422


def test_expected_tallies(client):
    response = client.post("/api/expected-tallies", json={"channel": {"fiber_length_km": 0.0}})
    assert response.status_code == 200
    rows = response.json()["rows"]
    assert len(rows) == 18
    assert all(row["coincidences"] <= row["sent"] for row in rows)


def test_expected_tallies_rejects_bad_intensities(client):
    response = client.post("/api/expected-tallies", json={"protocol": {"mu": 0.1, "nu": 0.1}})
    assert response.status_code == 422
    assert response.json()["error_type"] == "ConfigValidationError"


def test_optimize_budget_limit(client):
    assert client.post("/api/optimize", json={"budget": 401}).status_code == 400


def test_optimize_collapsed_box(client):
    box = {name: [value, value] for name, value in
           {"mu": 0.3, "nu": 0.1, "omega": 0.01, "p_mu": 0.2, "p_nu": 0.45, "basis_probability_z": 0.5244}.items()}
    response = client.post("/api/optimize", json={"box": box, "budget": 3})
    assert response.status_code == 200
    body = response.json()
    assert body["evaluations"] == 1
    assert body["best_point"]["mu"] == 0.3
    assert body["best_rate"] > 0
