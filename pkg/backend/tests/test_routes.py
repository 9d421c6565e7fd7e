# backend/tests/test_routes.py
import pytest
from fastapi.testclient import TestClient

from main import app
from routes import estimate_routes, sweep_routes
from services.errors import DegenerateSignalError, DomainError, SingularSystemError

client = TestClient(app)

SMALL = {"scenario": {"n_antennas": 16, "n_subarrays": 4}, "n_slots": 2, "n_rf": 4, "seed": 1}


def test_root_and_health():
    root = client.get("/")
    assert root.status_code == 200
    assert "/estimate" in root.json()["endpoints"]
    health = client.get("/health")
    assert health.json()["status"] == "healthy"


def test_estimate_small_instance():
    response = client.post("/estimate", json={**SMALL, "estimators": ["assbl", "dft_ssbl", "oracle_ls"]})
    assert response.status_code == 200
    body = response.json()
    assert body["n_antennas"] == 16
    assert body["n_measurements"] == 8
    assert [r["name"] for r in body["results"]] == ["assbl", "dft_ssbl", "oracle_ls"]
    assbl, dft, oracle = body["results"]
    assert assbl["status"] == "ok"
    assert assbl["diagnostics"]
    assert dft["refined_distances"] == [None, None]
    assert oracle["nmse_db"] < 0


def test_estimate_without_diagnostics():
    response = client.post("/estimate", json={**SMALL, "estimators": ["assbl"], "include_diagnostics": False})
    assert response.status_code == 200
    assert response.json()["results"][0]["diagnostics"] == []


@pytest.mark.parametrize("body", [
    {"scenario": {"n_antennas": 16, "n_subarrays": 5}},
    {"estimators": ["music"]},
    {"n_slots": 0},
])
def test_invalid_requests_rejected(body):
    assert client.post("/estimate", json=body).status_code == 422


@pytest.mark.parametrize("error, status", [
    (DomainError("bad angle"), 400),
    (DegenerateSignalError("zero channel"), 422),
    (SingularSystemError("singular"), 500),
])
def test_service_errors_mapped(monkeypatch, error, status):
    def failing(*args, **kwargs):
        raise error

    monkeypatch.setattr(estimate_routes, "estimate_instance", failing)
    response = client.post("/estimate", json=SMALL)
    assert response.status_code == status
    assert str(error) in response.json()["detail"]


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setattr(sweep_routes, "DEFAULT_OUTPUT_DIR", str(tmp_path))
    return tmp_path


def test_sweep_endpoint(output_root):
    response = client.post("/sweep", json={
        "axis": "snr",
        "n_trials": 1,
        "snr_grid": [10.0],
        "seed": 3,
        "output_dir": "run1",
    })
    assert response.status_code == 200
    body = response.json()
    assert {row["estimator"] for row in body["summary"]} == {"assbl", "polar_omp", "oracle_ls"}
    assert body["trials_csv"].endswith("trials.csv")
    assert (output_root / "run1" / "manifest.json").exists()


def test_sweep_to_unwritable_directory(output_root):
    (output_root / "file").write_text("x")
    response = client.post("/sweep", json={"n_trials": 1, "snr_grid": [10.0], "output_dir": "file/out"})
    assert response.status_code == 500


@pytest.mark.parametrize("requested", ["../outside", "/tmp/elsewhere", "run/../../outside"])
def test_sweep_output_dir_confined(output_root, monkeypatch, requested):
    calls = []
    monkeypatch.setattr(sweep_routes, "sweep", lambda *a, **k: calls.append(a))
    response = client.post("/sweep", json={"n_trials": 1, "snr_grid": [10.0], "output_dir": requested})
    assert response.status_code == 400
    assert calls == []


def test_sweep_output_dir_resolution(output_root):
    assert sweep_routes.resolve_output_dir(None) == output_root.resolve()
    assert sweep_routes.resolve_output_dir("a/b") == output_root.resolve() / "a" / "b"
    assert sweep_routes.resolve_output_dir("a/../c") == output_root.resolve() / "c"
