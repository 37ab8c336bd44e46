"""HTTP service behavior through the in-process test client."""

import json
import os
import time

import pytest
from fastapi.testclient import TestClient

import spglab
from spglab.service.app import create_app


@pytest.fixture
def client(tmp_path, monkeypatch):
    # keep default out/cache roots inside the test sandbox
    monkeypatch.setenv("SPG_OUT", str(tmp_path / "out-root"))
    with TestClient(create_app()) as c:
        yield c


def test_health(client):
    body = client.get("/health").json()
    assert body == {"status": "ok", "version": spglab.__version__}


def test_verify_endpoint(client):
    body = client.post("/verify", json={}).json()
    assert body["ok"] is True
    assert len(body["suites"]) == 5
    assert all(row["ok"] for row in body["suites"])
    assert body["summary"]["patterns_checked"] == 30

    small = client.post("/verify", json={"max_horizon": 2}).json()
    assert small["summary"]["max_horizon"] == 2
    assert client.post("/verify", json={"max_horizon": 0}).status_code == 422
    assert client.post("/verify", json={"max_horizon": 9}).status_code == 422


def test_config_check(client, tiny_config_text):
    body = client.post("/config/check", json={"text": tiny_config_text}).json()
    assert body["ok"] is True and body["error"] is None
    assert "[task]" in body["rendered"]

    retrain = client.post("/config/check", json={"text": tiny_config_text,
                                                 "mode": "retrain"}).json()
    assert retrain["ok"] is True
    assert "count = 3" in retrain["rendered"]
    assert "variant = hpo-dropout" in retrain["rendered"]

    bad = client.post("/config/check",
                      json={"text": "[train]\nlr = fast\n"}).json()
    assert bad["ok"] is False
    assert "cannot parse value 'fast'" in bad["error"]
    assert bad["rendered"] is None


def test_run_baseline_inline(client, tmp_path, tiny_config_text):
    out = str(tmp_path / "svc-baseline")
    body = client.post("/runs", json={"mode": "baseline",
                                      "config_text": tiny_config_text,
                                      "out_dir": out}).json()
    assert body["state"] == "done"
    assert body["run_id"] == "run-0001"
    assert body["summary"]["kind"] == "baseline"
    assert os.path.exists(os.path.join(out, "summary.json"))

    listing = client.get("/runs").json()["runs"]
    assert [r["run_id"] for r in listing] == ["run-0001"]
    fetched = client.get("/runs/run-0001").json()
    assert fetched["state"] == "done"
    assert fetched["summary"] == body["summary"]
    assert client.get("/runs/run-9999").status_code == 404


def test_run_seed_override(client, tmp_path, tiny_config_text):
    out = str(tmp_path / "svc-seeded")
    body = client.post("/runs", json={"mode": "baseline",
                                      "config_text": tiny_config_text,
                                      "seed": 7, "out_dir": out}).json()
    assert body["summary"]["seed"] == 7


def test_run_background_polling(client, tmp_path, tiny_config_text):
    out = str(tmp_path / "svc-bg")
    body = client.post("/runs", json={"mode": "baseline",
                                      "config_text": tiny_config_text,
                                      "out_dir": out, "wait": False}).json()
    assert body["state"] in ("running", "done")
    run_id = body["run_id"]
    deadline = time.time() + 60
    while time.time() < deadline:
        status = client.get(f"/runs/{run_id}").json()
        if status["state"] != "running":
            break
        time.sleep(0.05)
    assert status["state"] == "done", status
    assert status["summary"]["test_accuracy"] >= 0.0


def test_run_config_error_is_400(client):
    resp = client.post("/runs", json={"mode": "baseline",
                                      "config_text": "[train]\nepochs = -3\n"})
    assert resp.status_code == 400
    assert "epoch" in resp.json()["detail"]
    # a config that never parsed creates no registry entry
    assert client.get("/runs").json()["runs"] == []


def test_run_failure_recorded(client, tmp_path, tiny_config_text):
    text = tiny_config_text + "\nbaseline = " + str(tmp_path / "no-such.ckpt")
    resp = client.post("/runs", json={"mode": "retrain", "config_text": text,
                                      "out_dir": str(tmp_path / "svc-fail")})
    assert resp.status_code == 400
    (status,) = client.get("/runs").json()["runs"]
    assert status["state"] == "failed"
    assert status["error"]


def test_report_endpoint(client, tmp_path, tiny_config_text):
    out = str(tmp_path / "svc-for-report")
    client.post("/runs", json={"mode": "baseline",
                               "config_text": tiny_config_text,
                               "out_dir": out})
    body = client.post("/report", json={"run_dirs": [out]}).json()
    assert "test accuracy" in body["text"]
    assert body["data"]["schema"] == 1
    assert body["missing"] == []

    report_out = str(tmp_path / "svc-report-out")
    client.post("/report", json={"run_dirs": [out], "out_dir": report_out})
    assert os.path.exists(os.path.join(report_out, "report.json"))

    bad = client.post("/report", json={"run_dirs": [str(tmp_path / "nope")]})
    assert bad.status_code == 400
    assert client.post("/report", json={"run_dirs": []}).status_code == 422


def test_openapi_names_every_route(client):
    paths = client.get("/openapi.json").json()["paths"]
    assert {"/health", "/verify", "/config/check", "/runs", "/runs/{run_id}",
            "/report"} <= set(paths)
