import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from nvlab import config as cfgmod
from nvlab import spin
from nvlab.service import create_app


@pytest.fixture()
def client(tmp_path):
    cfg = cfgmod.default_config()
    cfg["noise"] = {"drift_um_per_sqrt_min": 0.0}
    app = create_app(cfg, tmp_path / "data")
    with TestClient(app) as c:
        c.service = app.state.service
        yield c


def wait_for(client, job_id, timeout=60.0):
    t0 = time.time()
    while time.time() - t0 < timeout:
        state = client.get(f"/jobs/{job_id}").json()["state"]
        if state in ("done", "cancelled", "failed"):
            return client.get(f"/jobs/{job_id}").json()
        time.sleep(0.02)
    raise TimeoutError(f"job {job_id} did not finish")


def rabi_spec(client, durations=None, reps=150000, seed=3):
    snap = client.get("/apparatus").json()
    app = client.service.apparatus
    table = spin.transition_frequencies(
        app.spin_params_for(app.sample.sites[0]))
    durations = durations or np.arange(0.0, 152e-9, 8e-9).tolist()
    return {"kind": "rabi",
            "parameters": {"frequency_hz": table.f_minus,
                           "rabi_hz": 13.16e6, "durations_s": durations},
            "repetitions": reps, "seed": seed}


def test_status_idle(client):
    out = client.get("/status").json()
    assert out["running_job"] is None
    assert out["queued"] == []
    assert "stage" in out["apparatus"]


def test_apparatus_roundtrip(client):
    out = client.put("/apparatus", json={
        "stage": {"position_um": [100.0, 100.0, 5.0]},
        "magnet": {"preset": "odmr_28g"},
        "laser": {"power_uw": 270.0, "mode": "pattern"},
        "mw": {"frequency_hz": 2.7917e9, "rabi_hz": 13.16e6},
    })
    assert out.status_code == 200
    snap = out.json()
    assert snap["stage"]["position_um"] == [100.0, 100.0, 5.0]
    assert snap["mw"]["rabi_override_hz"] == 13.16e6


def test_unknown_fields_rejected(client):
    out = client.put("/apparatus", json={"stage": {
        "position_um": [1, 2, 3], "warp_factor": 9}})
    assert out.status_code == 400
    out2 = client.post("/jobs", json={"kind": "rabi", "bogus": 1})
    assert out2.status_code == 400


def test_job_lifecycle_and_fit(client):
    client.put("/apparatus", json={
        "stage": {"position_um": [100.0, 100.0, 5.0]},
        "magnet": {"preset": "odmr_28g"}})
    out = client.post("/jobs", json=rabi_spec(client))
    assert out.status_code == 200
    job_id = out.json()["id"]
    record = wait_for(client, job_id)
    assert record["state"] == "done"
    dataset_id = record["dataset_id"]

    ds = client.get(f"/datasets/{dataset_id}").json()
    assert ds["kind"] == "rabi"
    assert len(ds["axis"]) == len(ds["signal"])

    csv = client.get(f"/datasets/{dataset_id}", params={"format": "csv"})
    assert csv.headers["content-type"].startswith("text/csv")
    assert csv.text.splitlines()[0].startswith("mw_duration")

    fit = client.post("/fit", json={"model": "rabi",
                                    "dataset_id": dataset_id}).json()
    assert fit["converged"]
    pi_ns = 1e9 / (2 * abs(fit["params"]["frequency"]))
    assert abs(pi_ns - 38.0) < 1.5


def test_invalid_spec_gets_400(client):
    out = client.post("/jobs", json={"kind": "rabi", "parameters": {
        "durations_s": []}})
    assert out.status_code == 400


def test_unknown_ids_get_404(client):
    assert client.get("/jobs/job-9999").status_code == 404
    assert client.get("/datasets/feedfeed").status_code == 404
    assert client.post("/fit", json={
        "model": "rabi", "dataset_id": "feedfeed"}).status_code == 404
    assert client.post("/fit", json={
        "model": "nope", "dataset_id": "feedfeed"}).status_code == 400


def test_busy_apparatus_conflicts(client):
    client.put("/apparatus", json={
        "stage": {"position_um": [100.0, 100.0, 5.0]}})
    spec = rabi_spec(client, reps=400000,
                     durations=np.arange(0.0, 400e-9, 4e-9).tolist())
    job_id = client.post("/jobs", json=spec).json()["id"]
    got_409 = False
    for _ in range(300):
        out = client.put("/apparatus", json={
            "laser": {"power_uw": 100.0}})
        if out.status_code == 409:
            got_409 = True
            break
        time.sleep(0.005)
    wait_for(client, job_id)
    assert got_409


def test_cancel_midway_yields_truncated_dataset(client):
    client.put("/apparatus", json={
        "stage": {"position_um": [100.0, 100.0, 5.0]}})
    spec = rabi_spec(client, reps=500000,
                     durations=np.arange(0.0, 600e-9, 4e-9).tolist(),
                     seed=9)
    job_id = client.post("/jobs", json=spec).json()["id"]
    while client.get(f"/jobs/{job_id}").json()["progress"] < 0.05:
        time.sleep(0.01)
    client.delete(f"/jobs/{job_id}")
    record = wait_for(client, job_id)
    assert record["state"] == "cancelled"
    ds = client.get(f"/datasets/{record['dataset_id']}").json()
    assert 0 < len(ds["signal"]) < len(spec["parameters"]["durations_s"])
    assert ds["metadata"]["cancelled"] is True


def test_live_stream_monotone_and_terminal(client):
    client.put("/apparatus", json={
        "stage": {"position_um": [100.0, 100.0, 5.0]}})
    spec = rabi_spec(client, reps=100000,
                     durations=np.arange(0.0, 152e-9, 8e-9).tolist(),
                     seed=4)
    job_id = client.post("/jobs", json=spec).json()["id"]
    events = []
    with client.stream("GET", "/scan/live", params={"job": job_id}) as r:
        for line in r.iter_lines():
            ev = json.loads(line)
            events.append(ev)
            if ev.get("type") == "state" and ev.get("payload") in (
                    "done", "cancelled", "failed"):
                break
    indices = [e["payload"]["index"] for e in events
               if e.get("type") == "point"]
    assert indices == sorted(indices)
    assert events[-1]["payload"] == "done"
    wait_for(client, job_id)


def test_queued_jobs_serialize(client):
    client.put("/apparatus", json={
        "stage": {"position_um": [100.0, 100.0, 5.0]}})
    ids = [client.post("/jobs", json=rabi_spec(client, seed=s,
                                               reps=50000)).json()["id"]
           for s in (11, 12)]
    records = [wait_for(client, j) for j in ids]
    assert all(r["state"] == "done" for r in records)
    # same spec except seed: distinct datasets
    assert records[0]["dataset_id"] != records[1]["dataset_id"]


def test_auth_token_enforced(tmp_path):
    cfg = cfgmod.default_config()
    app = create_app(cfg, tmp_path / "data", auth_token="sesame")
    with TestClient(app) as client:
        assert client.get("/status").status_code == 200  # reads open
        out = client.put("/apparatus", json={
            "laser": {"power_uw": 100.0}})
        assert out.status_code == 401
        ok = client.put("/apparatus", json={
            "laser": {"power_uw": 100.0}},
            headers={"Authorization": "Bearer sesame"})
        assert ok.status_code == 200
