import pytest
from fastapi.testclient import TestClient

from isosched.api.app import app
from isosched.platform import platform_to_dict
from isosched.workload import workload_to_data

from helpers import chain_task, conv, single
from scenarios import contention

client = TestClient(app)


def _one_task(deadline=1000):
    return workload_to_data(single(chain_task(0, [conv(0), conv(1)], deadline=deadline)))


def test_health():
    assert client.get("/health").json()["status"] == "ok"


def test_schedule_single_task():
    r = client.post("/schedule", json={"platform": "desk2", "workload": _one_task()})
    assert r.status_code == 200
    body = r.json()
    assert body["report"]["result"]["sla_rate"] == 1.0
    assert body["table"].startswith("X ")


def test_impossible_deadline_is_conflict():
    r = client.post("/schedule", json={"platform": "desk2", "workload": _one_task(deadline=1)})
    assert r.status_code == 409
    assert "deadline" in r.json()["error"]


def test_bad_input_is_unprocessable():
    assert client.post("/schedule", json={"platform": "nope"}).status_code == 422
    assert client.post("/schedule", json={"workload": {"tasks": []}}).status_code == 422
    assert client.post("/schedule", json={"options": {"mcts_iters": -1}}).status_code == 422


def test_contention_audit_over_http():
    wl, events, pf, _ = contention(2)
    r = client.post("/simulate", json={"platform": platform_to_dict(pf), "workload": workload_to_data(wl),
                                       "arrivals": events, "options": {"max_stages": 4}, "seed": 2,
                                       "baseline": "tss-nprm"})
    assert r.status_code == 200
    rep = r.json()
    urgent = [a for a in rep["result"]["audit"] if a["task"] == 1][0]
    assert urgent["victims"] == [0]
    assert rep["comparison"]["sla_rate_delta"] > 0


def test_schedule_then_validate_round_trip():
    cfg = {"platform": "desk2", "workload": _one_task()}
    table = client.post("/schedule", json=cfg).json()["table"]
    ok = client.post("/validate", json={**cfg, "table": table}).json()
    assert ok["feasible"] and ok["violations"] == []
    lines = table.splitlines()
    x = [line for line in lines if line.startswith("X ")]
    tampered = "\n".join(lines + [x[0]])  # same tile twice
    bad = client.post("/validate", json={**cfg, "table": tampered}).json()
    assert not bad["feasible"]


def test_gen_workload_and_bench():
    g = client.post("/gen-workload", json={"spec": {"cls": "Simple", "n_tasks": 2}, "seed": 4}).json()
    assert len(g["stats"]) == 2 and g["workload"]["complexity_class"] == "Simple"
    b = client.post("/bench-mcu", json={"pairs": 2, "mcts_iters": 2000}).json()
    assert len(b["rows"]) == 2


@pytest.mark.parametrize("route", ["/schedule", "/simulate"])
def test_config_hash_is_stable(route):
    cfg = {"platform": "desk2", "workload": _one_task(), "seed": 5}
    a, b = client.post(route, json=cfg).json(), client.post(route, json=cfg).json()
    assert a == b
