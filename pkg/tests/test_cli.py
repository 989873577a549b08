import json
import os

import pytest
import yaml

from isosched.cli import main
from isosched.platform import platform_to_dict
from isosched.workload import dump_workload, load_workload

from helpers import chain_task, conv, single
from scenarios import contention


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _write(path, ws):
    path.write_text(dump_workload(ws))
    return str(path)


def _tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


def test_empty_machine_single_task(workdir):
    wl = _write(workdir / "one.yaml", single(chain_task(0, [conv(0), conv(1)])))
    assert main(["schedule", "--platform", "desk2", "--workload", wl, "--out", "out"]) == 0
    rep = json.loads((workdir / "out" / "report.json").read_text())
    assert rep["result"]["sla_rate"] == 1.0
    assert _tree(workdir) == ["one.yaml", "out/report.json", "out/schedule.txt"]
    assert main(["validate", "--platform", "desk2", "--workload", wl, "--table", "out/schedule.txt",
                 "--out", "val"]) == 0


def test_contention_scenario_preempts_downstream(workdir):
    wl, events, pf, _ = contention(4)
    (workdir / "pf.yaml").write_text(yaml.safe_dump(platform_to_dict(pf)))
    path = _write(workdir / "wl.yaml", wl)
    arrivals = ",".join(f"{d}@{t}" for d, t in events)
    assert main(["schedule", "--platform", "pf.yaml", "--workload", path, "--arrivals", arrivals,
                 "--max-stages", "4", "--out", "out"]) == 0
    rep = json.loads((workdir / "out" / "report.json").read_text())
    urgent = [a for a in rep["result"]["audit"] if a["task"] == 1][0]
    stages = sorted(s for _, s in urgent["victim_stages"])
    n_urgent = len(wl.task(1).nodes)
    assert stages == list(range(4 - n_urgent, 4))


def test_impossible_deadline_exits_nonzero(workdir, capsys):
    wl = _write(workdir / "w.yaml", single(chain_task(0, [conv(0, H=32), conv(1, H=32)], deadline=2)))
    assert main(["schedule", "--platform", "desk2", "--workload", wl]) == 3
    assert "cannot meet" in capsys.readouterr().err
    assert not (workdir / "isosched-out").exists()


def test_input_errors_exit_one(workdir, capsys):
    (workdir / "cyc.yaml").write_text(
        "tasks:\n  - deadline: 9\n    nodes: [{id: 0, kind: Elementwise}, {id: 1, kind: Elementwise}]\n"
        "    edges: [[0, 1], [1, 0]]\n")
    assert main(["schedule", "--workload", "cyc.yaml"]) == 1
    assert "cycle" in capsys.readouterr().err
    assert main(["schedule", "--workload", "missing.yaml"]) == 1
    assert main(["schedule", "--platform", "no-such-preset"]) == 1


def test_tampered_table_exits_four(workdir):
    wl = _write(workdir / "one.yaml", single(chain_task(0, [conv(0), conv(1)])))
    assert main(["schedule", "--platform", "desk2", "--workload", wl, "--out", "out"]) == 0
    lines = (workdir / "out" / "schedule.txt").read_text().splitlines()
    x = [ln.split() for ln in lines if ln.startswith("X ")]
    # move the second tile onto the first tile's engine and slot
    x[1][3], x[1][4] = x[0][3], x[0][4]
    (workdir / "bad.txt").write_text("\n".join(" ".join(r) for r in x) + "\n")
    assert main(["validate", "--platform", "desk2", "--workload", wl, "--table", "bad.txt", "--out", "v"]) == 4
    assert not json.loads((workdir / "v" / "validation.json").read_text())["feasible"]


def test_reports_are_byte_identical(workdir):
    args = ["simulate", "--platform", "desk2", "--synthetic", "Simple", "--n-tasks", "2", "--rate", "0.01",
            "--n-arrivals", "6", "--seed", "11", "--baseline", "tss-nprm"]
    assert main(args + ["--out", "a"]) == 0
    assert main(args + ["--out", "b"]) == 0
    assert (workdir / "a" / "report.json").read_bytes() == (workdir / "b" / "report.json").read_bytes()


def test_gen_workload_outputs(workdir):
    assert main(["gen-workload", "--synthetic", "Middle", "--n-tasks", "1", "--seed", "2", "--out", "g"]) == 0
    assert _tree(workdir) == ["g/stats.json", "g/workload.yaml"]
    stats = json.loads((workdir / "g" / "stats.json").read_text())
    ws = load_workload(workdir / "g" / "workload.yaml")
    assert [(t.task_id, t.n_nodes, len(t.edges)) for t in ws.tasks] == [(s["task"], s["nodes"], s["edges"]) for s in stats]


@pytest.fixture
def server():
    import socket
    import threading
    import time

    import uvicorn

    from isosched.api.app import app

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    srv = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error"))
    th = threading.Thread(target=srv.run, daemon=True)
    th.start()
    while not srv.started:
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}"
    srv.should_exit = True
    th.join(5)


def test_server_mode_matches_in_process(workdir, server):
    wl = _write(workdir / "one.yaml", single(chain_task(0, [conv(0), conv(1)])))
    base = ["schedule", "--platform", "desk2", "--workload", wl]
    assert main(base + ["--out", "local"]) == 0
    assert main(base + ["--out", "remote", "--server", server]) == 0
    for name in ("report.json", "schedule.txt"):
        assert (workdir / "local" / name).read_bytes() == (workdir / "remote" / name).read_bytes()
    bad = _write(workdir / "tight.yaml", single(chain_task(0, [conv(0, H=32)], deadline=1)))
    assert main(["schedule", "--platform", "desk2", "--workload", bad, "--server", server]) == 3
