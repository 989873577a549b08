"""Command-line client: builds requests and runs them in-process or against ``--server``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import yaml

from .api import schemas, service
from .errors import IsoSchedError, ScheduleError, SchedulerError
from .platform import PRESETS
from .workload import load_workload, workload_to_data

log = logging.getLogger("isosched")

EXIT_INPUT = 1
EXIT_UNSCHEDULABLE = 3
EXIT_VIOLATION = 4

ROUTES = {
    "schedule": (schemas.ScheduleResponse, service.schedule),
    "simulate": (schemas.RunReport, service.simulate_run),
    "sweep-lbt": (schemas.LbtResponse, service.sweep_lbt),
    "bench-mcu": (schemas.BenchMcuResponse, service.bench_mcu),
    "gen-workload": (schemas.GenWorkloadResponse, service.gen_workload),
    "validate": (schemas.ValidateResponse, service.validate),
}


class RemoteError(Exception):
    def __init__(self, status: int, body: dict):
        super().__init__(body.get("error", str(body)))
        self.status = status
        self.body = body


def _platform_arg(value: str):
    if value in PRESETS:
        return value
    path = Path(value)
    if not path.exists():
        raise IsoSchedError(f"unknown platform preset or missing file: {value}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise IsoSchedError(f"{path}: platform file must be a mapping")
    return data


def _run_config(args) -> dict:
    cfg = {
        "platform": _platform_arg(args.platform),
        "seed": args.seed,
        "baseline": args.baseline,
        "options": {
            "mcts_iters": args.mcts_iters,
            "exploration_c": args.exploration_c,
            "lcs_threshold": args.lcs_threshold,
            "max_candidates": args.max_candidates,
            "max_stages": args.max_stages,
        },
    }
    if args.workload:
        cfg["workload"] = workload_to_data(load_workload(args.workload))
    elif args.synthetic:
        cfg["synthetic"] = {"cls": args.synthetic, "n_tasks": args.n_tasks}
    return cfg


def _arrivals(value: str | None):
    if value is None:
        return None
    out = []
    for part in value.split(","):
        tid, _, slot = part.partition("@")
        out.append((int(tid), int(slot or 0)))
    return out


def build_request(args):
    cmd = args.command
    if cmd == "bench-mcu":
        return schemas.BenchMcuRequest(seed=args.seed, pairs=args.pairs, n_a=args.n_a, n_b=args.n_b,
                                       mcts_iters=args.mcts_iters, exploration_c=args.exploration_c)
    if cmd == "gen-workload":
        return schemas.GenWorkloadRequest(seed=args.seed, spec={"cls": args.synthetic or "Simple",
                                                                "n_tasks": args.n_tasks, "scale": args.scale})
    cfg = _run_config(args)
    if cmd == "schedule":
        return schemas.ScheduleRequest(**cfg, arrivals=_arrivals(args.arrivals))
    if cmd == "simulate":
        return schemas.SimulateRequest(**cfg, arrivals=_arrivals(args.arrivals), rate=args.rate,
                                       n_arrivals=args.n_arrivals)
    if cmd == "sweep-lbt":
        return schemas.LbtRequest(**cfg, lo=args.lo, hi=args.hi, iterations=args.iterations,
                                  n_arrivals=args.n_arrivals)
    table = Path(args.table).read_text()
    return schemas.ValidateRequest(**cfg, table=table, arrivals=_arrivals(args.arrivals))


def call(command: str, request, server: str | None = None):
    model, handler = ROUTES[command]
    if server is None:
        return handler(request)
    import httpx

    resp = httpx.post(f"{server.rstrip('/')}/{command}", content=request.model_dump_json(),
                      headers={"content-type": "application/json"}, timeout=None)
    if resp.status_code != 200:
        raise RemoteError(resp.status_code, resp.json())
    return model.model_validate(resp.json())


def dump_json(model) -> str:
    return json.dumps(model.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_outputs(command: str, response, out: Path) -> list[Path]:
    """Every artifact lands inside ``out``; returns the paths written."""
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    if command == "schedule":
        files["report.json"] = dump_json(response.report)
        files["schedule.txt"] = response.table
    elif command == "simulate":
        files["report.json"] = dump_json(response)
    elif command == "sweep-lbt":
        files["lbt.json"] = dump_json(response)
        files["sweep.csv"] = _csv(["policy", "lambda", "sla_rate", "satisfied", "lbt", "energy_pj"],
                                  [[p.policy, p.rate, p.sla_rate, int(p.satisfied), response.lbt[p.policy],
                                    p.energy_pj] for p in response.probes])
    elif command == "bench-mcu":
        files["bench.json"] = dump_json(response)
        files["bench.csv"] = _csv(["pair", "exists", "mcts_iterations", "backtrack_expansions"],
                                  [[r.pair, int(r.exists), r.mcts_iterations, r.backtrack_expansions]
                                   for r in response.rows])
    elif command == "gen-workload":
        files["workload.yaml"] = yaml.safe_dump(response.workload, sort_keys=False, default_flow_style=None)
        files["stats.json"] = json.dumps(response.stats, indent=2) + "\n"
    elif command == "validate":
        files["validation.json"] = dump_json(response)
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        written.append(path)
    return written


def summary(command: str, response) -> str:
    if command == "schedule":
        r = response.report.result
        return f"scheduled {len(r['tasks'])} tasks, sla_rate={r['sla_rate']:.4f}, makespan={r['makespan']}"
    if command == "simulate":
        r = response.result
        extra = "".join(f", {k}={v:.3f}" for k, v in response.comparison.items() if v is not None)
        return f"sla_rate={r['sla_rate']:.4f}, makespan={r['makespan']}, energy={r['energy_pj']['total']:.1f} pJ{extra}"
    if command == "sweep-lbt":
        return ", ".join(f"{p}: lbt={v}" for p, v in response.lbt.items())
    if command == "bench-mcu":
        return f"median mcts iterations={response.median_mcts}, median backtrack expansions={response.median_backtrack}"
    if command == "gen-workload":
        return ", ".join(f"task {s['task']}: {s['nodes']} nodes/{s['edges']} edges" for s in response.stats)
    return f"feasible={response.feasible}, violations={len(response.violations)}"


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--platform", default="desk4", help="preset name or YAML/JSON platform file")
    common.add_argument("--workload", help="YAML/JSON workload file (default: built-in AR/VR mix)")
    common.add_argument("--synthetic", choices=["Simple", "Middle", "Complex"], help="generate the workload instead")
    common.add_argument("--n-tasks", type=int, default=3)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="isosched-out", help="output directory; nothing is written elsewhere")
    common.add_argument("--mcts-iters", type=int, default=5000)
    common.add_argument("--exploration-c", type=float, default=math.sqrt(2))
    common.add_argument("--lcs-threshold", type=float, default=0.15)
    common.add_argument("--max-candidates", type=int, default=8)
    common.add_argument("--max-stages", type=int)
    common.add_argument("--baseline", choices=["lts", "tss-nprm", "none"], default="none")
    common.add_argument("--server", help="base URL of a running isosched service")

    parser = argparse.ArgumentParser(prog="isosched", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("schedule", parents=[common], help="admit every task and emit the schedule table")
    p.add_argument("--arrivals", help="comma list of task@slot, e.g. 0@0,1@20")
    p = sub.add_parser("simulate", parents=[common], help="run a trace and report SLA, makespan and energy")
    p.add_argument("--arrivals")
    p.add_argument("--rate", type=float, help="Poisson arrival rate in tasks/slot")
    p.add_argument("--n-arrivals", type=int, default=100)
    p = sub.add_parser("sweep-lbt", parents=[common], help="bisect the latency-bound throughput")
    p.add_argument("--lo", type=float, default=0.001)
    p.add_argument("--hi", type=float, default=0.5)
    p.add_argument("--iterations", type=int, default=12)
    p.add_argument("--n-arrivals", type=int, default=500)
    p = sub.add_parser("bench-mcu", parents=[common], help="MCTS matching vs plain backtracking")
    p.add_argument("--pairs", type=int, default=10)
    p.add_argument("--n-a", type=int, default=8)
    p.add_argument("--n-b", type=int, default=20)
    p.set_defaults(mcts_iters=50000)
    p = sub.add_parser("gen-workload", parents=[common], help="write a seeded synthetic workload file")
    p.add_argument("--scale", choices=["desk", "full"], default="desk")
    p = sub.add_parser("validate", parents=[common], help="check a schedule table against every constraint")
    p.add_argument("--table", required=True)
    p.add_argument("--arrivals")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("ISOSCHED_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        request = build_request(args)
        response = call(args.command, request, args.server)
    except RemoteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSCHEDULABLE if exc.status == 409 else EXIT_INPUT
    except SchedulerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSCHEDULABLE
    except ScheduleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (IsoSchedError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for path in write_outputs(args.command, response, Path(args.out)):
        log.info("wrote %s", path)
    print(summary(args.command, response))
    if args.command == "validate" and not response.feasible:
        return EXIT_VIOLATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
