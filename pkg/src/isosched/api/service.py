"""Request handlers shared by the HTTP app and the in-process CLI."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
import statistics
from typing import Optional

from .. import __version__
from ..errors import NoFeasibleRate, ParseError, ScheduleError, Unschedulable
from ..graph import WorkloadSet
from ..matching import McuParams, backtrack_expansions, mcu_search, planted_pair
from ..pipeline import instantiate
from ..platform import EngineCoord, LinkId, PlatformConfig, load_platform, platform_from_dict, platform_to_dict
from ..scheduler import SchedulerParams
from ..seeding import derive_seed
from ..sim import ArrivalTrace, SimResult, compile_workload, measure_lbt, run_policy, simulate
from ..tensors import (CommEntry, CommSchedule, ComputeEntry, ComputeSchedule, check_links_valid, task_finish,
                       validate_all, window_hits)
from ..workload import SyntheticSpec, arvr_workload, generate_synthetic, workload_from_data, workload_to_data
from . import schemas

log = logging.getLogger(__name__)


def config_hash(command: str, request) -> str:
    blob = json.dumps({"command": command, "version": __version__, "config": request.model_dump(mode="json")},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def resolve_platform(spec) -> PlatformConfig:
    if isinstance(spec, dict):
        return platform_from_dict(spec, "<request>")
    return load_platform(spec)


def _synthetic_spec(req: schemas.SyntheticRequest) -> SyntheticSpec:
    return SyntheticSpec(cls=req.cls, n_tasks=req.n_tasks, scale=req.scale, edge_density=req.edge_density,
                         deadline_range=tuple(req.deadline_range), priority_range=tuple(req.priority_range),
                         critical_fraction=req.critical_fraction)


def resolve_workload(req: schemas.RunConfig) -> WorkloadSet:
    if req.workload is not None:
        return workload_from_data(req.workload, "<request>")
    if req.synthetic is not None:
        return generate_synthetic(_synthetic_spec(req.synthetic), derive_seed(req.seed, "workload"))
    return arvr_workload()


def scheduler_params(req: schemas.RunConfig) -> SchedulerParams:
    o = req.options
    return SchedulerParams(mcts_iters=o.mcts_iters, exploration_c=o.exploration_c, lcs_threshold=o.lcs_threshold,
                           max_candidates=o.max_candidates, max_stages=o.max_stages, seed=req.seed)


def default_trace(workload: WorkloadSet) -> ArrivalTrace:
    return ArrivalTrace(tuple(sorted(((t.task_id, t.arrival) for t in workload.tasks), key=lambda e: (e[1], e[0]))))


def _trace(workload: WorkloadSet, arrivals) -> ArrivalTrace:
    if arrivals is None:
        return default_trace(workload)
    ids = {t.task_id for t in workload.tasks}
    for tid, _ in arrivals:
        if tid not in ids:
            raise ParseError(f"arrival refers to unknown task id {tid}")
    try:
        return ArrivalTrace(tuple((int(a), int(b)) for a, b in arrivals))
    except ValueError as exc:
        raise ParseError(f"arrivals: {exc}") from None


def _comparison(main: SimResult, base: Optional[SimResult]) -> dict[str, Optional[float]]:
    if base is None:
        return {}
    return {
        "speedup": base.makespan / main.makespan if main.makespan else None,
        "energy_efficiency": base.total_energy / main.total_energy if main.total_energy else None,
        "sla_rate_delta": main.sla_rate - base.sla_rate,
    }


def _run(command: str, req: schemas.RunConfig, trace_of) -> tuple[schemas.RunReport, SimResult]:
    workload = resolve_workload(req)
    platform = resolve_platform(req.platform)
    params = scheduler_params(req)
    trace = trace_of(workload)
    compiled = compile_workload(workload, platform, params)
    result = simulate(workload, trace, platform, params, "iso", compiled=compiled, keep_table=True)
    x, y, cons = result.state.full_schedules()
    violations = validate_all(x, y, cons, platform, deadlines=False)
    if violations:
        raise ScheduleError(f"committed schedule violates {len(violations)} constraints, first: "
                            f"{violations[0].kind} {violations[0].subject}")
    base = None
    if req.baseline != "none":
        base = run_policy(req.baseline, workload, trace, platform, params)
    balance = []
    for tid, pipe in sorted(compiled.pipelines.items()):
        if pipe.report is not None:
            balance.append({"task": tid, **pipe.report.to_dict()})
    report = schemas.RunReport(
        command=command,
        version=__version__,
        config_hash=config_hash(command, req),
        seed=req.seed,
        platform=platform_to_dict(platform),
        timeslot_cycles=compiled.timeslot,
        result=result.to_dict(),
        baseline=None if base is None else base.to_dict(),
        comparison=_comparison(result, base),
        balance=balance,
    )
    return report, result


def schedule(req: schemas.ScheduleRequest) -> schemas.ScheduleResponse:
    report, result = _run("schedule", req, lambda w: _trace(w, req.arrivals))
    if result.rejected:
        raise Unschedulable(f"tasks {sorted(result.rejected)} cannot meet their deadlines on this platform")
    return schemas.ScheduleResponse(report=report, table=result.table_text)


def simulate_run(req: schemas.SimulateRequest) -> schemas.RunReport:
    def trace_of(w: WorkloadSet) -> ArrivalTrace:
        if req.arrivals is None and req.rate is not None:
            return ArrivalTrace.poisson(req.rate, req.n_arrivals, [t.task_id for t in w.tasks],
                                        derive_seed(req.seed, "trace"))
        return _trace(w, req.arrivals)

    report, _ = _run("simulate", req, trace_of)
    return report


def sweep_lbt(req: schemas.LbtRequest) -> schemas.LbtResponse:
    if req.hi <= req.lo:
        raise ValueError("hi must exceed lo")
    workload = resolve_workload(req)
    platform = resolve_platform(req.platform)
    params = scheduler_params(req)
    policies = ["iso"] + ([req.baseline] if req.baseline != "none" else [])
    lbt, qps, upper, probes = {}, {}, {}, []
    timeslot = compile_workload(workload, platform, params).timeslot
    for policy in policies:
        try:
            res = measure_lbt(workload, platform, req.lo, req.hi, derive_seed(req.seed, "trace"), params, policy,
                              req.iterations, req.n_arrivals)
            lbt[policy], qps[policy], upper[policy] = res.rate, res.qps, res.hit_upper
            found = res.probes
        except NoFeasibleRate as exc:
            log.warning("%s: %s", policy, exc)
            lbt[policy], qps[policy], upper[policy] = None, None, False
            found = getattr(exc, "probes", [])
        probes += [schemas.LbtProbe(policy=policy, rate=r, sla_rate=s, satisfied=ok, energy_pj=e)
                   for r, s, ok, e in found]
    return schemas.LbtResponse(config_hash=config_hash("sweep-lbt", req), seed=req.seed, timeslot_cycles=timeslot,
                               lbt=lbt, qps=qps, hit_upper=upper, probes=probes)


def bench_mcu(req: schemas.BenchMcuRequest) -> schemas.BenchMcuResponse:
    rows = []
    for k in range(req.pairs):
        rng = random.Random(derive_seed(req.seed, "bench-mcu", k))
        A, B = planted_pair(req.n_a, req.n_b, req.p_a, req.p_extra, rng)
        res = mcu_search(A, B, McuParams(req.mcts_iters, req.exploration_c, derive_seed(req.seed, "mcts", k)))
        found, expansions = backtrack_expansions(A, B)
        rows.append(schemas.BenchRow(pair=k, exists=found, backtrack_expansions=expansions,
                                     mcts_iterations=res.iterations if res.reward == 1 else None))
    # a failed search counts as worse than any success
    mcts = [r.mcts_iterations if r.mcts_iterations is not None else float("inf") for r in rows]
    return schemas.BenchMcuResponse(config_hash=config_hash("bench-mcu", req), rows=rows,
                                    median_mcts=None if math.isinf(med := statistics.median(mcts)) else med,
                                    median_backtrack=statistics.median(r.backtrack_expansions for r in rows))


def gen_workload(req: schemas.GenWorkloadRequest) -> schemas.GenWorkloadResponse:
    ws = generate_synthetic(_synthetic_spec(req.spec), req.seed)
    stats = [{"task": t.task_id, "nodes": t.n_nodes, "edges": len(t.edges)} for t in ws.tasks]
    return schemas.GenWorkloadResponse(config_hash=config_hash("gen-workload", req), workload=workload_to_data(ws),
                                       stats=stats)


_X = re.compile(r"X (\d+) (\d+) (\d+) (\d+) (\d+)$")
_Y = re.compile(r"Y (\d+) (\d+) (\d+) (\d+) \((\d+),(\d+)\)->\((\d+),(\d+)\) (\d+)$")
_R = re.compile(r"R \d+ (save|load|restore) \d+ \d+ \d+ \d+$")


def parse_table(text: str) -> tuple[list[ComputeEntry], list[CommEntry]]:
    xs, ys = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if m := _X.match(line):
            xs.append(ComputeEntry(*map(int, m.groups())))
        elif m := _Y.match(line):
            d, i, k, t, sx, sy, dx, dy, _ = map(int, m.groups())
            ys.append(CommEntry(d, i, k, t, LinkId(EngineCoord(sx, sy), EngineCoord(dx, dy))))
        elif not _R.match(line):
            raise ParseError(f"table:{lineno}: unrecognised record {line!r}")
    return xs, ys


def validate(req: schemas.ValidateRequest) -> schemas.ValidateResponse:
    workload = resolve_workload(req)
    platform = resolve_platform(req.platform)
    params = scheduler_params(req)
    compiled = compile_workload(workload, platform, params)
    trace = _trace(workload, req.arrivals)
    xs, ys = parse_table(req.table)
    x, y, cons = ComputeSchedule(sorted(xs)), CommSchedule(ys), {}
    for d, (tid, arr) in enumerate(trace.events):
        pipe = instantiate(compiled.pipelines[tid], workload.task(tid).replace(task_id=d, arrival=arr))
        x.tiles.update(pipe.tile_specs())
        y.demand.update({(d, k): u for k, u in pipe.demand.items()})
        cons[d] = pipe.constraints()
    bad = check_links_valid(y, platform)
    if bad:
        raise ParseError(f"table references links outside the mesh: {bad[:3]}")
    unknown = sorted({e.d for e in xs} - set(cons))
    if unknown:
        raise ParseError(f"table references unknown task instances {unknown}")
    violations = validate_all(x, y, cons, platform, deadlines=True)
    hits = window_hits(x)
    finish = {d: (task_finish(x, c.finals, hits) if all(len(hits.get(f, ())) == 1 for f in c.finals) else None)
              for d, c in cons.items()}
    return schemas.ValidateResponse(
        config_hash=config_hash("validate", req),
        feasible=not any(v.kind != "Deadline" for v in violations),
        violations=[schemas.ViolationModel(**v.to_dict()) for v in violations],
        finish=finish,
    )
