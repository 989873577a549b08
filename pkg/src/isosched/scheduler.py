"""Preemptive admission of task pipelines onto the engine mesh.

An arriving task's stage chain is matched into the preemptible DAG (free engines
plus engines of admitted victims). Victims are admitted by descending latency
slack, one stage at a time from the downstream end, and each successful mapping
is turned into a concrete tile/transfer schedule that must pass the validator
before it is committed.
"""
from __future__ import annotations

import bisect
import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .errors import NoVictimAvailable, Unschedulable, ZeroRemainingTime
from .graph import CsrMatrix
from .lcs import CV_THRESHOLD
from .matching import McuParams, mcu_search, random_start
from .pipeline import TaskPipeline
from .platform import LinkId, PlatformConfig, xy_route
from .seeding import derive_seed
from .tensors import (CommEntry, CommSchedule, ComputeEntry, ComputeSchedule, Reconfig, ScheduleTable,
                      TaskConstraints, TileKey, TileSpec, Violation, bandwidth_profile, check_deadline,
                      validate_all, window_hits)

INF = math.inf


@dataclass(frozen=True)
class SchedulerParams:
    mcts_iters: int = 5000
    exploration_c: float = math.sqrt(2)
    lcs_threshold: float = CV_THRESHOLD
    max_candidates: int = 8
    max_stages: int | None = None
    seed: int = 0


@dataclass
class TaskRecord:
    pipe: TaskPipeline
    placement: dict[int, int]  # stage -> engine
    specs: dict[TileKey, TileSpec]
    constraints: TaskConstraints

    @property
    def d(self) -> int:
        return self.pipe.d

    @property
    def task(self):
        return self.pipe.task


@dataclass(frozen=True)
class SlackEntry:
    d: int
    W: float
    tau: int
    t_ddl: int
    t_now: int
    priority: int
    critical: bool


@dataclass
class PreemptibleDag:
    vertices: list[int]                 # engine indices, snake order
    provenance: dict[int, tuple]        # engine -> ("Free",) | ("Victim", d, stage)
    edges: list[tuple[int, int]]        # directed engine pairs

    def adjacency(self) -> CsrMatrix:
        pos = {p: k for k, p in enumerate(self.vertices)}
        return CsrMatrix.from_edges(len(self.vertices), sorted((pos[a], pos[b]) for a, b in self.edges))


@dataclass
class PreemptionPlan:
    d: int
    mapping: dict[int, int]
    victims: list[int] = field(default_factory=list)
    victim_stages: list[tuple[int, int]] = field(default_factory=list)
    cells: list[tuple[int, int, int, int, int]] = field(default_factory=list)  # (p, t, d, stage, depth)
    overhead_slots: int = 0
    dram_bits: int = 0
    critical_miss: bool = False
    finish: int = 0
    disruption_score: float = 0.0

    @property
    def preempted_cells(self) -> set[tuple[int, int]]:
        return {(p, t) for p, t, *_ in self.cells}


def latency_slack(t_ddl: int, t_now: int, tau: int, priority: int, total_priority: int) -> float:
    """Deadline headroom per unit of remaining work, divided by relative priority."""
    if tau <= 0:
        raise ZeroRemainingTime(f"remaining time must be > 0, got {tau}")
    if total_priority <= 0:
        raise ValueError("sum of priorities must be > 0")
    return ((t_ddl - t_now) / tau) / (priority / total_priority)


def weight_transfer_slots(bits: int, reconfig_bw: int) -> int:
    if reconfig_bw <= 0:
        raise ValueError("reconfig_bw must be > 0")
    return math.ceil(bits / reconfig_bw)


def preemption_overhead(victim_bits: int, reconfig_bw: int, incoming_bits: int = 0) -> int:
    """Save and restore of the victim's weights plus one load of the incoming task's."""
    return 2 * weight_transfer_slots(victim_bits, reconfig_bw) + weight_transfer_slots(incoming_bits, reconfig_bw)


def stage_weight(stage: int, depth: int) -> float:
    """Upstream stages cost more to preempt than downstream ones."""
    return 1 + (depth - stage) / depth


def score_plan(plan: PreemptionPlan, x: ComputeSchedule | None = None) -> float:
    if plan.critical_miss:
        return INF
    return sum(stage_weight(stage, depth) for _, _, _, stage, depth in plan.cells)


def admit_next_victim(entries: Iterable[SlackEntry], admitted: Iterable[int]) -> int:
    done = set(admitted)
    pool = [e for e in entries if e.d not in done and not e.critical]
    if not pool:
        raise NoVictimAvailable("every remaining running task is critical")
    return max(pool, key=lambda e: (e.W, -e.d)).d


def chain_graph(n: int) -> CsrMatrix:
    return CsrMatrix.from_edges(n, [(s, s + 1) for s in range(n - 1)])


class SchedulerState:
    """Mutable 𝒳/𝒴 state plus engine and link occupancy; cloned for tentative plans."""

    def __init__(self, platform: PlatformConfig, timeslot: int):
        self.platform = platform
        self.timeslot = timeslot
        self.x: dict[int, dict[TileKey, ComputeEntry]] = {}
        self.y: dict[int, dict[tuple[int, int, int], list[CommEntry]]] = {}
        self.arrivals: dict[tuple[int, int, int], int] = {}  # (d, i, k) -> slot data is usable
        self.load: dict[tuple[LinkId, int], int] = defaultdict(int)
        self.busy: dict[int, list[tuple[int, int, tuple]]] = {p: [] for p in range(platform.n_engines)}
        self.tasks: dict[int, TaskRecord] = {}
        self.archive: dict[int, TaskRecord] = {}
        self.reconfigs: list[Reconfig] = []
        self.audit: list[dict] = []
        self.dram_bits = 0

    def clone(self) -> "SchedulerState":
        st = SchedulerState.__new__(SchedulerState)
        st.platform, st.timeslot = self.platform, self.timeslot
        st.x = {d: (dict(v) if d in self.tasks else v) for d, v in self.x.items()}
        st.y = {d: ({k: list(e) for k, e in v.items()} if d in self.tasks else v) for d, v in self.y.items()}
        st.arrivals = dict(self.arrivals)
        st.load = defaultdict(int, self.load)
        st.busy = {p: list(v) for p, v in self.busy.items()}
        st.tasks = dict(self.tasks)
        st.archive = self.archive
        st.reconfigs = list(self.reconfigs)
        st.audit = list(self.audit)
        st.dram_bits = self.dram_bits
        return st

    # -- occupancy ---------------------------------------------------------

    def earliest_fit(self, p: int, t: int, length: int) -> int:
        start = t
        for s, e, _ in self.busy[p]:
            if e <= start:
                continue
            if s >= start + length:
                break
            start = e
        return start

    def occupy(self, p: int, start: int, end: int, tag: tuple) -> None:
        if end > start:
            bisect.insort(self.busy[p], (start, end, tag))

    def tail(self, p: int) -> int:
        return max((e for _, e, _ in self.busy[p]), default=0)

    def future_owners(self, p: int, t: int) -> set[int]:
        return {tag[1] for _, e, tag in self.busy[p] if e > t}

    def next_free_time(self, t: int) -> int | None:
        tails = [self.tail(p) for p in self.busy]
        later = [e for e in tails if e > t]
        return min(later) if later else None

    def task_finish(self, d: int) -> int:
        x = self.x[d]
        return max(e.t + self.length(k) for k, e in x.items())

    def length(self, key: TileKey) -> int:
        rec = self.tasks.get(key[0]) or self.archive[key[0]]
        return rec.pipe.length(key)

    # -- tiles and transfers -------------------------------------------------

    def add_tile(self, key: TileKey, t: int, p: int) -> None:
        self.x.setdefault(key[0], {})[key] = ComputeEntry(key[0], key[1], key[2], t, p)
        self.occupy(p, t, t + self.length(key), ("X", key[0], key[1], key[2]))

    def place_transfer(self, d: int, i: int, k: int, src: int, dst: int, ready: int, units: int) -> int:
        pf = self.platform
        route = xy_route(pf.coord(src), pf.coord(dst))
        prof = bandwidth_profile(units, pf.link_bw)
        t = ready
        while any(self.load.get((l, t + o), 0) + u > pf.link_bw for l in route for o, u in enumerate(prof)):
            t += 1
        entries = []
        for l in route:
            for o, u in enumerate(prof):
                self.load[(l, t + o)] += u
                entries.append(CommEntry(d, i, k, t + o, l))
        self.y.setdefault(d, {})[(d, i, k)] = entries
        avail = t + len(prof)
        self.arrivals[(d, i, k)] = avail
        return avail

    def remove_tiles(self, d: int, keys: set[TileKey]) -> None:
        x = self.x[d]
        engines = {x[k].p for k in keys}
        for p in engines:
            self.busy[p] = [iv for iv in self.busy[p] if not (iv[2][0] == "X" and iv[2][1:] in keys)]
        for k in keys:
            del x[k]
        y = self.y.get(d, {})
        BW = self.platform.link_bw
        for tk in [tk for tk in y if (d, tk[1], self._src_exec(d, tk[2])) in keys]:
            demand = self.tasks[d].pipe.demand[tk[2]]
            prof = bandwidth_profile(demand, BW)
            starts: dict[LinkId, int] = {}
            for e in y[tk]:
                starts[e.link] = min(starts.get(e.link, e.t), e.t)
            for e in y[tk]:
                self.load[(e.link, e.t)] -= prof[e.t - starts[e.link]]
                if self.load[(e.link, e.t)] == 0:
                    del self.load[(e.link, e.t)]
            del y[tk]
            del self.arrivals[tk]

    def _src_exec(self, d: int, k: int) -> int:
        return self.tasks[d].pipe.edges[k][1]

    def place_tiles(self, rec: TaskRecord, keys: Iterable[TileKey], t_floor: int,
                    engine_floor: dict[int, int] | None = None) -> None:
        """List-schedule ``keys`` (dependency order) into the earliest fitting engine gaps."""
        pipe = rec.pipe
        d = rec.d
        engine_floor = engine_floor or {}
        x = self.x.setdefault(d, {})
        for key in keys:
            ex = pipe.execs[key[2]]
            p = rec.placement[ex.stage]
            ready = max(t_floor, engine_floor.get(p, 0), rec.constraints.arrival)
            prev = (d, key[1] - 1, key[2])
            if key[1] > ex.slice.row_lo and prev in x:
                ready = max(ready, x[prev].t + pipe.length(prev))
            for a, k in pipe.preds[key]:
                ea = x[a]
                fin = ea.t + pipe.length(a)
                if ea.p == p:
                    ready = max(ready, fin)
                else:
                    avail = self.arrivals.get((d, a[1], k))
                    if avail is None:
                        avail = self.place_transfer(d, a[1], k, ea.p, p, fin, pipe.demand[k])
                    ready = max(ready, avail)
            self.add_tile(key, self.earliest_fit(p, ready, pipe.length(key)), p)

    # -- views ---------------------------------------------------------------

    def live_schedules(self) -> tuple[ComputeSchedule, CommSchedule, dict[int, TaskConstraints]]:
        x = ComputeSchedule()
        y = CommSchedule()
        cons = {}
        for d, rec in self.tasks.items():
            x.entries.extend(self.x.get(d, {}).values())
            x.tiles.update(rec.specs)
            for entries in self.y.get(d, {}).values():
                y.entries.extend(entries)
            for k, units in rec.pipe.demand.items():
                y.demand[(d, k)] = units
            cons[d] = rec.constraints
        return x, y, cons

    def full_schedules(self) -> tuple[ComputeSchedule, CommSchedule, dict[int, TaskConstraints]]:
        x = ComputeSchedule()
        y = CommSchedule()
        cons = {}
        for d, rec in sorted({**self.archive, **self.tasks}.items()):
            x.entries.extend(self.x.get(d, {}).values())
            x.tiles.update(rec.specs)
            for entries in self.y.get(d, {}).values():
                y.entries.extend(entries)
            for k, units in rec.pipe.demand.items():
                y.demand[(d, k)] = units
            cons[d] = rec.constraints
        x.entries.sort()
        y.entries.sort(key=lambda e: (e.d, e.i, e.k, e.t, e.link))
        return x, y, cons

    def table(self) -> ScheduleTable:
        x, y, _ = self.full_schedules()
        return ScheduleTable.build(x, y, self.platform.link_bw, self.reconfigs)

    def record(self, d: int) -> TaskRecord:
        return self.tasks.get(d) or self.archive[d]

    def retire(self, t: int) -> None:
        """Archive tasks whose work and transfers all end by ``t``; drop stale occupancy."""
        for d in list(self.tasks):
            x = self.x.get(d, {})
            done = all(e.t + self.length(k) <= t for k, e in x.items())
            done = done and all(a <= t for (dd, _, _), a in self.arrivals.items() if dd == d)
            if done and x:
                self.archive[d] = self.tasks.pop(d)
                for key in [k for k in self.arrivals if k[0] == d]:
                    del self.arrivals[key]
        for p in self.busy:
            self.busy[p] = [iv for iv in self.busy[p] if iv[1] > t]
        for key in [k for k in self.load if k[1] < t]:
            del self.load[key]


def build_preemptible_dag(state: SchedulerState, t_now: int,
                          admitted: dict[int, list[int]] | None = None) -> PreemptibleDag:
    """Free engines plus engines of admitted victim stages, linked by mesh links with spare bandwidth."""
    admitted = admitted or {}
    pf = state.platform
    victim_engines: dict[int, tuple[int, int]] = {}
    for d, stages in admitted.items():
        rec = state.tasks[d]
        for s in stages:
            victim_engines[rec.placement[s]] = (d, s)
    verts = []
    prov: dict[int, tuple] = {}
    for p in pf.snake_order:
        owners = state.future_owners(p, t_now)
        if not owners:
            verts.append(p)
            prov[p] = ("Free",)
        elif p in victim_engines and owners <= set(admitted):
            verts.append(p)
            prov[p] = ("Victim",) + victim_engines[p]
    members = set(verts)
    edges = []
    for link in pf.links:
        a, b = pf.index(link.src), pf.index(link.dst)
        if a in members and b in members and state.load.get((link, t_now), 0) < pf.link_bw:
            edges.append((a, b))
    return PreemptibleDag(verts, prov, edges)


def slack_table(state: SchedulerState, t_now: int, incoming_priority: int = 0) -> list[SlackEntry]:
    running = []
    for d, rec in sorted(state.tasks.items()):
        tau = state.task_finish(d) - t_now if state.x.get(d) else 0
        if tau > 0:
            running.append((d, rec, tau))
    total = sum(rec.task.priority for _, rec, _ in running) + incoming_priority
    out = []
    for d, rec, tau in running:
        t_ddl = rec.constraints.arrival + rec.task.deadline
        out.append(SlackEntry(d, latency_slack(t_ddl, t_now, tau, rec.task.priority, total),
                              tau, t_ddl, t_now, rec.task.priority, rec.task.critical))
    return out


def _closure(rec: TaskRecord, seeds: set[TileKey], x: dict[TileKey, ComputeEntry]) -> set[TileKey]:
    """Seeds plus their transitive dependents and every later row of the same exec node."""
    succ = rec.pipe.successors()
    out = set()
    stack = list(seeds)
    while stack:
        k = stack.pop()
        if k in out or k not in x:
            continue
        out.add(k)
        stack.extend(succ.get(k, ()))
        nxt = (k[0], k[1] + 1, k[2])
        if nxt in x:
            stack.append(nxt)
    return out


def _ordered(pipe: TaskPipeline, keys: Iterable[TileKey] | None = None) -> list[TileKey]:
    # Wavefront order: a topological order of the tiles that interleaves exec nodes
    # by row progress, so a stage holding several layers hands rows on early.
    keys = set(pipe.tiles()) if keys is None else set(keys)
    rank = {n: r for r, n in enumerate(pipe.exec_order())}

    def prio(k: TileKey) -> tuple:
        rows = pipe.execs[k[2]].rows
        return ((k[1] - rows.start + 1) / len(rows), rank[k[2]], k[1])

    indeg = dict.fromkeys(keys, 0)
    succ: dict[TileKey, list[TileKey]] = defaultdict(list)
    for b in keys:
        deps = [a for a, _ in pipe.preds[b]]
        if b[1] > pipe.execs[b[2]].rows.start:
            deps.append((b[0], b[1] - 1, b[2]))
        for a in deps:
            if a in indeg:
                indeg[b] += 1
                succ[a].append(b)
    heap = [(prio(k), k) for k, n in indeg.items() if n == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        _, k = heapq.heappop(heap)
        out.append(k)
        for b in succ[k]:
            indeg[b] -= 1
            if indeg[b] == 0:
                heapq.heappush(heap, (prio(b), b))
    return out


def build_plan(state: SchedulerState, pipe: TaskPipeline, mapping: dict[int, int], t_now: int,
               enforce_deadlines: bool = True) -> tuple[SchedulerState, PreemptionPlan, list[Violation]]:
    """Apply one stage->engine mapping to a copy of ``state``; returns the copy, the plan and violations."""
    st = state.clone()
    pf = st.platform
    d = pipe.d
    plan = PreemptionPlan(d, dict(mapping))
    claimed = sorted(p for p in set(mapping.values()) if st.future_owners(p, t_now))
    removed: dict[int, set[TileKey]] = {}
    for p in claimed:
        for s, _, tag in st.busy[p]:
            if tag[0] == "X" and s >= t_now:
                removed.setdefault(tag[1], set()).add(tag[1:])
    on_track = set()
    for vd in sorted(removed):
        rec = st.tasks[vd]
        if st.task_finish(vd) - rec.constraints.arrival < rec.constraints.deadline:
            on_track.add(vd)
        removed[vd] = _closure(rec, removed[vd], st.x[vd])
        depth = rec.pipe.depth
        for key in sorted(removed[vd]):
            e = st.x[vd][key]
            if e.p in claimed:
                stage = rec.pipe.execs[key[2]].stage
                plan.cells.extend((e.p, t, vd, stage, depth) for t in range(e.t, e.t + rec.pipe.length(key)))
        plan.victims.append(vd)
        stages = {rec.pipe.execs[k[2]].stage for k in removed[vd] if st.x[vd][k].p in claimed}
        plan.victim_stages.extend((vd, s) for s in sorted(stages))
        st.remove_tiles(vd, removed[vd])

    rec_u = TaskRecord(pipe, dict(mapping), pipe.tile_specs(), pipe.constraints())
    st.tasks[d] = rec_u
    engine_floor: dict[int, int] = {}
    save_len: dict[int, tuple[int, int]] = {}
    for p in claimed:
        t_free = max(t_now, st.tail(p))
        v_bits = 0
        vd_here = None
        for vd in plan.victims:
            vrec = st.tasks[vd]
            for s, q in vrec.placement.items():
                if q == p:
                    v_bits += vrec.pipe.stage_weight_bits(s)
                    vd_here = vd
        in_bits = sum(pipe.stage_weight_bits(s) for s, q in mapping.items() if q == p)
        save = weight_transfer_slots(v_bits, pf.reconfig_bw)
        load = weight_transfer_slots(in_bits, pf.reconfig_bw)
        if vd_here is not None and save:
            st.occupy(p, t_free, t_free + save, ("R", vd_here, "save"))
            st.reconfigs.append(Reconfig(vd_here, "save", t_free, p, save, v_bits))
        if load:
            st.occupy(p, t_free + save, t_free + save + load, ("R", d, "load"))
            st.reconfigs.append(Reconfig(d, "load", t_free + save, p, load, in_bits))
        engine_floor[p] = t_free + save + load
        save_len[p] = (save, v_bits, vd_here)
        plan.overhead_slots += 2 * save + load
        plan.dram_bits += 2 * v_bits + in_bits

    st.place_tiles(rec_u, _ordered(pipe), t_now, engine_floor)

    resume_floor: dict[int, int] = {}
    for p in claimed:
        save, v_bits, vd_here = save_len[p]
        last = max((e.t + pipe.length(k) for k, e in st.x[d].items() if e.p == p), default=engine_floor[p])
        start = st.earliest_fit(p, last, save)
        if vd_here is not None and save:
            st.occupy(p, start, start + save, ("R", vd_here, "restore"))
            st.reconfigs.append(Reconfig(vd_here, "restore", start, p, save, v_bits))
        resume_floor[p] = start + save
    for vd in plan.victims:
        st.place_tiles(st.tasks[vd], _ordered(st.tasks[vd].pipe, removed[vd]), t_now, resume_floor)
    st.dram_bits += plan.dram_bits

    x, y, cons = st.live_schedules()
    violations = validate_all(x, y, cons, pf, deadlines=False)
    if enforce_deadlines and not violations:
        hits = window_hits(x)
        for dd, c in cons.items():
            if dd == d or c.critical or dd in on_track:
                miss = check_deadline(x, c, hits)
                if miss and c.critical and dd != d:
                    plan.critical_miss = True
                violations.extend(miss)
    plan.finish = st.task_finish(d)
    plan.disruption_score = score_plan(plan)
    return st, plan, violations


def _candidate_mappings(A: CsrMatrix, B: CsrMatrix, params: SchedulerParams, labels: tuple,
                        want: int) -> tuple[list[tuple[int, ...]], int]:
    mcu = McuParams(params.mcts_iters, params.exploration_c, derive_seed(params.seed, *labels, 0))
    first = mcu_search(A, B, mcu)
    iters = first.iterations
    if first.reward != 1:
        return [], iters
    found = [first.mapping]
    for r in range(1, want):
        seed = derive_seed(params.seed, *labels, r)
        res = mcu_search(A, B, McuParams(params.mcts_iters, params.exploration_c, seed),
                         start=random_start(A, B, seed))
        iters += res.iterations
        if res.reward == 1 and res.mapping not in found:
            found.append(res.mapping)
    return found, iters


def _audit(st: SchedulerState, plan: PreemptionPlan, t_now: int, t_start: int, order: list[int],
           slack: list[SlackEntry], candidates: int) -> None:
    st.audit.append({
        "task": plan.d,
        "t_now": t_now,
        "t_start": t_start,
        "victims": plan.victims,
        "victim_stages": [list(v) for v in plan.victim_stages],
        "admission_order": order,
        "slack": {e.d: e.W for e in slack},
        "mapping": {str(s): p for s, p in sorted(plan.mapping.items())},
        "score": plan.disruption_score,
        "overhead_slots": plan.overhead_slots,
        "candidates": candidates,
        "violations": [],
    })


def _wait_plan(state: SchedulerState, pipe: TaskPipeline, A: CsrMatrix, t_now: int, params: SchedulerParams,
               enforce_deadlines: bool) -> tuple[SchedulerState, PreemptionPlan, int] | None:
    """Victim-free plan starting at the first engine-release time that still meets the deadline."""
    task = pipe.task
    t = t_now
    while True:
        t = state.next_free_time(t)
        if t is None or (enforce_deadlines and t - task.arrival >= task.deadline):
            return None
        pdag = build_preemptible_dag(state, t)
        if len(pdag.vertices) < pipe.depth:
            continue
        maps, _ = _candidate_mappings(A, pdag.adjacency(), params, (pipe.d, t, "wait"), 1)
        for m in maps:
            st, plan, viol = build_plan(state, pipe, {s: pdag.vertices[c] for s, c in enumerate(m)}, t,
                                        enforce_deadlines)
            if not viol:
                return st, plan, t
            if any(v.kind == "Deadline" for v in viol):
                return None  # starting later can only finish later


def schedule_task(pipe: TaskPipeline, state: SchedulerState, t_now: int, params: SchedulerParams,
                  preemptive: bool = True, enforce_deadlines: bool = True
                  ) -> tuple[SchedulerState, PreemptionPlan]:
    """Admit one task at ``t_now``; returns the committed state and plan or raises Unschedulable."""
    d = pipe.d
    S = pipe.depth
    A = chain_graph(S)
    t_now = max(t_now, pipe.task.arrival)
    admitted: dict[int, list[int]] = {}
    order: list[int] = []
    pending_stages: list[int] = []
    slack = slack_table(state, t_now, pipe.task.priority) if preemptive else []
    rounds = 0
    last_violations: list[Violation] = []
    tried: set[tuple[int, ...]] = set()
    while True:
        pdag = build_preemptible_dag(state, t_now, admitted)
        # plans only change when admitting a stage frees another engine
        fresh = tuple(pdag.vertices) not in tried
        tried.add(tuple(pdag.vertices))
        if fresh and len(pdag.vertices) >= S:
            B = pdag.adjacency()
            want = params.max_candidates if admitted else 1
            maps, iters = _candidate_mappings(A, B, params, (d, t_now, rounds), want)
            options = []
            for idx, m in enumerate(maps):
                mapping = {s: pdag.vertices[c] for s, c in enumerate(m)}
                st, plan, viol = build_plan(state, pipe, mapping, t_now, enforce_deadlines)
                if viol:
                    last_violations = viol
                    continue
                options.append((plan.disruption_score, plan.overhead_slots, plan.finish, idx, st, plan))
            if options:
                _, _, _, _, st, plan = min(options, key=lambda o: o[:4])
                _audit(st, plan, t_now, t_now, order, slack, len(maps))
                return st, plan
        if not preemptive:
            raise Unschedulable(f"task {d}: not enough free engines at t={t_now}")
        if rounds == 0:
            # preempt only when waiting for engines to drain would miss the deadline
            waited = _wait_plan(state, pipe, A, t_now, params, enforce_deadlines)
            if waited is not None:
                st, plan, t_start = waited
                _audit(st, plan, t_now, t_start, order, slack, 1)
                return st, plan
        rounds += 1
        if not pending_stages:
            try:
                vd = admit_next_victim(slack, order)
            except NoVictimAvailable:
                detail = f"; last violations: {[v.kind for v in last_violations]}" if last_violations else ""
                raise Unschedulable(f"task {d}: no feasible plan with every victim admitted{detail}") from None
            order.append(vd)
            admitted[vd] = []
            vrec = state.tasks[vd]
            live = {vrec.pipe.execs[k[2]].stage for k, e in state.x[vd].items()
                    if e.t + vrec.pipe.length(k) > t_now}
            pending_stages = sorted(live, reverse=True)  # downstream first
            if not pending_stages:
                continue
        admitted[order[-1]].append(pending_stages.pop(0))
