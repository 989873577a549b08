"""Timeslot replay of committed schedules, metrics, and reference baselines."""
from __future__ import annotations

import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import IsoSchedError, NoFeasibleRate, TableInconsistent, Unschedulable
from .graph import TaskDag, WorkloadSet
from .lcs import StageCost
from .pipeline import TaskPipeline, build_pipeline, fuse_elementwise, instantiate
from .platform import PlatformConfig
from .scheduler import SchedulerParams, SchedulerState, schedule_task
from .tensors import CommSchedule, link_loads, task_finish, window_hits
from .tiles import LatencyTable, base_timeslot, layer_latency, slots_for, tiles_of_layer

log = logging.getLogger(__name__)

SLA_THRESHOLDS = {"vision": 0.99, "translation": 0.97}
POLICIES = ("iso", "tss-nprm")


@dataclass(frozen=True)
class EnergyModel:
    hop_pj_per_bit: float = 0.64
    dram_pj_per_bit: float = 20.0
    mac_pj: float = 1.0

    def __post_init__(self) -> None:
        if min(self.hop_pj_per_bit, self.dram_pj_per_bit, self.mac_pj) < 0:
            raise ValueError("energy constants must be >= 0")

    @classmethod
    def of(cls, platform: PlatformConfig) -> "EnergyModel":
        return cls(platform.hop_energy, platform.dram_energy_per_bit, platform.mac_pj)

    def link_energy(self, bits: int, hops: int) -> float:
        return bits * hops * self.hop_pj_per_bit


@dataclass(frozen=True)
class ArrivalTrace:
    events: tuple[tuple[int, int], ...]  # (template task id, arrival slot)
    generator: str = "explicit"

    def __post_init__(self) -> None:
        slots = [t for _, t in self.events]
        if any(b < a for a, b in zip(slots, slots[1:])):
            raise ValueError("arrival slots must be non-decreasing")
        if any(t < 0 for t in slots):
            raise ValueError("arrival slots must be >= 0")

    @classmethod
    def poisson(cls, rate: float, n: int, templates: Sequence[int], seed: int) -> "ArrivalTrace":
        """``n`` arrivals with exponential gaps of mean 1/rate slots, rounded up to whole slots."""
        if rate <= 0:
            raise ValueError("rate must be > 0")
        rng = random.Random(seed)
        t = 0.0
        events = []
        for _ in range(n):
            t += rng.expovariate(rate)
            events.append((rng.choice(list(templates)), math.ceil(t)))
        return cls(tuple(events), f"poisson({rate},{seed})")


@dataclass
class SimResult:
    policy: str
    timeslot: int
    arrivals: dict[int, int] = field(default_factory=dict)
    deadlines: dict[int, int] = field(default_factory=dict)
    classes: dict[int, str] = field(default_factory=dict)
    templates: dict[int, int] = field(default_factory=dict)
    finish: dict[int, int | None] = field(default_factory=dict)
    rejected: list[int] = field(default_factory=list)
    link_energy: float = 0.0
    dram_energy: float = 0.0
    mac_energy: float = 0.0
    link_bits: dict[str, int] = field(default_factory=dict)
    audit: list[dict] = field(default_factory=list)
    aborted: bool = False
    table_text: str = ""

    @property
    def total_energy(self) -> float:
        return self.link_energy + self.dram_energy + self.mac_energy

    def met(self, d: int) -> bool:
        f = self.finish.get(d)
        return f is not None and f - self.arrivals[d] < self.deadlines[d]

    @property
    def sla_rate(self) -> float:
        if not self.arrivals:
            return 1.0
        return sum(self.met(d) for d in self.arrivals) / len(self.arrivals)

    @property
    def makespan(self) -> int:
        done = [f for f in self.finish.values() if f is not None]
        return max(done, default=0)

    def outcomes(self) -> list[tuple[str, bool]]:
        return [(self.classes[d], self.met(d)) for d in sorted(self.arrivals)]

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "timeslot_cycles": self.timeslot,
            "tasks": [
                {"d": d, "template": self.templates.get(d), "class": self.classes[d], "arrival": self.arrivals[d],
                 "deadline": self.deadlines[d], "finish": self.finish.get(d), "met": self.met(d)}
                for d in sorted(self.arrivals)
            ],
            "rejected": sorted(self.rejected),
            "sla_rate": self.sla_rate,
            "makespan": self.makespan,
            "energy_pj": {"link": self.link_energy, "dram": self.dram_energy, "mac": self.mac_energy,
                          "total": self.total_energy},
            "link_bits": dict(sorted(self.link_bits.items())),
            "audit": self.audit,
            "aborted": self.aborted,
        }


@dataclass
class SlaReport:
    rates: dict[str, float]
    counts: dict[str, int]
    satisfied: dict[str, bool]
    vacuous: list[str]

    @property
    def all_satisfied(self) -> bool:
        return all(self.satisfied.values())

    @property
    def rate(self) -> float:
        total = sum(self.counts.values())
        return sum(self.rates[c] * self.counts[c] for c in self.counts) / total if total else 1.0


def measure_sla(outcomes: Iterable[tuple[str, bool]], thresholds: dict[str, float] | None = None) -> SlaReport:
    """Per-class on-time fraction; a class with no instances is vacuously satisfied and flagged."""
    thresholds = thresholds or SLA_THRESHOLDS
    hits: dict[str, list[bool]] = defaultdict(list)
    for cls, met in outcomes:
        if cls not in thresholds:
            raise ValueError(f"unknown SLA class {cls!r}")
        hits[cls].append(bool(met))
    rates, counts, sat, vacuous = {}, {}, {}, []
    for cls, thr in sorted(thresholds.items()):
        xs = hits.get(cls, [])
        counts[cls] = len(xs)
        if not xs:
            rates[cls] = 1.0
            sat[cls] = True
            vacuous.append(cls)
        else:
            rates[cls] = sum(xs) / len(xs)
            sat[cls] = rates[cls] >= thr
    return SlaReport(rates, counts, sat, vacuous)


# ---------------------------------------------------------------------------
# Compilation and replay
# ---------------------------------------------------------------------------


@dataclass
class Compiled:
    timeslot: int
    pipelines: dict[int, TaskPipeline]


def compile_workload(workload: WorkloadSet, platform: PlatformConfig, params: SchedulerParams,
                     overrides: LatencyTable | None = None, rebalance: bool = True) -> Compiled:
    ts = base_timeslot(workload, platform.engine, overrides)
    stages = params.max_stages or platform.n_engines
    pipes = {}
    for task in workload.tasks:
        cost = StageCost(platform.engine, ts, task.task_id, overrides)
        pipes[task.task_id] = build_pipeline(task, cost, min(stages, platform.n_engines),
                                             platform.buffer_capacity, params.lcs_threshold, rebalance)
    return Compiled(ts, pipes)


def replay(state: SchedulerState) -> dict[int, int]:
    """Re-execute the committed table and return per-task finish slots.

    Every tile must find its same-engine producers finished and its cross-engine
    inputs delivered by a transfer that completed before it starts; engines and
    links must never be oversubscribed.
    """
    pf = state.platform
    x, y, cons = state.full_schedules()
    delivered: dict[tuple[int, int, int], int] = {}
    for e in y.entries:
        key = (e.d, e.i, e.k)
        delivered[key] = max(delivered.get(key, -1), e.t + 1)
    starts = {(e.d, e.i, e.n): e for e in x.entries}
    spans: dict[int, list[tuple[int, int, str]]] = defaultdict(list)
    for e in x.entries:
        spans[e.p].append((e.t, e.t + state.length((e.d, e.i, e.n)), f"X{(e.d, e.i, e.n)}"))
    for r in state.reconfigs:
        spans[r.p].append((r.t, r.t + r.length, f"R{(r.d, r.direction)}"))
    for p, ivs in spans.items():
        ivs.sort()
        for (s0, e0, a), (s1, _, b) in zip(ivs, ivs[1:]):
            if s1 < e0:
                raise TableInconsistent(f"engine {p}: {a} and {b} overlap at slot {s1}")
    for d in cons:
        rec = state.record(d)
        for b, preds in rec.pipe.preds.items():
            eb = starts.get(b)
            if eb is None:
                raise TableInconsistent(f"tile {b} never runs")
            for a, k in preds:
                ea = starts[a]
                fin = ea.t + rec.pipe.length(a)
                if ea.p == eb.p:
                    ready = fin
                else:
                    got = delivered.get((d, a[1], k))
                    if got is None:
                        raise TableInconsistent(f"tile {b} on engine {eb.p} reads {a} from engine {ea.p} "
                                                f"without a transfer")
                    first = min(e.t for e in rec_transfers(state, d, a[1], k))
                    if first < fin:
                        raise TableInconsistent(f"transfer of {a} starts at {first} before it finishes at {fin}")
                    ready = got
                if eb.t < ready:
                    raise TableInconsistent(f"tile {b} starts at {eb.t} before its input {a} is ready at {ready}")
    for (link, t), units in link_loads(y, pf.link_bw).items():
        if units > pf.link_bw:
            raise TableInconsistent(f"link {link} carries {units} > {pf.link_bw} at slot {t}")
    hits = window_hits(x)
    return {d: task_finish(x, c.finals, hits) for d, c in cons.items()}


def rec_transfers(state: SchedulerState, d: int, i: int, k: int):
    return state.y[d][(d, i, k)]


def implied_finish(state: SchedulerState) -> dict[int, int]:
    """Finish slots read straight off the compute tensor."""
    x, _, cons = state.full_schedules()
    hits = window_hits(x)
    return {d: task_finish(x, c.finals, hits) for d, c in cons.items()}


def link_bits_of(y: CommSchedule, link_bw: int, act_bits: int) -> dict[str, int]:
    """Bits carried per link; a transfer over h hops is counted once on each of its h links."""
    bits: dict[str, int] = defaultdict(int)
    for (link, _), units in link_loads(y, link_bw).items():
        bits[str(link)] += units * act_bits
    return dict(sorted(bits.items()))


def link_energy_of(bits: dict[str, int], em: EnergyModel) -> float:
    # integer bit total first, so the result cannot depend on transfer order
    return em.link_energy(sum(bits.values()), 1)


def _energy(state: SchedulerState, result: SimResult) -> None:
    pf = state.platform
    em = EnergyModel.of(pf)
    x, y, _ = state.full_schedules()
    result.link_bits = link_bits_of(y, pf.link_bw, pf.act_bits)
    result.link_energy = link_energy_of(result.link_bits, em)
    result.dram_energy = state.dram_bits * em.dram_pj_per_bit
    result.mac_energy = sum(state.record(e.d).pipe.macs((e.d, e.i, e.n)) for e in x.entries) * em.mac_pj


def simulate(workload: WorkloadSet, trace: ArrivalTrace, platform: PlatformConfig,
             params: SchedulerParams = SchedulerParams(), policy: str = "iso",
             overrides: LatencyTable | None = None, compiled: Compiled | None = None,
             abort_after_misses: int | None = None, keep_table: bool = False) -> SimResult:
    """Admit every arrival in order, then replay and account the committed table."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    compiled = compiled or compile_workload(workload, platform, params, overrides)
    state = SchedulerState(platform, compiled.timeslot)
    result = SimResult(policy, compiled.timeslot)
    preemptive = policy == "iso"
    misses = 0
    for d, (tid, arr) in enumerate(trace.events):
        tmpl = workload.task(tid)
        task = tmpl.replace(task_id=d, arrival=arr)
        pipe = instantiate(compiled.pipelines[tid], task)
        result.arrivals[d] = arr
        result.deadlines[d] = task.deadline
        result.classes[d] = task.sla_class
        result.templates[d] = tid
        state.retire(arr)
        t = arr
        while True:
            try:
                state, plan = schedule_task(pipe, state, t, params, preemptive=preemptive,
                                            enforce_deadlines=preemptive)
                result.finish[d] = plan.finish
                break
            except Unschedulable as exc:
                # the preemptive scheduler already tried waiting, so only the queueing policy retries
                nxt = None if preemptive else state.next_free_time(t)
                if nxt is None:
                    log.info("task %d rejected: %s", d, exc)
                    result.rejected.append(d)
                    result.finish[d] = None
                    break
                t = nxt
        if not result.met(d):
            misses += 1
            if abort_after_misses is not None and misses > abort_after_misses:
                result.aborted = True
                break
    if not result.aborted:
        # victims move when preempted, so read final finishes off the committed tensor
        implied = implied_finish(state)
        for d in result.finish:
            if result.finish[d] is not None:
                result.finish[d] = implied[d]
        finishes = replay(state)
        if finishes != implied:
            raise TableInconsistent("replayed finish times differ from the committed tensor")
    _energy(state, result)
    result.audit = state.audit
    if keep_table:
        result.table_text = state.table().to_text()
    result.state = state  # type: ignore[attr-defined]
    return result


# ---------------------------------------------------------------------------
# Latency-bound throughput
# ---------------------------------------------------------------------------


@dataclass
class LbtResult:
    rate: float                   # tasks per slot
    qps: float
    probes: list[tuple[float, float, bool, float]]  # (rate, sla_rate, satisfied, energy pJ)
    hit_upper: bool = False


def measure_lbt(workload: WorkloadSet, platform: PlatformConfig, lo: float, hi: float, seed: int,
                params: SchedulerParams = SchedulerParams(), policy: str = "iso", iterations: int = 12,
                arrivals: int = 500, overrides: LatencyTable | None = None,
                thresholds: dict[str, float] | None = None) -> LbtResult:
    """Largest Poisson rate in [lo, hi] (tasks/slot) at which every SLA class holds."""
    if iterations < 12 or arrivals < 500:
        raise ValueError("LBT needs at least 12 bisection steps and 500 arrivals per probe")
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    thresholds = thresholds or SLA_THRESHOLDS
    if policy not in (*POLICIES, "lts"):
        raise ValueError(f"unknown policy {policy!r}")
    compiled = compile_workload(workload, platform, params, overrides)
    ids = [t.task_id for t in workload.tasks]
    allowed = math.floor((1 - min(thresholds.values())) * arrivals + 1e-9)
    probes = []

    def ok(rate: float) -> bool:
        trace = ArrivalTrace.poisson(rate, arrivals, ids, seed)
        if policy == "lts":
            res = baseline_lts(workload, trace, platform, overrides)
        else:
            res = simulate(workload, trace, platform, params, policy, overrides, compiled, abort_after_misses=allowed)
        sat = not res.aborted and measure_sla(res.outcomes(), thresholds).all_satisfied
        probes.append((rate, res.sla_rate, sat, res.total_energy))
        return sat

    def qps(rate: float) -> float:
        return rate * platform.engine.clock_hz / compiled.timeslot

    if not ok(lo):
        exc = NoFeasibleRate(f"SLA fails even at {lo} tasks/slot")
        exc.probes = probes
        raise exc
    if ok(hi):
        return LbtResult(hi, qps(hi), probes, hit_upper=True)
    a, b = lo, hi
    for _ in range(iterations):
        mid = (a + b) / 2
        if ok(mid):
            a = mid
        else:
            b = mid
    return LbtResult(a, qps(a), probes)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def lts_task_latency(task: TaskDag, platform: PlatformConfig, timeslot: int,
                     overrides: LatencyTable | None = None) -> tuple[int, int]:
    """(slots, DRAM bits) for one layer-serial execution of ``task``."""
    order, edges = fuse_elementwise(task)
    P = platform.n_engines
    total = 0
    for v in order:
        layer = task.nodes[v]
        ell = slots_for(layer_latency(layer, platform.engine, task.task_id, overrides), timeslot)
        total += math.ceil(tiles_of_layer(layer) / P) * ell
    dram_bits = 0
    for u, _ in edges:
        layer = task.nodes[u]
        d = layer.dims
        per_row = d.W_o * d.C_o if hasattr(d, "W_o") else d.h * d.d_k
        bits = tiles_of_layer(layer) * per_row * platform.act_bits
        total += math.ceil(bits / platform.dram_bw)
        dram_bits += 2 * bits
    return total, dram_bits


def baseline_lts(workload: WorkloadSet, trace: ArrivalTrace, platform: PlatformConfig,
                 overrides: LatencyTable | None = None) -> SimResult:
    """Layer-serial execution across the whole machine, tasks served first-come first-served."""
    ts = base_timeslot(workload, platform.engine, overrides)
    em = EnergyModel.of(platform)
    result = SimResult("lts", ts)
    free_at = 0
    dram_bits = 0
    macs = 0
    for d, (tid, arr) in enumerate(trace.events):
        task = workload.task(tid)
        slots, bits = lts_task_latency(task, platform, ts, overrides)
        start = max(arr, free_at)
        free_at = start + slots
        result.arrivals[d] = arr
        result.deadlines[d] = task.deadline
        result.classes[d] = task.sla_class
        result.templates[d] = tid
        result.finish[d] = free_at
        dram_bits += bits
        macs += sum(tiles_of_layer(n) * n.dims.macs_per_row() for n in task.nodes if n.compute_bearing)
    result.dram_energy = dram_bits * em.dram_pj_per_bit
    result.mac_energy = macs * em.mac_pj
    return result


def baseline_tss_nprm(workload: WorkloadSet, trace: ArrivalTrace, platform: PlatformConfig,
                      params: SchedulerParams = SchedulerParams(), overrides: LatencyTable | None = None,
                      compiled: Compiled | None = None) -> SimResult:
    """Same tile pipelines and matching, but no victims: arrivals wait for free engines."""
    return simulate(workload, trace, platform, params, "tss-nprm", overrides, compiled)


def run_policy(policy: str, workload: WorkloadSet, trace: ArrivalTrace, platform: PlatformConfig,
               params: SchedulerParams = SchedulerParams(), overrides: LatencyTable | None = None,
               keep_table: bool = False) -> SimResult:
    if policy == "lts":
        return baseline_lts(workload, trace, platform, overrides)
    return simulate(workload, trace, platform, params, policy, overrides, keep_table=keep_table)


__all__ = [
    "ArrivalTrace", "EnergyModel", "IsoSchedError", "LbtResult", "SimResult", "SlaReport", "SLA_THRESHOLDS",
    "baseline_lts", "baseline_tss_nprm", "compile_workload", "implied_finish", "measure_lbt", "measure_sla",
    "link_bits_of", "link_energy_of", "replay", "run_policy", "simulate",
]
