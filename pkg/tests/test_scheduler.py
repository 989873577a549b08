import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isosched.errors import NoVictimAvailable, Unschedulable, ZeroRemainingTime
from isosched.graph import TaskDag, WorkloadSet
from isosched.platform import PlatformConfig
from isosched.scheduler import (
    PreemptionPlan, SchedulerParams, SchedulerState, SlackEntry, admit_next_victim, build_preemptible_dag,
    latency_slack, preemption_overhead, schedule_task, score_plan, slack_table, stage_weight,
    weight_transfer_slots,
)
from isosched.sim import compile_workload
from isosched.tensors import check_deadline, validate_all
from helpers import chain_task, conv
from scenarios import contention


def test_slack_examples():
    assert latency_slack(10, 0, 5, 1, 4) == 8.0
    assert latency_slack(7, 7, 3, 2, 5) == 0.0
    assert latency_slack(10, 0, 5, 2, 5) == 5.0 and latency_slack(10, 0, 5, 1, 5) == 10.0
    with pytest.raises(ZeroRemainingTime):
        latency_slack(10, 0, 0, 1, 1)


def test_weight_transfer_examples():
    assert weight_transfer_slots(4096, 512) == 8
    assert weight_transfer_slots(0, 512) == 0
    assert weight_transfer_slots(1, 512) == 1
    assert preemption_overhead(4096, 512) == 16
    assert preemption_overhead(4096, 512, 1024) == 18


def _entry(d, W, critical=False):
    return SlackEntry(d, W, 1, 0, 0, 1, critical)


def test_admit_examples():
    assert admit_next_victim([_entry(1, 8.0), _entry(2, 3.0)], []) == 1
    assert admit_next_victim([_entry(0, 99.0, critical=True), _entry(1, 2.0)], []) == 1
    assert admit_next_victim([_entry(1, 8.0), _entry(2, 3.0)], [1]) == 2
    with pytest.raises(NoVictimAvailable):
        admit_next_victim([_entry(0, 1.0, critical=True)], [])
    assert admit_next_victim([_entry(3, 5.0), _entry(2, 5.0)], []) == 2  # tie: lowest id


def test_score_examples():
    assert score_plan(PreemptionPlan(0, {0: 0})) == 0
    upstream = PreemptionPlan(0, {}, cells=[(0, t, 1, 0, 4) for t in range(4)])
    downstream = PreemptionPlan(0, {}, cells=[(0, t, 1, 3, 4) for t in range(4)])
    assert stage_weight(3, 4) == 1.25 and stage_weight(0, 4) > stage_weight(3, 4)
    assert score_plan(downstream) == 5.0 < score_plan(upstream)
    assert score_plan(PreemptionPlan(0, {}, critical_miss=True)) == math.inf


def _state(pf, wl, params=SchedulerParams()):
    comp = compile_workload(wl, pf, params)
    return SchedulerState(pf, comp.timeslot), comp


def test_preemptible_dag_construction():
    pf = PlatformConfig(2, 2)
    wl = WorkloadSet((chain_task(0, [conv(0, H=16)]),))
    st, comp = _state(pf, wl)
    g = build_preemptible_dag(st, 0)
    assert len(g.vertices) == 4 and len(g.edges) == 8
    st, plan = schedule_task(comp.pipelines[0], st, 0, SchedulerParams())
    busy = plan.mapping[0]
    g = build_preemptible_dag(st, 1)
    assert len(g.vertices) == 3 and busy not in g.vertices
    assert all(busy not in e for e in g.edges)
    g = build_preemptible_dag(st, 1, {0: [0]})
    assert len(g.vertices) == 4 and g.provenance[busy] == ("Victim", 0, 0)


def test_empty_machine_three_stage():
    pf = PlatformConfig(2, 2)
    wl = WorkloadSet((chain_task(0, [conv(i, H=8) for i in range(3)]),))
    st, comp = _state(pf, wl, SchedulerParams(max_stages=3))
    pipe = comp.pipelines[0]
    assert pipe.depth == 3
    st, plan = schedule_task(pipe, st, 0, SchedulerParams(max_stages=3))
    assert plan.victims == [] and plan.disruption_score == 0
    engines = [plan.mapping[s] for s in range(3)]
    assert len(set(engines)) == 3
    for a, b in zip(engines, engines[1:]):
        assert abs(pf.coord(a).x - pf.coord(b).x) + abs(pf.coord(a).y - pf.coord(b).y) == 1
    x, y, cons = st.full_schedules()
    assert validate_all(x, y, cons, pf) == []


def _saturate(seed=0, victim_critical=False):
    wl, events, pf, params = contention(seed, victim_critical)
    comp = compile_workload(wl, pf, params)
    st = SchedulerState(pf, comp.timeslot)
    st, _ = schedule_task(comp.pipelines[0], st, 0, params)
    urgent = comp.pipelines[1].task.replace(arrival=events[1][1])
    from isosched.pipeline import instantiate
    return st, instantiate(comp.pipelines[1], urgent), params, pf


def test_saturated_machine_preempts_downstream():
    st, pipe, params, pf = _saturate()
    st, plan = schedule_task(pipe, st, pipe.task.arrival, params)
    assert plan.victims == [0]
    depth = st.record(0).pipe.depth
    stages = sorted(s for _, s in plan.victim_stages)
    assert stages == list(range(depth - len(stages), depth))  # a downstream suffix
    x, y, cons = st.full_schedules()
    assert validate_all(x, y, cons, pf, deadlines=False) == []
    assert check_deadline(x, cons[1]) == []
    assert st.audit[-1]["victims"] == [0] and st.audit[-1]["violations"] == []


def test_critical_only_machine_is_unschedulable():
    st, pipe, params, _ = _saturate(victim_critical=True)
    with pytest.raises(Unschedulable):
        schedule_task(pipe, st, pipe.task.arrival, params)


def test_non_preemptive_never_takes_victims():
    st, pipe, params, _ = _saturate()
    with pytest.raises(Unschedulable):
        schedule_task(pipe, st, pipe.task.arrival, params, preemptive=False)


def test_slack_table_values():
    st, pipe, params, _ = _saturate()
    t = pipe.task.arrival
    (entry,) = slack_table(st, t, pipe.task.priority)
    tau = st.task_finish(0) - t
    assert entry.W == pytest.approx(((4000 - t) / tau) / (1 / 5))


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_commits_are_feasible_and_protect_critical_tasks(seed):
    """Random small streams: every commit validates, and critical tasks keep their deadlines."""
    import random
    rng = random.Random(seed)
    pf = PlatformConfig(2, 2)
    tasks = []
    for d in range(rng.randint(2, 4)):
        n = rng.randint(1, 3)
        tasks.append(TaskDag(d, tuple(conv(i, H=rng.choice([4, 8, 16])) for i in range(n)),
                             tuple((i, i + 1) for i in range(n - 1)), deadline=rng.choice([60, 200, 2000]),
                             priority=rng.randint(1, 4), critical=rng.random() < 0.3,
                             arrival=rng.randint(0, 40)))
    wl = WorkloadSet(tuple(tasks))
    params = SchedulerParams(max_stages=3, mcts_iters=500, seed=seed)
    st_, comp = _state(pf, wl, params)
    committed_critical = []
    last_admissions = 0
    for task in sorted(tasks, key=lambda t: (t.arrival, t.task_id)):
        st_.retire(task.arrival)
        try:
            st_, plan = schedule_task(comp.pipelines[task.task_id], st_, task.arrival, params)
        except Unschedulable:
            continue
        x, y, cons = st_.full_schedules()
        assert validate_all(x, y, cons, pf, deadlines=False) == []
        if task.critical:
            committed_critical.append(task.task_id)
        for d in committed_critical:
            assert check_deadline(x, cons[d]) == []
        rec = st_.audit[-1]
        slack = rec["slack"]
        order = rec["admission_order"]
        # victims are admitted in non-increasing slack order among non-critical tasks
        assert [slack[d] for d in order] == sorted((slack[d] for d in order), reverse=True)
        assert len(st_.audit) == last_admissions + 1
        last_admissions += 1
