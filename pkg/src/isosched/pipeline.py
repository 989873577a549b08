"""DAG-to-pipeline conversion and the tile-level view of one task.

Elementwise layers are fused into their producers, compute layers are grouped
into contiguous stages (one engine per stage), LCS balances the stages, and
every resulting layer slice becomes an execution node whose rows are tiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import EmptyWorkload
from .graph import ConvDims, LayerNode, TaskDag, _kahn
from .lcs import BalanceReport, LayerSlice, Segment, StageCost, balance
from .tensors import TaskConstraints, TileKey, TileSpec
from .tiles import LatencyTable, tiles_of_layer


def fuse_elementwise(dag: TaskDag) -> tuple[list[int], list[tuple[int, int]]]:
    """Compute-bearing nodes in topological order and the edges between them after
    contracting elementwise nodes (paths through elementwise nodes become edges)."""
    succ = dag.successors()
    compute = [n.id for n in dag.nodes if n.compute_bearing]
    if not compute:
        raise EmptyWorkload(f"task {dag.task_id} has no compute-bearing layer")
    edges = set()
    for u in compute:
        stack = list(succ[u])
        seen = set()
        while stack:
            w = stack.pop()
            if w in seen:
                continue
            seen.add(w)
            if dag.nodes[w].compute_bearing:
                edges.add((u, w))
            else:
                stack.extend(succ[w])
    index = {v: k for k, v in enumerate(compute)}
    order = _kahn(len(compute), ((index[a], index[b]) for a, b in edges))
    return [compute[k] for k in order], sorted(edges)


def d2p(dag: TaskDag, cost: StageCost, max_stages: int) -> list[Segment]:
    """One segment per compute layer in topological order, then merge the adjacent
    pair with the smallest combined latency until at most ``max_stages`` remain."""
    order, _ = fuse_elementwise(dag)
    segs = []
    for k, v in enumerate(order):
        layer = dag.nodes[v]
        rows = tiles_of_layer(layer)
        segs.append(Segment(k, (LayerSlice(layer, layer, 0, rows, cost.slots(layer)),)))
    while len(segs) > max(1, max_stages):
        lat = [s.stage_latency for s in segs]
        j = min(range(len(segs) - 1), key=lambda k: (lat[k] + lat[k + 1], k))
        segs[j:j + 2] = [Segment(j, segs[j].members + segs[j + 1].members)]
    return [Segment(k, s.members) for k, s in enumerate(segs)]


@dataclass(frozen=True)
class ExecNode:
    n: int
    stage: int
    slice: LayerSlice

    @property
    def rows(self) -> range:
        return range(self.slice.row_lo, self.slice.row_hi)

    @property
    def out_units(self) -> int:
        """Data units one output row carries to a consumer."""
        d = self.slice.layer.dims
        if isinstance(d, ConvDims):
            return d.W_o * d.C_o
        return d.h * d.d_k


def _halo(layer: LayerNode) -> int:
    d = layer.dims
    return math.ceil((d.K_h - 1) / 2) if isinstance(d, ConvDims) else 0


def producer_rows(i: int, t_prod: int, t_cons: int, halo: int) -> range:
    """Producer rows consumer row ``i`` reads: the proportional range plus the kernel halo."""
    lo = (i * t_prod) // t_cons - halo
    hi = ((i + 1) * t_prod - 1) // t_cons + halo
    return range(max(0, lo), min(t_prod - 1, hi) + 1)


@dataclass
class TaskPipeline:
    task: TaskDag
    segments: list[Segment]
    report: BalanceReport | None
    execs: list[ExecNode] = field(default_factory=list)
    edges: list[tuple[int, int, int]] = field(default_factory=list)   # (k, src exec, dst exec)
    demand: dict[int, int] = field(default_factory=dict)              # k -> units per row
    preds: dict[TileKey, list[tuple[TileKey, int]]] = field(default_factory=dict)
    finals: tuple[TileKey, ...] = ()

    @property
    def d(self) -> int:
        return self.task.task_id

    @property
    def depth(self) -> int:
        return len(self.segments)

    def exec_order(self) -> list[int]:
        """Exec node ids in a dependency-respecting order (split parts may sit in later stages)."""
        return _kahn(len(self.execs), ((a, b) for _, a, b in self.edges))

    def tiles(self) -> list[TileKey]:
        return [(self.d, i, e.n) for e in self.execs for i in e.rows]

    def length(self, key: TileKey) -> int:
        return self.execs[key[2]].slice.t_slots

    def tile_specs(self) -> dict[TileKey, TileSpec]:
        window = (self.task.arrival, 1 << 40)
        return {k: TileSpec(self.length(k), window) for k in self.tiles()}

    def deps(self) -> list[tuple[TileKey, TileKey]]:
        return [(a, b) for b, ps in self.preds.items() for a, _ in ps]

    def stage_weight_bits(self, stage: int) -> int:
        return sum(m.layer.weight_bits for m in self.segments[stage].members)

    def macs(self, key: TileKey) -> int:
        return self.execs[key[2]].slice.layer.dims.macs_per_row()

    def constraints(self, arrival: int | None = None) -> TaskConstraints:
        return TaskConstraints(
            d=self.d,
            arrival=self.task.arrival if arrival is None else arrival,
            deadline=self.task.deadline,
            deps=tuple(self.deps()),
            finals=self.finals,
            edges=tuple(self.edges),
            critical=self.task.critical,
        )

    def successors(self) -> dict[TileKey, list[TileKey]]:
        out: dict[TileKey, list[TileKey]] = {}
        for b, ps in self.preds.items():
            for a, _ in ps:
                out.setdefault(a, []).append(b)
        return out


def expand_tiles(pipe: TaskPipeline) -> TaskPipeline:
    """Fill execs, exec edges, tile dependencies and final tiles from the segments."""
    dag = pipe.task
    d = dag.task_id
    execs = [ExecNode(n, s, m) for n, (s, m) in enumerate(
        (seg.seg_id, m) for seg in pipe.segments for m in seg.members)]
    by_layer: dict[int, list[ExecNode]] = {}
    for e in execs:
        by_layer.setdefault(e.slice.layer_id, []).append(e)
    _, fused = fuse_elementwise(dag)
    edge_ids: dict[tuple[int, int], int] = {}
    pairs: list[tuple[int, int]] = []
    preds: dict[TileKey, list[tuple[TileKey, int]]] = {(d, i, e.n): [] for e in execs for i in e.rows}
    raw: list[tuple[ExecNode, int, ExecNode, int]] = []
    for u, v in fused:
        t_prod = tiles_of_layer(dag.nodes[u])
        t_cons = tiles_of_layer(dag.nodes[v])
        halo = _halo(dag.nodes[v])
        for b in by_layer[v]:
            for i in b.rows:
                need = producer_rows(i, t_prod, t_cons, halo)
                for a in by_layer[u]:
                    for j in range(max(need.start, a.slice.row_lo), min(need.stop, a.slice.row_hi)):
                        raw.append((a, j, b, i))
                        if (a.n, b.n) not in edge_ids:
                            edge_ids[(a.n, b.n)] = -1
                            pairs.append((a.n, b.n))
    pairs.sort()
    for k, pair in enumerate(pairs):
        edge_ids[pair] = k
    for a, j, b, i in raw:
        preds[(d, i, b.n)].append(((d, j, a.n), edge_ids[(a.n, b.n)]))
    srcs = {a for a, _ in pairs}
    pipe.execs = execs
    pipe.edges = [(k, a, b) for k, (a, b) in enumerate(pairs)]
    pipe.demand = {k: execs[a].out_units for k, (a, b) in enumerate(pairs)}
    pipe.preds = preds
    pipe.finals = tuple((d, e.slice.row_hi - 1, e.n) for e in execs if e.n not in srcs)
    return pipe


def build_pipeline(dag: TaskDag, cost: StageCost, max_stages: int, capacity: int | None,
                   threshold: float, rebalance: bool = True) -> TaskPipeline:
    segs = d2p(dag, cost, max_stages)
    report = None
    if rebalance:
        report = balance(segs, capacity, cost, threshold, max_stages)
        segs = report.pipeline
    return expand_tiles(TaskPipeline(dag, segs, report))


def stage_cost(engine, timeslot: int, task_id: int | None = None,
               overrides: LatencyTable | None = None) -> StageCost:
    return StageCost(engine, timeslot, task_id, overrides)


def instantiate(template: TaskPipeline, task: TaskDag) -> TaskPipeline:
    """Rebind a compiled pipeline to another instance of the same DAG (new id, arrival)."""
    d = task.task_id

    def re(key: TileKey) -> TileKey:
        return (d, key[1], key[2])

    return TaskPipeline(
        task=task,
        segments=template.segments,
        report=template.report,
        execs=template.execs,
        edges=template.edges,
        demand=template.demand,
        preds={re(b): [(re(a), k) for a, k in ps] for b, ps in template.preds.items()},
        finals=tuple(re(f) for f in template.finals),
    )
