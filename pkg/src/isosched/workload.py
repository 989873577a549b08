"""Workload files (YAML or JSON) and seeded synthetic workload generators."""
from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import CycleDetected, InvariantError, ParseError
from .graph import ComplexityClass, ConvDims, LayerKind, LayerNode, MatMulDims, TaskDag, WorkloadSet
from .seeding import derive_seed

CONV_FIELDS = ("W_o", "H_o", "C_o", "K_h", "K_w", "C_in")
MATMUL_FIELDS = ("N_k", "h", "d_k", "n_q")
TASK_FIELDS = {"id", "name", "deadline", "arrival", "priority", "critical", "sla_class", "nodes", "edges"}
NODE_FIELDS = {"id", "kind", "weight_bits", "fill", *CONV_FIELDS, *MATMUL_FIELDS}


class _LDict(dict):
    line = 0


class _LList(list):
    line = 0


class _LineLoader(yaml.SafeLoader):
    """Safe loader that remembers the source line of every mapping and sequence."""


def _mapping(loader: yaml.SafeLoader, node: yaml.MappingNode) -> _LDict:
    out = _LDict(loader.construct_mapping(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


def _sequence(loader: yaml.SafeLoader, node: yaml.SequenceNode) -> _LList:
    out = _LList(loader.construct_sequence(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping)
_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _sequence)


def _line(obj: Any, fallback: int = 0) -> int:
    return getattr(obj, "line", fallback)


def _int(value: Any, where: str, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{where}: field '{name}' must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ParseError(f"{where}: field '{name}' must be >= {minimum}, got {value}")
    return value


def _node(raw: Any, src: str, task_line: int) -> LayerNode:
    where = f"{src}:{_line(raw, task_line)}"
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: node must be a mapping")
    unknown = set(raw) - NODE_FIELDS
    if unknown:
        raise ParseError(f"{where}: unknown node fields {sorted(unknown)}")
    for req in ("id", "kind"):
        if req not in raw:
            raise ParseError(f"{where}: node is missing '{req}'")
    try:
        kind = LayerKind(raw["kind"])
    except ValueError:
        raise ParseError(f"{where}: kind must be one of {[k.value for k in LayerKind]}, got {raw['kind']!r}") from None
    dims = None
    if kind is LayerKind.CONV:
        dims = ConvDims(**{f: _int(raw.get(f), where, f) for f in CONV_FIELDS})
    elif kind is LayerKind.MATMUL:
        dims = MatMulDims(**{f: _int(raw.get(f), where, f) for f in MATMUL_FIELDS})
    else:
        stray = set(raw) & {*CONV_FIELDS, *MATMUL_FIELDS}
        if stray:
            raise InvariantError(f"{where}: Elementwise node carries dims {sorted(stray)}")
    fill = raw.get("fill")
    try:
        return LayerNode(_int(raw["id"], where, "id"), kind, dims,
                         _int(raw.get("weight_bits", 0), where, "weight_bits"),
                         None if fill is None else _int(fill, where, "fill"))
    except InvariantError as exc:
        raise InvariantError(f"{where}: {exc.args[0]}") from None


def _task(raw: Any, src: str, index: int) -> TaskDag:
    line = _line(raw)
    where = f"{src}:{line}"
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: task {index} must be a mapping")
    unknown = set(raw) - TASK_FIELDS
    if unknown:
        raise ParseError(f"{where}: unknown task fields {sorted(unknown)}")
    for req in ("nodes", "deadline"):
        if req not in raw:
            raise ParseError(f"{where}: task {index} is missing '{req}'")
    nodes_raw = raw["nodes"]
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise ParseError(f"{src}:{_line(nodes_raw, line)}: 'nodes' must be a non-empty list")
    nodes = tuple(_node(n, src, line) for n in nodes_raw)
    edges = []
    edges_raw = raw.get("edges", [])
    if not isinstance(edges_raw, list):
        raise ParseError(f"{src}:{_line(edges_raw, line)}: 'edges' must be a list of [src, dst] pairs")
    for e in edges_raw:
        if not (isinstance(e, list) and len(e) == 2):
            raise ParseError(f"{src}:{_line(e, _line(edges_raw, line))}: edge must be [src, dst], got {e!r}")
        edges.append((_int(e[0], where, "edge src"), _int(e[1], where, "edge dst")))
    critical = raw.get("critical", False)
    if not isinstance(critical, bool):
        raise ParseError(f"{where}: field 'critical' must be true or false")
    try:
        return TaskDag(
            task_id=_int(raw.get("id", index), where, "id", 0),
            nodes=nodes,
            edges=tuple(edges),
            deadline=_int(raw["deadline"], where, "deadline"),
            arrival=_int(raw.get("arrival", 0), where, "arrival"),
            priority=_int(raw.get("priority", 1), where, "priority"),
            critical=critical,
            name=str(raw.get("name", "")),
            sla_class=str(raw.get("sla_class", "vision")),
        )
    except CycleDetected as exc:
        raise InvariantError(f"{where}: {exc.args[0]}") from None
    except InvariantError as exc:
        raise InvariantError(f"{where}: {exc.args[0]}") from None


def infer_class(tasks: tuple[TaskDag, ...]) -> ComplexityClass:
    biggest = max(t.n_nodes for t in tasks)
    if biggest >= 500:
        return ComplexityClass.COMPLEX
    if biggest >= 100:
        return ComplexityClass.MIDDLE
    return ComplexityClass.SIMPLE


def workload_from_data(data: Any, src: str = "<data>") -> WorkloadSet:
    if not isinstance(data, dict) or "tasks" not in data:
        raise ParseError(f"{src}:{_line(data, 1)}: expected a mapping with a 'tasks' list")
    tasks_raw = data["tasks"]
    if not isinstance(tasks_raw, list) or not tasks_raw:
        raise ParseError(f"{src}:{_line(tasks_raw, 1)}: 'tasks' must be a non-empty list")
    tasks = tuple(_task(t, src, k) for k, t in enumerate(tasks_raw))
    cls_raw = data.get("complexity_class")
    try:
        cls = ComplexityClass(cls_raw) if cls_raw is not None else infer_class(tasks)
    except ValueError:
        raise ParseError(f"{src}:{_line(data, 1)}: unknown complexity_class {cls_raw!r}") from None
    try:
        return WorkloadSet(tasks, cls)
    except InvariantError as exc:
        raise InvariantError(f"{src}: {exc.args[0]}") from None


def parse_workload_text(text: str, src: str = "<text>") -> WorkloadSet:
    try:
        data = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ParseError(f"{src}:{line}: {getattr(exc, 'problem', None) or exc}") from None
    return workload_from_data(data, src)


def load_workload(path: str | Path) -> WorkloadSet:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such workload file")
    return parse_workload_text(path.read_text(), str(path))


def node_to_data(n: LayerNode) -> dict:
    out: dict[str, Any] = {"id": n.id, "kind": n.kind.value}
    if n.dims is not None:
        out.update(vars(n.dims))
    if n.weight_bits:
        out["weight_bits"] = n.weight_bits
    if n.fill is not None:
        out["fill"] = n.fill
    return out


def workload_to_data(ws: WorkloadSet) -> dict:
    return {
        "complexity_class": ws.complexity_class.value,
        "tasks": [
            {"id": t.task_id, "name": t.name, "deadline": t.deadline, "arrival": t.arrival,
             "priority": t.priority, "critical": t.critical, "sla_class": t.sla_class,
             "nodes": [node_to_data(n) for n in t.nodes], "edges": [list(e) for e in t.edges]}
            for t in ws.tasks
        ],
    }


def dump_workload(ws: WorkloadSet) -> str:
    return yaml.safe_dump(workload_to_data(ws), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    cls: ComplexityClass = ComplexityClass.SIMPLE
    n_tasks: int = 3
    node_range: tuple[int, int] | None = None
    edge_density: float = 0.1          # skip-edge probability for Simple/Middle
    priority_range: tuple[int, int] = (1, 4)
    deadline_range: tuple[int, int] = (400, 4000)
    critical_fraction: float = 0.25
    scale: str = "desk"                # "desk" or "full"

    def __post_init__(self) -> None:
        object.__setattr__(self, "cls", ComplexityClass(self.cls))
        if self.n_tasks < 1:
            raise ValueError("n_tasks must be >= 1")
        if self.scale not in ("desk", "full"):
            raise ValueError("scale must be 'desk' or 'full'")
        if not 0 <= self.edge_density <= 1 or not 0 <= self.critical_fraction <= 1:
            raise ValueError("densities and fractions must lie in [0, 1]")

    def nodes(self) -> tuple[int, int]:
        if self.node_range is not None:
            return self.node_range
        return {ComplexityClass.SIMPLE: (20, 40), ComplexityClass.MIDDLE: (100, 200),
                ComplexityClass.COMPLEX: (500, 600)}[self.cls]


class _Builder:
    def __init__(self) -> None:
        self.nodes: list[LayerNode] = []
        self.edges: list[tuple[int, int]] = []

    def conv(self, rng: random.Random, H: int, C_in: int, C_o: int, k: int = 3) -> int:
        W = H
        n = len(self.nodes)
        self.nodes.append(LayerNode(n, LayerKind.CONV, ConvDims(W, H, C_o, k, k, C_in), weight_bits=8 * k * k * C_in * C_o))
        return n

    def matmul(self, n_q: int, N_k: int, h: int, d_k: int) -> int:
        n = len(self.nodes)
        self.nodes.append(LayerNode(n, LayerKind.MATMUL, MatMulDims(N_k, h, d_k, n_q), weight_bits=8 * N_k * h * d_k))
        return n

    def elementwise(self) -> int:
        n = len(self.nodes)
        self.nodes.append(LayerNode(n, LayerKind.ELEMENTWISE))
        return n

    def edge(self, a: int, b: int) -> None:
        self.edges.append((a, b))


def _chain_dag(rng: random.Random, n_nodes: int, skip_p: float) -> _Builder:
    """Chain of convs with occasional residual adds (elementwise) and skip edges."""
    b = _Builder()
    H = rng.choice((8, 16))
    C = rng.choice((4, 8))
    prev = b.conv(rng, H, 3, C)
    while len(b.nodes) < n_nodes - 1:
        if rng.random() < skip_p and len(b.nodes) < n_nodes - 3:
            c1 = b.conv(rng, H, C, C)
            b.edge(prev, c1)
            add = b.elementwise()
            b.edge(c1, add)
            b.edge(prev, add)
            prev = add
        else:
            C2 = rng.choice((C, 2 * C)) if C < 32 else C
            nxt = b.conv(rng, H, C, C2, rng.choice((1, 3)))
            b.edge(prev, nxt)
            prev, C = nxt, C2
    sink = b.conv(rng, H, C, C, 1)
    b.edge(prev, sink)
    return b


def _branchy_dag(rng: random.Random, n_nodes: int, skip_p: float) -> _Builder:
    """Inception-like stacks: each module fans out to 2-4 branches and concatenates."""
    b = _Builder()
    H, C = 8, 8
    prev = b.conv(rng, H, 3, C)
    while len(b.nodes) < n_nodes - 6:
        tails = []
        for _ in range(rng.randint(2, 4)):
            depth = rng.randint(1, 2)
            cur = prev
            for _ in range(depth):
                nxt = b.conv(rng, H, C, C, rng.choice((1, 3)))
                b.edge(cur, nxt)
                cur = nxt
            tails.append(cur)
        cat = b.elementwise()
        for t in tails:
            b.edge(t, cat)
        if rng.random() < skip_p:
            b.edge(prev, cat)
        prev = cat
    sink = b.conv(rng, H, C, C, 1)
    b.edge(prev, sink)
    return b


def _transformer_dag(rng: random.Random, blocks: int, heads: int, n_q: int) -> _Builder:
    """Repeated attention blocks with per-head q/k/v, score and context nodes."""
    b = _Builder()
    d_k = 8
    prev = b.matmul(n_q, n_q, heads, d_k)  # embedding projection
    for _ in range(blocks):
        mask = b.elementwise()
        b.edge(prev, mask)
        concat = b.elementwise()
        for _ in range(heads):
            q, k, v = b.matmul(n_q, n_q, 1, d_k), b.matmul(n_q, n_q, 1, d_k), b.matmul(n_q, n_q, 1, d_k)
            score = b.matmul(n_q, n_q, 1, d_k)
            ctx = b.matmul(n_q, n_q, 1, d_k)
            for node in (q, k, v):
                b.edge(prev, node)
            b.edge(q, score)
            b.edge(k, score)
            b.edge(mask, score)
            b.edge(prev, score)
            b.edge(score, ctx)
            b.edge(v, ctx)
            b.edge(prev, ctx)
            b.edge(ctx, concat)
        proj = b.matmul(n_q, n_q, heads, d_k)
        b.edge(concat, proj)
        add1 = b.elementwise()
        b.edge(proj, add1)
        b.edge(prev, add1)
        ffn1 = b.matmul(n_q, n_q, heads, 2 * d_k)
        b.edge(add1, ffn1)
        act = b.elementwise()
        b.edge(ffn1, act)
        ffn2 = b.matmul(n_q, n_q, heads, d_k)
        b.edge(act, ffn2)
        add2 = b.elementwise()
        b.edge(ffn2, add2)
        b.edge(add1, add2)
        prev = add2
    head = b.matmul(n_q, n_q, heads, d_k)
    b.edge(prev, head)
    return b


def generate_synthetic(spec: SyntheticSpec, seed: int) -> WorkloadSet:
    """Seeded, acyclic, connected single-sink DAGs matching the class statistics."""
    tasks = []
    lo, hi = spec.nodes()
    factor = 10 if spec.scale == "full" else 1
    for k in range(spec.n_tasks):
        rng = random.Random(derive_seed(seed, "synthetic", spec.cls.value, k))
        if spec.cls is ComplexityClass.SIMPLE:
            b = _chain_dag(rng, rng.randint(lo, hi) * factor, spec.edge_density)
            sla = "vision"
        elif spec.cls is ComplexityClass.MIDDLE:
            b = _branchy_dag(rng, rng.randint(lo, hi) * factor, spec.edge_density)
            sla = "vision"
        else:
            heads = 8
            per_block = 5 * heads + 8
            blocks = max(1, -(-rng.randint(lo, hi) * factor // per_block))
            b = _transformer_dag(rng, blocks, heads, n_q=4)
            sla = "translation"
        tasks.append(TaskDag(
            task_id=k,
            nodes=tuple(b.nodes),
            edges=tuple(b.edges),
            deadline=rng.randint(*spec.deadline_range),
            arrival=0,
            priority=rng.randint(*spec.priority_range),
            critical=rng.random() < spec.critical_fraction,
            name=f"{spec.cls.value.lower()}-{k}",
            sla_class=sla,
        ))
    return WorkloadSet(tuple(tasks), spec.cls)


def arvr_workload() -> WorkloadSet:
    """MobileNetV2-, ResNet-50- and EfficientNet-shaped tasks at reduced dimensions."""

    def conv(i: int, H: int, C_in: int, C_o: int, k: int) -> LayerNode:
        return LayerNode(i, LayerKind.CONV, ConvDims(H, H, C_o, k, k, C_in), weight_bits=8 * k * k * C_in * C_o)

    # inverted residual: expand 1x1, depthwise-like 3x3, project 1x1, add
    mb = [conv(0, 16, 3, 8, 3), conv(1, 16, 8, 16, 1), conv(2, 16, 16, 16, 3), conv(3, 16, 16, 8, 1),
          LayerNode(4, LayerKind.ELEMENTWISE), conv(5, 8, 8, 16, 1), conv(6, 8, 16, 16, 3), conv(7, 8, 16, 16, 1)]
    mb_edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (4, 5), (5, 6), (6, 7)]
    # bottleneck blocks with identity shortcuts
    rn = [conv(0, 16, 3, 16, 3), conv(1, 16, 16, 8, 1), conv(2, 16, 8, 8, 3), conv(3, 16, 8, 16, 1),
          LayerNode(4, LayerKind.ELEMENTWISE), conv(5, 16, 16, 8, 1), conv(6, 16, 8, 8, 3), conv(7, 16, 8, 16, 1),
          LayerNode(8, LayerKind.ELEMENTWISE), conv(9, 8, 16, 32, 1)]
    rn_edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (4, 5), (5, 6), (6, 7), (7, 8), (4, 8), (8, 9)]
    # MBConv with squeeze-excitation gate
    ef = [conv(0, 16, 3, 8, 3), conv(1, 16, 8, 16, 1), conv(2, 16, 16, 16, 3), conv(3, 16, 16, 4, 1),
          conv(4, 16, 4, 16, 1), LayerNode(5, LayerKind.ELEMENTWISE), conv(6, 16, 16, 8, 1), conv(7, 8, 8, 16, 3)]
    ef_edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (2, 5), (5, 6), (6, 7)]
    return WorkloadSet((
        TaskDag(0, tuple(mb), tuple(mb_edges), deadline=3000, priority=2, name="mobilenetv2-lite"),
        TaskDag(1, tuple(rn), tuple(rn_edges), deadline=6000, priority=1, name="resnet50-lite"),
        TaskDag(2, tuple(ef), tuple(ef_edges), deadline=3000, priority=3, critical=True, name="efficientnet-lite"),
    ), ComplexityClass.SIMPLE)
