"""Task DAGs, layer nodes and boolean CSR matrices."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .errors import CycleDetected, InvariantError


class LayerKind(str, Enum):
    CONV = "Conv"
    MATMUL = "MatMul"
    ELEMENTWISE = "Elementwise"


@dataclass(frozen=True)
class ConvDims:
    W_o: int
    H_o: int
    C_o: int
    K_h: int
    K_w: int
    C_in: int

    def macs_per_row(self) -> int:
        return self.W_o * self.C_o * self.K_h * self.K_w * self.C_in


@dataclass(frozen=True)
class MatMulDims:
    N_k: int
    h: int
    d_k: int
    n_q: int  # query rows, one tile each

    def macs_per_row(self) -> int:
        return self.N_k * self.h * self.d_k


@dataclass(frozen=True)
class LayerNode:
    id: int
    kind: LayerKind
    dims: ConvDims | MatMulDims | None = None
    weight_bits: int = 0
    fill: int | None = None  # filling_time override, cycles

    def __post_init__(self) -> None:
        kind = LayerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        expected = {LayerKind.CONV: ConvDims, LayerKind.MATMUL: MatMulDims}.get(kind)
        if expected is None:
            if self.dims is not None:
                raise InvariantError(f"layer {self.id}: Elementwise layers carry no dims")
        else:
            if not isinstance(self.dims, expected):
                raise InvariantError(f"layer {self.id}: {kind.value} needs {expected.__name__}")
            for name, value in vars(self.dims).items():
                if not isinstance(value, int) or value < 1:
                    raise InvariantError(f"layer {self.id}: dim {name}={value!r} must be an integer >= 1")
        if self.weight_bits < 0:
            raise InvariantError(f"layer {self.id}: weight_bits must be >= 0")
        if self.fill is not None and self.fill < 0:
            raise InvariantError(f"layer {self.id}: fill must be >= 0")

    @property
    def compute_bearing(self) -> bool:
        return self.kind is not LayerKind.ELEMENTWISE


@dataclass(frozen=True)
class TaskDag:
    task_id: int
    nodes: tuple[LayerNode, ...]
    edges: tuple[tuple[int, int], ...]
    deadline: int
    arrival: int = 0
    priority: int = 1
    critical: bool = False
    name: str = ""
    sla_class: str = "vision"

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        ids = [n.id for n in self.nodes]
        if ids != list(range(len(ids))):
            raise InvariantError(f"task {self.task_id}: node ids must be 0..N-1 in order")
        for a, b in self.edges:
            if not (0 <= a < len(ids) and 0 <= b < len(ids)):
                raise InvariantError(f"task {self.task_id}: edge ({a},{b}) has an invalid endpoint")
        if self.deadline <= 0:
            raise InvariantError(f"task {self.task_id}: deadline must be > 0")
        if self.priority < 1:
            raise InvariantError(f"task {self.task_id}: priority must be >= 1")
        if self.arrival < 0:
            raise InvariantError(f"task {self.task_id}: arrival must be >= 0")
        topo_sort(self)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def successors(self) -> list[list[int]]:
        succ: list[list[int]] = [[] for _ in self.nodes]
        for a, b in self.edges:
            succ[a].append(b)
        return succ

    def predecessors(self) -> list[list[int]]:
        pred: list[list[int]] = [[] for _ in self.nodes]
        for a, b in self.edges:
            pred[b].append(a)
        return pred

    def replace(self, **changes) -> "TaskDag":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return TaskDag(**values)


class ComplexityClass(str, Enum):
    SIMPLE = "Simple"
    MIDDLE = "Middle"
    COMPLEX = "Complex"


@dataclass(frozen=True)
class WorkloadSet:
    tasks: tuple[TaskDag, ...]
    complexity_class: ComplexityClass = ComplexityClass.SIMPLE

    def __post_init__(self) -> None:
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "complexity_class", ComplexityClass(self.complexity_class))
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise InvariantError("workload task_ids must be unique")

    def task(self, task_id: int) -> TaskDag:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)


def _kahn(n: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    ready = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    return order


def topo_sort(dag: TaskDag) -> list[int]:
    """Topological order of node ids, smallest ready id first."""
    order = _kahn(dag.n_nodes, dag.edges)
    if len(order) != dag.n_nodes:
        stuck = sorted(set(range(dag.n_nodes)) - set(order))
        raise CycleDetected(f"task {dag.task_id}: cycle through nodes {stuck}")
    return order


# ---------------------------------------------------------------------------
# Boolean CSR
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsrMatrix:
    n_rows: int
    n_cols: int
    row_ptr: tuple[int, ...]
    col_idx: tuple[int, ...]
    _rows: tuple[frozenset, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "row_ptr", tuple(self.row_ptr))
        object.__setattr__(self, "col_idx", tuple(self.col_idx))
        rp, ci = self.row_ptr, self.col_idx
        if len(rp) != self.n_rows + 1 or rp[0] != 0 or rp[-1] != len(ci):
            raise InvariantError("row_ptr must have n_rows+1 entries from 0 to nnz")
        for r in range(self.n_rows):
            lo, hi = rp[r], rp[r + 1]
            if hi < lo:
                raise InvariantError("row_ptr must be non-decreasing")
            prev = -1
            for c in ci[lo:hi]:
                if c <= prev or c >= self.n_cols:
                    raise InvariantError(f"row {r}: column indices must be strictly increasing and < n_cols")
                prev = c
        object.__setattr__(self, "_rows", tuple(frozenset(ci[rp[r]:rp[r + 1]]) for r in range(self.n_rows)))

    @property
    def nnz(self) -> int:
        return len(self.col_idx)

    def row(self, r: int) -> tuple[int, ...]:
        return self.col_idx[self.row_ptr[r]:self.row_ptr[r + 1]]

    def row_set(self, r: int) -> frozenset:
        return self._rows[r]

    def has(self, r: int, c: int) -> bool:
        return c in self._rows[r]

    @classmethod
    def from_rows(cls, n_rows: int, n_cols: int, rows: Sequence[Iterable[int]]) -> "CsrMatrix":
        row_ptr = [0]
        col_idx: list[int] = []
        for r in range(n_rows):
            cols = sorted(set(rows[r]))
            col_idx.extend(cols)
            row_ptr.append(len(col_idx))
        return cls(n_rows, n_cols, tuple(row_ptr), tuple(col_idx))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], n_cols: int | None = None) -> "CsrMatrix":
        rows: list[set[int]] = [set() for _ in range(n)]
        for a, b in edges:
            rows[a].add(b)
        return cls.from_rows(n, n if n_cols is None else n_cols, rows)

    def edges(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.n_rows) for c in self.row(r)]

    def transpose(self) -> "CsrMatrix":
        rows: list[list[int]] = [[] for _ in range(self.n_cols)]
        for r in range(self.n_rows):
            for c in self.row(r):
                rows[c].append(r)
        return CsrMatrix.from_rows(self.n_cols, self.n_rows, rows)

    def matmul(self, other: "CsrMatrix") -> "CsrMatrix":
        """Boolean product by row gather; never densifies."""
        if self.n_cols != other.n_rows:
            raise ValueError(f"cannot multiply {self.n_rows}x{self.n_cols} by {other.n_rows}x{other.n_cols}")
        rows = []
        for r in range(self.n_rows):
            acc: set[int] = set()
            for k in self.row(r):
                acc.update(other.row(k))
            rows.append(acc)
        return CsrMatrix.from_rows(self.n_rows, other.n_cols, rows)

    def is_subset_of(self, other: "CsrMatrix") -> bool:
        if (self.n_rows, self.n_cols) != (other.n_rows, other.n_cols):
            return False
        return all(self._rows[r] <= other._rows[r] for r in range(self.n_rows))

    def out_degrees(self) -> list[int]:
        return [self.row_ptr[r + 1] - self.row_ptr[r] for r in range(self.n_rows)]

    def in_degrees(self) -> list[int]:
        deg = [0] * self.n_cols
        for c in self.col_idx:
            deg[c] += 1
        return deg


def to_csr(dense: Sequence[Sequence[int | bool]]) -> CsrMatrix:
    n_rows = len(dense)
    n_cols = len(dense[0]) if n_rows else 0
    rows = []
    for r, row in enumerate(dense):
        if len(row) != n_cols:
            raise InvariantError(f"row {r} has {len(row)} columns, expected {n_cols}")
        rows.append([c for c, v in enumerate(row) if v])
    return CsrMatrix.from_rows(n_rows, n_cols, rows)


def from_csr(m: CsrMatrix) -> list[list[int]]:
    dense = [[0] * m.n_cols for _ in range(m.n_rows)]
    for r in range(m.n_rows):
        for c in m.row(r):
            dense[r][c] = 1
    return dense


def csr_footprint(m: CsrMatrix) -> int:
    """Stored index entries: column indices plus the row pointer array."""
    return m.nnz + m.n_rows + 1


def compression_ratio(m: CsrMatrix) -> float:
    return (m.n_rows * m.n_cols) / csr_footprint(m)


def dag_adjacency(dag: TaskDag) -> CsrMatrix:
    return CsrMatrix.from_edges(dag.n_nodes, dag.edges)
