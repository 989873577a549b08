"""Subgraph isomorphism over boolean CSR adjacency matrices.

``mcu_search`` is a Monte Carlo tree search over complete injective mappings,
moved around by swap/move actions and rewarded +1 exactly when the mapped
pattern ``M^T A M`` is contained in the target ``B``. ``ullmann_oracle`` is an
exhaustive Ullmann backtracking used as ground truth at desk scale.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ShapeMismatch, SizeLimitExceeded
from .graph import CsrMatrix

Mapping = tuple[int, ...]  # row i of A -> column img[i] of B
Action = tuple[str, int, int]

ORACLE_MAX_A = 10
ORACLE_MAX_B = 12


@dataclass(frozen=True)
class McuParams:
    max_iterations: int = 5000
    exploration_c: float = math.sqrt(2)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.exploration_c <= 0:
            raise ValueError("exploration constant must be > 0")


@dataclass(eq=False)
class SearchNode:
    mapping: Mapping
    parent: "SearchNode | None" = None
    N: int = 0
    Q: float = 0.0
    children: list["SearchNode"] = field(default_factory=list)
    terminal: bool = False
    exhausted: bool = False
    pending: list[Action] | None = None  # untried actions, consumed from the end


@dataclass
class MatchResult:
    mapping: Mapping
    reward: int
    iterations: int
    root: SearchNode | None = None
    exhausted: bool = False

    def as_csr(self, m: int) -> CsrMatrix:
        return mapping_to_csr(self.mapping, m)


def mapping_to_csr(img: Sequence[int], m: int) -> CsrMatrix:
    return CsrMatrix(len(img), m, tuple(range(len(img) + 1)), tuple(img))


def mapping_from_csr(M: CsrMatrix) -> Mapping:
    if any(M.row_ptr[r + 1] - M.row_ptr[r] != 1 for r in range(M.n_rows)):
        raise ShapeMismatch("mapping matrix needs exactly one 1 per row")
    img = M.col_idx
    if len(set(img)) != len(img):
        raise ShapeMismatch("mapping matrix columns must be distinct")
    return tuple(img)


def ucb_score(child: SearchNode, parent_N: int, C: float) -> float:
    if child.N == 0:
        return math.inf
    return child.Q / child.N + C * math.sqrt(math.log(parent_N) / child.N)


def evaluate(M: CsrMatrix, A: CsrMatrix, B: CsrMatrix) -> int:
    """+1 when every edge of M^T A M is an edge of B, else -1."""
    n, m = M.n_rows, M.n_cols
    if A.n_rows != n or A.n_cols != n or B.n_rows != m or B.n_cols != m:
        raise ShapeMismatch(f"A {A.n_rows}x{A.n_cols}, M {n}x{m}, B {B.n_rows}x{B.n_cols}")
    C = M.transpose().matmul(A.matmul(M))
    return 1 if C.is_subset_of(B) else -1


def _fast_contained(img: Mapping, a_edges: Sequence[tuple[int, int]], B: CsrMatrix) -> bool:
    return all(B.has(img[i], img[j]) for i, j in a_edges)


def generate_actions(img: Mapping, m: int, allowed: Sequence[set[int]] | None = None) -> list[Action]:
    """Swaps of two rows' images, then moves of one row onto an unused column.

    With ``allowed`` (per-row candidate columns) only actions whose result keeps
    every touched row inside its candidate set are produced.
    """
    n = len(img)
    ok = (lambda i, c: True) if allowed is None else (lambda i, c: c in allowed[i])
    actions: list[Action] = [("swap", i, j) for i in range(n) for j in range(i + 1, n)
                             if ok(i, img[j]) and ok(j, img[i])]
    used = set(img)
    free = [c for c in range(m) if c not in used]
    actions.extend(("move", i, c) for i in range(n) for c in free if ok(i, c))
    return actions


def apply_action(img: Mapping, action: Action) -> Mapping:
    kind, a, b = action
    out = list(img)
    if kind == "swap":
        out[a], out[b] = out[b], out[a]
    else:
        out[a] = b
    return tuple(out)


def degree_candidates(A: CsrMatrix, B: CsrMatrix) -> list[list[int]]:
    """Ullmann's initial candidate matrix: B-nodes whose in/out degree covers the A-node's."""
    ao, ai = A.out_degrees(), A.in_degrees()
    bo, bi = B.out_degrees(), B.in_degrees()
    return [[c for c in range(B.n_rows) if ao[r] <= bo[c] and ai[r] <= bi[c]] for r in range(A.n_rows)]


def _has_row_matching(cands: list[list[int]]) -> bool:
    owner: dict[int, int] = {}

    def augment(r: int, seen: set[int]) -> bool:
        for c in cands[r]:
            if c in seen:
                continue
            seen.add(c)
            if c not in owner or augment(owner[c], seen):
                owner[c] = r
                return True
        return False

    return all(augment(r, set()) for r in range(len(cands)))


def _topo_or_index(A: CsrMatrix) -> list[int]:
    indeg = A.in_degrees()
    ready = sorted((v for v in range(A.n_rows) if indeg[v] == 0), key=lambda v: (-len(A.row(v)), v))
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for w in A.row(v):
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    rest = [v for v in range(A.n_rows) if v not in set(order)]
    return order + rest


def initial_mapping(A: CsrMatrix, B: CsrMatrix, priority: Sequence[int] | None = None,
                    candidates: Sequence[Sequence[int]] | None = None) -> Mapping:
    """Greedy injective start: A-nodes in topological order, each sent to the first
    unused degree-feasible B-node that is adjacent to its mapped neighbours' images
    and still leaves every unmapped neighbour a consistent candidate."""
    n, m = A.n_rows, B.n_rows
    order_b = list(priority) if priority is not None else list(range(m))
    rank = {c: k for k, c in enumerate(order_b)}
    cands = degree_candidates(A, B) if candidates is None else [sorted(c) for c in candidates]
    AT, BT = A.transpose(), B.transpose()
    img: dict[int, int] = {}
    used: set[int] = set()

    def consistent(v: int, c: int) -> bool:
        return all(B.has(c, img[w]) for w in A.row(v) if w in img) and \
            all(B.has(img[u], c) for u in AT.row(v) if u in img)

    def lookahead(v: int, c: int) -> bool:
        for w in A.row(v):
            if w not in img and not any(x not in used and x != c for x in set(cands[w]) & B.row_set(c)):
                return False
        for u in AT.row(v):
            if u not in img and not any(x not in used and x != c for x in set(cands[u]) & BT.row_set(c)):
                return False
        return True

    for v in _topo_or_index(A):
        feasible = sorted((c for c in cands[v] if c not in used), key=rank.__getitem__)
        ok = [c for c in feasible if consistent(v, c)]
        pick = next((c for c in ok if lookahead(v, c)), None)
        if pick is None:
            pick = ok[0] if ok else feasible[0] if feasible else \
                min((c for c in range(m) if c not in used), key=rank.__getitem__)
        img[v] = pick
        used.add(pick)
    return tuple(img[v] for v in range(n))


def _expand(node: SearchNode, m: int, seen: set[Mapping], rng: random.Random,
            allowed: Sequence[set[int]] | None = None) -> SearchNode | None:
    if node.pending is None:
        node.pending = generate_actions(node.mapping, m, allowed)
        rng.shuffle(node.pending)
        if not node.pending:
            node.terminal = True
    while node.pending:
        nxt = apply_action(node.mapping, node.pending.pop())
        if nxt not in seen:
            seen.add(nxt)
            child = SearchNode(nxt, parent=node)
            node.children.append(child)
            return child
    return None


def _backpropagate(node: SearchNode | None, r: int) -> None:
    while node is not None:
        node.N += 1
        node.Q += r
        node = node.parent


def mcu_search(A: CsrMatrix, B: CsrMatrix, params: McuParams = McuParams(),
               start: Mapping | None = None) -> MatchResult:
    n, m = A.n_rows, B.n_rows
    if A.n_cols != n or B.n_cols != m:
        raise ShapeMismatch("adjacency matrices must be square")
    if n > m:
        return MatchResult(tuple(range(min(n, m))), -1, 0)
    a_edges = A.edges()
    if n == 0:
        return MatchResult((), 1, 1)
    allowed = [set(r) for r in degree_candidates(A, B)]
    feasible = len(a_edges) <= B.nnz and _refine(allowed, A, A.transpose(), B, B.transpose()) \
        and _has_row_matching([sorted(r) for r in allowed])
    if not feasible:
        # no injective mapping survives the Ullmann candidate refinement
        return MatchResult(start or tuple(range(n)), -1, 0, exhausted=True)
    root_map = start if start is not None else initial_mapping(A, B, candidates=allowed)

    rng = random.Random(params.rng_seed)
    C = params.exploration_c

    def reward(img: Mapping) -> int:
        return 1 if _fast_contained(img, a_edges, B) else -1

    r = reward(root_map)
    best_map, best_r = root_map, r
    iterations = 1
    exhausted = False
    root = None
    # phase 0 searches the candidate-pruned space, which may be disconnected;
    # phase 1 falls back to the full swap/move space, which is connected
    for phase_allowed in (allowed, None):
        if best_r == 1 or iterations >= params.max_iterations:
            break
        root = SearchNode(root_map)
        seen = {root_map}
        _backpropagate(root, r)
        exhausted = False
        while best_r < 1 and iterations < params.max_iterations:
            v = root
            u = None
            while u is None:
                u = _expand(v, m, seen, rng, phase_allowed)
                if u is not None:
                    break
                live = [c for c in v.children if not c.exhausted]
                if not live:
                    v.exhausted = True
                    if v is root:
                        break
                    v = root
                    continue
                log_n = math.log(v.N)
                v = max(live, key=lambda c: c.Q / c.N + C * math.sqrt(log_n / c.N))
            if u is None:
                exhausted = True
                break
            iterations += 1
            ru = reward(u.mapping)
            _backpropagate(u, ru)
            if ru > best_r:
                best_map, best_r = u.mapping, ru
                u.terminal = True
    if best_r == 1:
        # re-check through the sparse M^T A M product before reporting success
        assert evaluate(mapping_to_csr(best_map, m), A, B) == 1
    return MatchResult(best_map, best_r, iterations, root, exhausted)


def random_start(A: CsrMatrix, B: CsrMatrix, seed: int) -> Mapping:
    order = list(range(B.n_rows))
    random.Random(seed).shuffle(order)
    allowed = [set(r) for r in degree_candidates(A, B)]
    if not _refine(allowed, A, A.transpose(), B, B.transpose()):
        allowed = None
    return initial_mapping(A, B, order, allowed)


# ---------------------------------------------------------------------------
# Exhaustive references
# ---------------------------------------------------------------------------


def _refine(cands: list[set[int]], A: CsrMatrix, AT: CsrMatrix, B: CsrMatrix, BT: CsrMatrix) -> bool:
    """Ullmann refinement: drop c from row i unless every A-neighbour of i has a candidate among c's B-neighbours."""
    changed = True
    while changed:
        changed = False
        for i, row in enumerate(cands):
            for c in list(row):
                ok = all(cands[x] & B.row_set(c) for x in A.row(i)) and \
                    all(cands[x] & BT.row_set(c) for x in AT.row(i))
                if not ok:
                    row.discard(c)
                    changed = True
            if not row:
                return False
    return True


def ullmann_oracle(A: CsrMatrix, B: CsrMatrix) -> tuple[bool, Mapping | None]:
    n, m = A.n_rows, B.n_rows
    if n > ORACLE_MAX_A or m > ORACLE_MAX_B:
        raise SizeLimitExceeded(f"oracle limited to |A|<={ORACLE_MAX_A}, |B|<={ORACLE_MAX_B}; got {n}, {m}")
    if n > m:
        return False, None
    AT, BT = A.transpose(), B.transpose()
    start = [set(r) for r in degree_candidates(A, B)]

    def search(depth: int, cands: list[set[int]], img: list[int]) -> list[int] | None:
        if depth == n:
            return img
        for c in sorted(cands[depth]):
            nxt = [set(s) for s in cands]
            nxt[depth] = {c}
            for r in range(depth + 1, n):
                nxt[r].discard(c)
            if _refine(nxt, A, AT, B, BT):
                found = search(depth + 1, nxt, img + [c])
                if found is not None:
                    return found
        return None

    if not _refine(start, A, AT, B, BT):
        return False, None
    witness = search(0, start, [])
    if witness is None:
        return False, None
    return True, tuple(witness)


def backtrack_expansions(A: CsrMatrix, B: CsrMatrix, limit: int | None = None) -> tuple[bool, int]:
    """Plain depth-first Ullmann without refinement; returns (found, nodes expanded)."""
    n, m = A.n_rows, B.n_rows
    if n > m:
        return False, 0
    cands = degree_candidates(A, B)
    AT = A.transpose()
    img = [-1] * n
    used = [False] * m
    count = 0

    def ok(i: int, c: int) -> bool:
        for j in A.row(i):
            if j < i and not B.has(c, img[j]):
                return False
        for j in AT.row(i):
            if j < i and not B.has(img[j], c):
                return False
        return True

    def dfs(i: int) -> bool:
        nonlocal count
        if i == n:
            return True
        for c in cands[i]:
            if used[c]:
                continue
            count += 1
            if limit is not None and count >= limit:
                return False
            if not ok(i, c):
                continue
            img[i] = c
            used[c] = True
            if dfs(i + 1):
                return True
            used[c] = False
        return False

    return dfs(0), count


# ---------------------------------------------------------------------------
# Random instance families
# ---------------------------------------------------------------------------


def random_dag(n: int, p: float, rng: random.Random) -> CsrMatrix:
    """Random DAG: each forward pair (in a shuffled order) is an edge with probability p."""
    order = list(range(n))
    rng.shuffle(order)
    edges = [(order[a], order[b]) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    return CsrMatrix.from_edges(n, edges)


def planted_pair(n: int, m: int, p_a: float, p_extra: float, rng: random.Random) -> tuple[CsrMatrix, CsrMatrix]:
    """A random n-node DAG embedded in an m-node DAG under a random injection, plus noise edges."""
    A = random_dag(n, p_a, rng)
    img = rng.sample(range(m), n)
    rank = list(range(m))
    rng.shuffle(rank)
    # keep the target acyclic: order B-nodes so planted edges point forward
    a_order = _topo_or_index(A)
    slots = sorted(rank[c] for c in img)
    for v, s in zip(a_order, slots):
        rank[img[v]] = s
    edges = {(img[i], img[j]) for i, j in A.edges()}
    for a in range(m):
        for b in range(m):
            if rank[a] < rank[b] and rng.random() < p_extra:
                edges.add((a, b))
    return A, CsrMatrix.from_edges(m, sorted(edges))
