"""Sparse compute/communication scheduling tensors and their constraint checkers.

The compute tensor holds one entry per (task d, tile group i, node n, start slot t,
engine p); the communication tensor one entry per (task d, tile group i, edge k,
slot t, link). Checkers never raise on infeasible data: violations are returned.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import FinalTileUnscheduled
from .platform import LinkId, PlatformConfig, manhattan_distance

TileKey = tuple[int, int, int]  # (d, i, n)
INF_SLOT = 1 << 40

KIND_ORDER = ("TileCompute", "TileOrder", "Deadline", "EngineCapacity", "EngineOverlap", "LinkBandwidth")


class ComputeEntry(NamedTuple):
    d: int
    i: int
    n: int
    t: int
    p: int


class CommEntry(NamedTuple):
    d: int
    i: int
    k: int
    t: int
    link: LinkId


@dataclass(frozen=True)
class TileSpec:
    length: int
    window: tuple[int, int] = (0, INF_SLOT)  # inclusive [S, L]


@dataclass
class ComputeSchedule:
    entries: list[ComputeEntry] = field(default_factory=list)
    tiles: dict[TileKey, TileSpec] = field(default_factory=dict)

    def length(self, key: TileKey) -> int:
        return self.tiles[key].length

    def by_tile(self) -> dict[TileKey, list[ComputeEntry]]:
        out: dict[TileKey, list[ComputeEntry]] = defaultdict(list)
        for e in self.entries:
            out[(e.d, e.i, e.n)].append(e)
        return out


@dataclass
class CommSchedule:
    entries: list[CommEntry] = field(default_factory=list)
    demand: dict[tuple[int, int], int] = field(default_factory=dict)  # (d, k) -> units


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: tuple
    t: int | None = None
    detail: str = ""

    def sort_key(self) -> tuple:
        return (KIND_ORDER.index(self.kind), -1 if self.t is None else self.t, repr(self.subject))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "subject": list(self.subject), "t": self.t, "detail": self.detail}


@dataclass(frozen=True)
class TaskConstraints:
    """Tile-level view of one task, as needed by the checkers."""

    d: int
    arrival: int
    deadline: int
    deps: tuple[tuple[TileKey, TileKey], ...]
    finals: tuple[TileKey, ...]
    edges: tuple[tuple[int, int, int], ...] = ()  # (k, src node, dst node)
    critical: bool = False


def _sorted(vs: Iterable[Violation]) -> list[Violation]:
    return sorted(vs, key=Violation.sort_key)


def window_hits(x: ComputeSchedule) -> dict[TileKey, list[ComputeEntry]]:
    hits: dict[TileKey, list[ComputeEntry]] = defaultdict(list)
    for e in x.entries:
        key = (e.d, e.i, e.n)
        spec = x.tiles.get(key)
        if spec is not None and spec.window[0] <= e.t <= spec.window[1]:
            hits[key].append(e)
    return hits


def check_tile_compute(x: ComputeSchedule, tiles: Iterable[TileKey] | None = None, hits=None) -> list[Violation]:
    hits = window_hits(x) if hits is None else hits
    out = []
    for key in (x.tiles if tiles is None else tiles):
        c = len(hits.get(key, ()))
        if c != 1:
            out.append(Violation("TileCompute", key, None, f"scheduled {c} times in window"))
    return _sorted(out)


def check_tile_order(x: ComputeSchedule, deps: Iterable[tuple[TileKey, TileKey]], hits=None) -> list[Violation]:
    hits = window_hits(x) if hits is None else hits
    out = []
    for a, b in deps:
        ha, hb = hits.get(a, ()), hits.get(b, ())
        if len(ha) != 1 or len(hb) != 1:
            continue  # reported by check_tile_compute
        ta, tb = ha[0].t, hb[0].t
        if ta - tb > -x.length(a):
            out.append(Violation("TileOrder", (a, b), tb, f"t_a={ta} len_a={x.length(a)} t_b={tb}"))
    return _sorted(out)


def task_finish(x: ComputeSchedule, finals: Sequence[TileKey], hits=None) -> int:
    hits = window_hits(x) if hits is None else hits
    finish = None
    for key in finals:
        h = hits.get(key, ())
        if not h:
            raise FinalTileUnscheduled(f"final tile {key} has no entry")
        f = max(e.t for e in h) + x.length(key)
        finish = f if finish is None else max(finish, f)
    return finish


def check_deadline(x: ComputeSchedule, task: TaskConstraints, hits=None) -> list[Violation]:
    finish = task_finish(x, task.finals, hits)
    if finish - task.arrival < task.deadline:
        return []
    return [Violation("Deadline", (task.d,), finish,
                      f"finish {finish} - arrival {task.arrival} >= deadline {task.deadline}")]


def _occupancy(entries: Iterable[tuple[int, int]]) -> list[tuple[int, int, int]]:
    """(start, end, count) runs of concurrent spans; spans are (t, length)."""
    events: dict[int, int] = defaultdict(int)
    for t, length in entries:
        events[t] += 1
        events[t + length] -= 1
    runs = []
    level = 0
    times = sorted(events)
    for a, b in zip(times, times[1:]):
        level += events[a]
        if level:
            runs.append((a, b, level))
    return runs


def check_engine_capacity(x: ComputeSchedule, P: int) -> list[Violation]:
    spans = [(e.t, x.length((e.d, e.i, e.n))) for e in x.entries]
    out = []
    for a, b, level in _occupancy(spans):
        if level > P:
            out.extend(Violation("EngineCapacity", (), t, f"{level} busy > {P}") for t in range(a, b))
    return _sorted(out)


def check_engine_overlap(x: ComputeSchedule) -> list[Violation]:
    """Per-engine exclusivity: one tile per engine per slot."""
    per_engine: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for e in x.entries:
        per_engine[e.p].append((e.t, x.length((e.d, e.i, e.n))))
    out = []
    for p, spans in per_engine.items():
        for a, b, level in _occupancy(spans):
            if level > 1:
                out.extend(Violation("EngineOverlap", (p,), t, f"{level} tiles on engine {p}") for t in range(a, b))
    return _sorted(out)


def bandwidth_profile(bw: int, BW: int) -> list[int]:
    """Units sent per slot: full-bandwidth slots, then the remainder in the last slot."""
    if bw < 1 or BW < 1:
        raise ValueError("bw and BW must be >= 1")
    R = (bw - 1) // BW
    return [BW] * R + [bw - R * BW]


def transfer_value(bw: int, BW: int, t: int, t_start: int) -> int:
    """Units a transfer of ``bw`` started at ``t_start`` puts on a link at slot ``t``."""
    offset = t - t_start
    profile = bandwidth_profile(bw, BW)
    return profile[offset] if 0 <= offset < len(profile) else 0


def link_loads(y: CommSchedule, BW: int) -> dict[tuple[LinkId, int], int]:
    starts: dict[tuple[int, int, int, LinkId], int] = {}
    for e in y.entries:
        key = (e.d, e.i, e.k, e.link)
        starts[key] = min(starts.get(key, e.t), e.t)
    load: dict[tuple[LinkId, int], int] = defaultdict(int)
    for e in y.entries:
        bw = y.demand[(e.d, e.k)]
        load[(e.link, e.t)] += transfer_value(bw, BW, e.t, starts[(e.d, e.i, e.k, e.link)])
    return load


def check_link_bandwidth(y: CommSchedule, platform: PlatformConfig | int) -> list[Violation]:
    BW = platform if isinstance(platform, int) else platform.link_bw
    out = []
    for (link, t), units in link_loads(y, BW).items():
        if units > BW:
            out.append(Violation("LinkBandwidth", (str(link),), t, f"{units} units > {BW}"))
    return _sorted(out)


def check_links_valid(y: CommSchedule, platform: PlatformConfig) -> list[str]:
    known = platform.link_index
    return sorted({str(e.link) for e in y.entries if e.link not in known})


def node_engines(x: ComputeSchedule) -> dict[tuple[int, int], int]:
    """(d, n) -> engine of the node's first scheduled tile."""
    out: dict[tuple[int, int], tuple[int, int]] = {}
    for e in x.entries:
        key = (e.d, e.n)
        if key not in out or (e.t, e.i) < out[key][0:2]:
            out[key] = (e.t, e.i, e.p)
    return {k: v[2] for k, v in out.items()}


def comm_costs(x: ComputeSchedule, tasks: Mapping[int, TaskConstraints], platform: PlatformConfig) -> dict[int, int]:
    """Sum over task edges of the Manhattan distance between endpoint engines."""
    where = node_engines(x)
    out = {}
    for d, task in tasks.items():
        total = 0
        for _, a, b in task.edges:
            if (d, a) in where and (d, b) in where:
                total += manhattan_distance(platform.coord(where[(d, a)]), platform.coord(where[(d, b)]))
        out[d] = total
    return out


def validate_all(x: ComputeSchedule, y: CommSchedule, tasks: Mapping[int, TaskConstraints],
                 platform: PlatformConfig, deadlines: bool = True) -> list[Violation]:
    """Every constraint family; an empty list means the schedule is feasible."""
    hits = window_hits(x)
    out = check_tile_compute(x, hits=hits)
    out += check_tile_order(x, (dep for t in tasks.values() for dep in t.deps), hits)
    if deadlines:
        for task in tasks.values():
            if all(len(hits.get(k, ())) == 1 for k in task.finals):
                out += check_deadline(x, task, hits)
    out += check_engine_capacity(x, platform.n_engines)
    out += check_engine_overlap(x)
    out += check_link_bandwidth(y, platform)
    return _sorted(out)


# ---------------------------------------------------------------------------
# Schedule table
# ---------------------------------------------------------------------------


class Reconfig(NamedTuple):
    d: int          # task whose weights move
    direction: str  # "save" | "load" | "restore"
    t: int
    p: int
    length: int
    bits: int


@dataclass
class ScheduleTable:
    engine_streams: dict[int, list[tuple[int, TileKey]]]
    link_streams: dict[LinkId, list[tuple[int, tuple[int, int, int], int]]]
    reconfigs: list[Reconfig] = field(default_factory=list)

    @classmethod
    def build(cls, x: ComputeSchedule, y: CommSchedule, BW: int,
              reconfigs: Sequence[Reconfig] = ()) -> "ScheduleTable":
        engines: dict[int, list] = defaultdict(list)
        for e in x.entries:
            engines[e.p].append((e.t, (e.d, e.i, e.n)))
        links: dict[LinkId, list] = defaultdict(list)
        starts: dict[tuple, int] = {}
        for e in y.entries:
            key = (e.d, e.i, e.k, e.link)
            starts[key] = min(starts.get(key, e.t), e.t)
        for e in y.entries:
            units = transfer_value(y.demand[(e.d, e.k)], BW, e.t, starts[(e.d, e.i, e.k, e.link)])
            links[e.link].append((e.t, (e.d, e.i, e.k), units))
        return cls(
            {p: sorted(v) for p, v in sorted(engines.items())},
            {l: sorted(v) for l, v in sorted(links.items())},
            sorted(reconfigs),
        )

    def to_text(self) -> str:
        """One record per line: kind d i n_or_k t p_or_link."""
        lines = []
        for p, stream in self.engine_streams.items():
            for t, (d, i, n) in stream:
                lines.append((0, t, f"X {d} {i} {n} {t} {p}"))
        for link, stream in self.link_streams.items():
            for t, (d, i, k), units in stream:
                lines.append((1, t, f"Y {d} {i} {k} {t} {link} {units}"))
        for r in self.reconfigs:
            lines.append((2, r.t, f"R {r.d} {r.direction} {r.length} {r.t} {r.p} {r.bits}"))
        lines.sort()
        return "".join(line + "\n" for _, _, line in lines)
