"""Engine mesh geometry, directional NoC links and XY routing."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping, NamedTuple

import yaml

from .errors import ParseError, UnplacedNode
from .graph import TaskDag
from .tiles import EngineSpec

HOP_PJ_PER_BIT = 0.64


class EngineCoord(NamedTuple):
    x: int
    y: int


class LinkId(NamedTuple):
    """Directed mesh link; tuples keep hashing cheap in the per-slot load maps."""

    src: EngineCoord
    dst: EngineCoord

    def __str__(self) -> str:
        return f"({self.src.x},{self.src.y})->({self.dst.x},{self.dst.y})"


@dataclass(frozen=True)
class PlatformConfig:
    mesh_w: int = 4
    mesh_h: int = 4
    engine: EngineSpec = field(default_factory=EngineSpec)
    link_bw: int = 256           # data units (activation elements) per slot per link
    reconfig_bw: int = 4096      # weight bits per slot over the reconfiguration path
    hop_energy: float = HOP_PJ_PER_BIT
    dram_energy_per_bit: float = 20.0
    dram_bw: int = 256           # bits per slot
    buffer_capacity: int = 131072  # elements per engine
    act_bits: int = 8            # bits per data unit
    mac_pj: float = 1.0
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.mesh_w < 1 or self.mesh_h < 1:
            raise ValueError("mesh must have at least one engine")
        if self.link_bw < 1:
            raise ValueError("link_bw must be >= 1")
        if self.reconfig_bw < 1 or self.dram_bw < 1:
            raise ValueError("reconfig_bw and dram_bw must be >= 1")
        for name in ("hop_energy", "dram_energy_per_bit", "mac_pj"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def n_engines(self) -> int:
        return self.mesh_w * self.mesh_h

    def coord(self, p: int) -> EngineCoord:
        return EngineCoord(p % self.mesh_w, p // self.mesh_w)

    def index(self, c: EngineCoord) -> int:
        return c.y * self.mesh_w + c.x

    def contains(self, c: EngineCoord) -> bool:
        return 0 <= c.x < self.mesh_w and 0 <= c.y < self.mesh_h

    @cached_property
    def links(self) -> tuple[LinkId, ...]:
        out = []
        for p in range(self.n_engines):
            a = self.coord(p)
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                b = EngineCoord(a.x + dx, a.y + dy)
                if self.contains(b):
                    out.append(LinkId(a, b))
        return tuple(sorted(out))

    @cached_property
    def link_index(self) -> dict[LinkId, int]:
        return {l: i for i, l in enumerate(self.links)}

    @cached_property
    def snake_order(self) -> tuple[int, ...]:
        """Engine indices in boustrophedon order; consecutive entries are mesh neighbours."""
        order = []
        for y in range(self.mesh_h):
            xs = range(self.mesh_w) if y % 2 == 0 else range(self.mesh_w - 1, -1, -1)
            order.extend(y * self.mesh_w + x for x in xs)
        return tuple(order)

    def neighbours(self, p: int) -> list[int]:
        a = self.coord(p)
        out = []
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            b = EngineCoord(a.x + dx, a.y + dy)
            if self.contains(b):
                out.append(self.index(b))
        return out

    def with_mesh(self, w: int, h: int) -> "PlatformConfig":
        return replace(self, mesh_w=w, mesh_h=h)


def expected_link_count(mesh_w: int, mesh_h: int) -> int:
    return 2 * (2 * mesh_w * mesh_h - mesh_w - mesh_h)


def manhattan_distance(a: EngineCoord, b: EngineCoord) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


def xy_route(a: EngineCoord, b: EngineCoord) -> list[LinkId]:
    """Dimension-ordered route: walk x first, then y."""
    route = []
    cur = a
    step = 1 if b.x > a.x else -1
    while cur.x != b.x:
        nxt = EngineCoord(cur.x + step, cur.y)
        route.append(LinkId(cur, nxt))
        cur = nxt
    step = 1 if b.y > a.y else -1
    while cur.y != b.y:
        nxt = EngineCoord(cur.x, cur.y + step)
        route.append(LinkId(cur, nxt))
        cur = nxt
    return route


def dag_comm_cost(placements: Mapping[int, EngineCoord], dag: TaskDag) -> int:
    total = 0
    for a, b in dag.edges:
        if a not in placements or b not in placements:
            missing = a if a not in placements else b
            raise UnplacedNode(f"task {dag.task_id}: node {missing} has no engine")
        total += manhattan_distance(placements[a], placements[b])
    return total


PRESETS: dict[str, PlatformConfig] = {
    "edge": PlatformConfig(128, 128, EngineSpec(64, 700e6), name="edge"),
    "cloud": PlatformConfig(128, 128, EngineSpec(128, 700e6), name="cloud"),
    "desk2": PlatformConfig(2, 2, EngineSpec(64, 700e6), name="desk2"),
    "desk4": PlatformConfig(4, 4, EngineSpec(64, 700e6), name="desk4"),
    "desk8": PlatformConfig(8, 8, EngineSpec(64, 700e6), name="desk8"),
    "desk8-cloud": PlatformConfig(8, 8, EngineSpec(128, 700e6), name="desk8-cloud"),
}

_ENGINE_KEYS = {"pe_count", "clock_hz"}


def platform_from_dict(data: Mapping, source: str = "<dict>") -> PlatformConfig:
    data = dict(data)
    base = PRESETS[data.pop("preset")] if "preset" in data else PlatformConfig()
    engine_fields = {k: data.pop(k) for k in list(data) if k in _ENGINE_KEYS}
    if "engine" in data:
        engine_fields.update(data.pop("engine"))
    known = set(PlatformConfig.__dataclass_fields__) - {"engine"}
    unknown = set(data) - known
    if unknown:
        raise ParseError(f"{source}: unknown platform fields {sorted(unknown)}")
    engine = replace(base.engine, **engine_fields) if engine_fields else base.engine
    try:
        return replace(base, engine=engine, **data)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{source}: {exc}") from None


def platform_to_dict(p: PlatformConfig) -> dict:
    out = {k: getattr(p, k) for k in PlatformConfig.__dataclass_fields__ if k != "engine"}
    out["pe_count"] = p.engine.pe_count
    out["clock_hz"] = p.engine.clock_hz
    return out


def load_platform(spec: str | Path) -> PlatformConfig:
    """Preset name or path to a YAML/JSON platform file."""
    if str(spec) in PRESETS:
        return PRESETS[str(spec)]
    path = Path(spec)
    if not path.exists():
        raise ParseError(f"unknown platform preset or missing file: {spec}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise ParseError(f"{path}: platform file must be a mapping")
    return platform_from_dict(data, str(path))
