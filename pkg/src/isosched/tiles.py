"""Per-tile latency model and timeslot derivation.

A tile is one output row: for convolutions, one row of the output feature map
across all output channels; for attention matmuls, one query row across all heads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import EmptyWorkload, NotComputeBearing, ParseError
from .graph import ConvDims, LayerNode, MatMulDims, WorkloadSet

MATMUL_DEFAULT_FILL = 2

# (task_id or None for "any task", layer_id) -> cycles
LatencyTable = Mapping[tuple[int | None, int], int]


@dataclass(frozen=True)
class EngineSpec:
    pe_count: int = 64
    clock_hz: float = 700e6

    def __post_init__(self) -> None:
        if self.pe_count < 1:
            raise ValueError("pe_count must be >= 1")
        if self.clock_hz <= 0:
            raise ValueError("clock_hz must be > 0")


@dataclass(frozen=True)
class TileCost:
    layer_id: int
    t_slots: int
    fill: int
    tiles_total: int

    def __post_init__(self) -> None:
        if self.t_slots < 1 or self.tiles_total < 1:
            raise ValueError("t_slots and tiles_total must be >= 1")


def default_fill(layer: LayerNode) -> int:
    if layer.fill is not None:
        return layer.fill
    if isinstance(layer.dims, ConvDims):
        return min(layer.dims.K_h * layer.dims.K_w, 8)
    return MATMUL_DEFAULT_FILL


def tile_latency(layer: LayerNode, engine: EngineSpec) -> int:
    """Cycles for one tile of ``layer`` on one engine."""
    if not layer.compute_bearing:
        raise NotComputeBearing(f"layer {layer.id} is {layer.kind.value}")
    return math.ceil(layer.dims.macs_per_row() / engine.pe_count) + default_fill(layer)


def tiles_of_layer(layer: LayerNode) -> int:
    if isinstance(layer.dims, ConvDims):
        return layer.dims.H_o
    if isinstance(layer.dims, MatMulDims):
        return layer.dims.n_q
    raise NotComputeBearing(f"layer {layer.id} is {layer.kind.value}")


def layer_latency(layer: LayerNode, engine: EngineSpec, task_id: int | None = None,
                  overrides: LatencyTable | None = None) -> int:
    if overrides:
        for key in ((task_id, layer.id), (None, layer.id)):
            if key in overrides:
                return overrides[key]
    return tile_latency(layer, engine)


def base_timeslot(workload: WorkloadSet, engine: EngineSpec,
                  overrides: LatencyTable | None = None) -> int:
    """Minimum tile latency (cycles) over every compute-bearing layer."""
    latencies = [
        layer_latency(layer, engine, task.task_id, overrides)
        for task in workload.tasks
        for layer in task.nodes
        if layer.compute_bearing
    ]
    if not latencies:
        raise EmptyWorkload("workload has no compute-bearing layer")
    return min(latencies)


def slots_for(cycles: int, timeslot: int) -> int:
    return max(1, math.ceil(cycles / timeslot))


def tile_cost(layer: LayerNode, engine: EngineSpec, timeslot: int, task_id: int | None = None,
              overrides: LatencyTable | None = None) -> TileCost:
    cycles = layer_latency(layer, engine, task_id, overrides)
    return TileCost(
        layer_id=layer.id,
        t_slots=slots_for(cycles, timeslot),
        fill=math.ceil(default_fill(layer) / timeslot),
        tiles_total=tiles_of_layer(layer),
    )


def load_latency_table(path: str | Path) -> dict[tuple[int | None, int], int]:
    """Parse ``<layer_id> <cycles>`` or ``<task_id>.<layer_id> <cycles>`` lines."""
    table: dict[tuple[int | None, int], int] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected '<layer> <cycles>'")
        key, cycles = parts
        try:
            if "." in key:
                task_s, layer_s = key.split(".", 1)
                k = (int(task_s), int(layer_s))
            else:
                k = (None, int(key))
            value = int(cycles)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if value < 1:
            raise ParseError(f"{path}:{lineno}: cycles must be >= 1")
        table[k] = value
    return table
