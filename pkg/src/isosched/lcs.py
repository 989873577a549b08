"""Layer Concatenate and Split: pipeline balancing driven by the coefficient of variation."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import EmptyInput, UnsupportedKind, ZeroMean
from .graph import ConvDims, LayerNode, MatMulDims
from .tiles import EngineSpec, LatencyTable, layer_latency, slots_for, tiles_of_layer

CV_THRESHOLD = 0.15


@dataclass(frozen=True)
class StageCost:
    """Converts a (possibly split) layer into per-tile slot lengths."""

    engine: EngineSpec
    timeslot: int
    task_id: int | None = None
    overrides: LatencyTable | None = None

    def slots(self, layer: LayerNode, original: LayerNode | None = None) -> int:
        original = original or layer
        if self.overrides and any(k in self.overrides for k in ((self.task_id, original.id), (None, original.id))):
            full = layer_latency(original, self.engine, self.task_id, self.overrides)
            frac = layer.dims.macs_per_row() / original.dims.macs_per_row()
            return slots_for(math.ceil(full * frac), self.timeslot)
        return slots_for(layer_latency(layer, self.engine), self.timeslot)


@dataclass(frozen=True)
class LayerSlice:
    """A layer, or one part of a split layer, as executed by one engine."""

    layer: LayerNode          # dims already narrowed for W/C splits
    original: LayerNode
    row_lo: int
    row_hi: int               # exclusive
    t_slots: int
    needs_accumulation: bool = False
    tag: str = ""

    @property
    def layer_id(self) -> int:
        return self.original.id

    @property
    def rows(self) -> int:
        return self.row_hi - self.row_lo

    @property
    def full_rows(self) -> int:
        return tiles_of_layer(self.original)

    @property
    def total_slots(self) -> int:
        return self.rows * self.t_slots

    @property
    def macs(self) -> int:
        return self.rows * self.layer.dims.macs_per_row()


@dataclass(frozen=True)
class Segment:
    seg_id: int
    members: tuple[LayerSlice, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("segment needs at least one member")

    @property
    def stage_latency(self) -> int:
        return sum(m.total_slots for m in self.members)

    @property
    def macs(self) -> int:
        return sum(m.macs for m in self.members)

    @property
    def buffer_need(self) -> int:
        return _buffer(self.members, "H", allow_matmul=True)


@dataclass(frozen=True)
class SplitPlan:
    layer_id: int
    axis: str
    parts: int = 2
    needs_accumulation: bool = False

    def __post_init__(self) -> None:
        if self.axis not in ("H", "W", "C"):
            raise ValueError(f"unknown split axis {self.axis}")
        if self.parts < 2:
            raise ValueError("a split needs at least two parts")


@dataclass
class BalanceReport:
    pipeline: list[Segment]
    cv_before: float
    cv_after: float
    latencies_before: list[int]
    latencies_after: list[int]
    moves: list[str] = field(default_factory=list)
    splits: list[SplitPlan] = field(default_factory=list)
    fixed_point: bool = False

    def to_dict(self) -> dict:
        return {
            "cv_before": self.cv_before,
            "cv_after": self.cv_after,
            "latencies_before": self.latencies_before,
            "latencies_after": self.latencies_after,
            "moves": self.moves,
            "splits": [vars(s) for s in self.splits],
            "fixed_point": self.fixed_point,
        }


def coefficient_of_variation(stage_latencies: Sequence[float]) -> float:
    """Population standard deviation over mean."""
    if len(stage_latencies) == 0:
        raise EmptyInput("coefficient of variation of an empty list")
    mu = statistics.fmean(stage_latencies)
    if mu == 0:
        raise ZeroMean("coefficient of variation with zero mean")
    return statistics.pstdev(stage_latencies) / mu


def _terms(m: LayerSlice, allow_matmul: bool) -> tuple[int, int, int, int, int]:
    d = m.layer.dims
    if isinstance(d, ConvDims):
        return d.K_h, d.K_w, d.C_in, d.W_o, m.rows
    if allow_matmul and isinstance(d, MatMulDims):
        # K matrix rows stand in for the feature-map window
        return 1, 1, d.h * d.d_k, d.N_k, m.rows
    raise UnsupportedKind(f"layer {m.layer_id} ({m.layer.kind.value}) has no buffer model")


def _buffer(members: Sequence[LayerSlice], outer_axis: str, allow_matmul: bool) -> int:
    terms = [_terms(m, allow_matmul) for m in members]
    if outer_axis == "H":
        fmap = sum(r * w * c for r, s, c, w, h in terms)
    elif outer_axis == "W":
        fmap = sum(r * h * c for r, s, c, w, h in terms)
    else:
        raise ValueError(f"outer axis must be H or W, got {outer_axis}")
    return fmap + 2 * max(r * s * c for r, s, c, w, h in terms)


def buffer_size(seg: Segment, outer_axis: str = "H") -> int:
    """Minimal buffer (elements) for a conv segment: feature-map rows plus ping-pong weights."""
    return _buffer(seg.members, outer_axis, allow_matmul=False)


def _cv(latencies: Sequence[int]) -> float:
    return coefficient_of_variation(latencies)


def _renumber(segments: list[Segment]) -> list[Segment]:
    return [replace(s, seg_id=i) for i, s in enumerate(segments)]


def split_slice(m: LayerSlice, axis: str, cost: StageCost) -> tuple[LayerSlice, LayerSlice]:
    """Bisect one slice along ``axis``; the two parts cover disjoint outputs."""
    if axis == "H":
        mid = m.row_lo + math.ceil(m.rows / 2)
        return (replace(m, row_hi=mid, tag=m.tag + "H0"), replace(m, row_lo=mid, tag=m.tag + "H1"))
    d = m.layer.dims
    if not isinstance(d, ConvDims):
        raise UnsupportedKind(f"layer {m.layer_id}: only row splits are defined for {m.layer.kind.value}")
    name = "W_o" if axis == "W" else "C_in"
    extent = getattr(d, name)
    parts = []
    for k, size in enumerate((math.ceil(extent / 2), extent // 2)):
        layer = replace(m.layer, dims=replace(d, **{name: size}),
                        weight_bits=m.layer.weight_bits // 2 if axis == "C" else m.layer.weight_bits)
        parts.append(replace(m, layer=layer, t_slots=cost.slots(layer, m.original),
                             needs_accumulation=m.needs_accumulation or axis == "C",
                             tag=m.tag + f"{axis}{k}"))
    return parts[0], parts[1]


def choose_split_axis(seg: Segment, member: int, capacity: int | None, cost: StageCost) -> str | None:
    m = seg.members[member]
    d = m.layer.dims
    if isinstance(d, MatMulDims):
        return "H" if m.rows >= 2 else None
    order = [("H", m.rows >= 2), ("W", d.W_o >= 2)]
    for axis, possible in order:
        if not possible:
            continue
        part, _ = split_slice(m, axis, cost)
        members = list(seg.members)
        members[member] = part
        if capacity is None or _buffer(members, "H", True) <= capacity:
            return axis
    return "C" if d.C_in >= 2 else None


def _try_concat(segs: list[Segment], capacity: int | None) -> list[Segment] | None:
    if len(segs) < 2:
        return None
    lat = [s.stage_latency for s in segs]
    j = min(range(len(segs) - 1), key=lambda k: (lat[k] + lat[k + 1], k))
    merged_members = segs[j].members + segs[j + 1].members
    if lat[j] + lat[j + 1] > max(lat):
        return None
    if capacity is not None and _buffer(merged_members, "H", True) > capacity:
        return None
    merged = Segment(segs[j].seg_id, merged_members)
    return _renumber(segs[:j] + [merged] + segs[j + 2:])


def _try_split(segs: list[Segment], capacity: int | None, cost: StageCost) -> tuple[list[Segment], SplitPlan] | None:
    lat = [s.stage_latency for s in segs]
    j = max(range(len(segs)), key=lambda k: (lat[k], -k))
    seg = segs[j]
    member = max(range(len(seg.members)), key=lambda k: (seg.members[k].total_slots, -k))
    axis = choose_split_axis(seg, member, capacity, cost)
    if axis is None:
        return None
    a, b = split_slice(seg.members[member], axis, cost)
    members = list(seg.members)
    members[member] = a
    new = segs[:j] + [Segment(seg.seg_id, tuple(members)), Segment(-1, (b,))] + segs[j + 1:]
    plan = SplitPlan(seg.members[member].layer_id, axis, 2, needs_accumulation=axis == "C")
    return _renumber(new), plan


def balance(pipeline: Sequence[Segment], capacity: int | None, cost: StageCost,
            threshold: float = CV_THRESHOLD, max_stages: int | None = None) -> BalanceReport:
    """Greedy concat/split until CV <= threshold or no move strictly lowers CV."""
    segs = _renumber(list(pipeline))
    before = [s.stage_latency for s in segs]
    cv = _cv(before)
    report = BalanceReport(segs, cv, cv, before, before)
    budget = 4 * len(segs)
    while cv > threshold and len(report.moves) < budget:
        options = []
        concat = _try_concat(segs, capacity)
        if concat is not None:
            options.append((_cv([s.stage_latency for s in concat]), 0, concat, None))
        if max_stages is None or len(segs) < max_stages:
            split = _try_split(segs, capacity, cost)
            if split is not None:
                options.append((_cv([s.stage_latency for s in split[0]]), 1, split[0], split[1]))
        options = [o for o in options if o[0] < cv]
        if not options:
            report.fixed_point = True
            break
        new_cv, kind, segs, plan = min(options, key=lambda o: (o[0], o[1]))
        cv = new_cv
        if plan is None:
            report.moves.append("concat")
        else:
            report.moves.append(f"split:{plan.layer_id}:{plan.axis}")
            report.splits.append(plan)
    report.pipeline = segs
    report.cv_after = cv
    report.latencies_after = [s.stage_latency for s in segs]
    return report
