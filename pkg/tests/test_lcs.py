import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isosched.errors import EmptyInput, UnsupportedKind, ZeroMean
from isosched.lcs import (
    LayerSlice, Segment, StageCost, balance, buffer_size, choose_split_axis, coefficient_of_variation, split_slice,
)
from isosched.tiles import EngineSpec
from helpers import conv, matmul

UNIT = StageCost(EngineSpec(64), 1)


def seg(k, *layers_rows):
    members = []
    for layer, rows in layers_rows:
        members.append(LayerSlice(layer, layer, 0, rows, UNIT.slots(layer)))
    return Segment(k, tuple(members))


def flat(k, rows, t_slots=1, idx=None):
    """One-member segment whose stage latency is rows * t_slots."""
    layer = conv(k if idx is None else idx, H=rows)
    return Segment(k, (LayerSlice(layer, layer, 0, rows, t_slots),))


def test_cv_examples():
    assert coefficient_of_variation([10, 10, 10]) == 0.0
    assert coefficient_of_variation([2, 4, 6]) == pytest.approx(math.sqrt(8 / 3) / 4)
    assert coefficient_of_variation([2, 4, 6]) == pytest.approx(0.408, abs=1e-3)
    assert coefficient_of_variation([1, 100]) == pytest.approx(49.5 / 50.5)
    assert coefficient_of_variation([7]) == 0.0


def test_cv_errors():
    with pytest.raises(EmptyInput):
        coefficient_of_variation([])
    with pytest.raises(ZeroMean):
        coefficient_of_variation([0, 0])


def test_buffer_two_layers():
    a = conv(0, H=8, W=8, C=4, k=3, C_in=4)
    b = conv(1, H=8, W=8, C=8, k=3, C_in=8)
    s = seg(0, (a, 8), (b, 8))
    assert buffer_size(s, "H") == (96 + 192) + 2 * 72 == 432
    assert buffer_size(s, "W") == 432


def test_buffer_unit_layer():
    from isosched.graph import ConvDims, LayerKind, LayerNode
    layer = LayerNode(0, LayerKind.CONV, ConvDims(1, 1, 1, 1, 1, 1))
    assert buffer_size(seg(0, (layer, 1))) == 3


def test_buffer_rejects_matmul():
    with pytest.raises(UnsupportedKind):
        buffer_size(seg(0, (matmul(0), 16)))


def test_balance_noop_when_uniform():
    segs = [flat(k, 10) for k in range(3)]
    rep = balance(segs, None, UNIT)
    assert rep.latencies_after == [10, 10, 10] and rep.moves == []


def test_balance_two_two_twelve():
    segs = [flat(0, 2), flat(1, 2), flat(2, 12)]
    rep = balance(segs, None, UNIT)
    assert rep.moves[:2] == ["concat", "split:2:H"]
    assert rep.latencies_after == [4, 6, 6]
    assert rep.cv_after == pytest.approx(coefficient_of_variation([4, 6, 6]))
    assert rep.cv_after <= 0.15 or rep.fixed_point


def test_split_axis_falls_back_to_channels():
    layer = conv(0, H=8, W=8, C=8, k=3, C_in=8)
    s = seg(0, (layer, 8))
    assert choose_split_axis(s, 0, None, UNIT) == "H"
    assert choose_split_axis(s, 0, 200, UNIT) == "C"   # H keeps 336, W gives 240, C gives 168
    a, b = split_slice(s.members[0], "C", UNIT)
    assert a.needs_accumulation and b.needs_accumulation
    a, b = split_slice(s.members[0], "W", UNIT)
    assert not a.needs_accumulation


def test_split_parts_cost_their_narrowed_dims():
    layer = conv(0, H=8, W=7, C=8, k=3, C_in=5)
    m = LayerSlice(layer, layer, 0, 8, UNIT.slots(layer))
    for axis in "WC":
        a, b = split_slice(m, axis, UNIT)
        assert a.t_slots == UNIT.slots(a.layer) and b.t_slots == UNIT.slots(b.layer)
        assert a.macs + b.macs == m.macs
    a, b = split_slice(m, "H", UNIT)
    assert (a.rows, b.rows) == (4, 4) and a.t_slots == b.t_slots == m.t_slots


def test_matmul_splits_rows_only():
    m = matmul(0, n_q=4)
    s = seg(0, (m, 4))
    assert choose_split_axis(s, 0, None, UNIT) == "H"
    with pytest.raises(UnsupportedKind):
        split_slice(s.members[0], "W", UNIT)


pipelines = st.lists(
    st.tuples(st.integers(1, 16), st.integers(1, 8), st.integers(1, 12), st.sampled_from([1, 3])),
    min_size=1, max_size=6)


def _build(spec):
    segs = []
    for k, (H, W, C, K) in enumerate(spec):
        layer = conv(k, H=H, W=W, C=C, k=K)
        segs.append(Segment(k, (LayerSlice(layer, layer, 0, H, UNIT.slots(layer)),)))
    return segs


@given(pipelines, st.one_of(st.none(), st.integers(50, 5000)))
@settings(max_examples=150, deadline=None)
def test_balance_properties(spec, capacity):
    segs = _build(spec)
    rep = balance(segs, capacity, UNIT)
    assert rep.cv_after <= rep.cv_before + 1e-12
    assert rep.cv_after <= 0.15 or rep.fixed_point or len(rep.moves) == 4 * len(segs)
    # MACs are conserved exactly, and every original row range is covered once
    assert sum(s.macs for s in rep.pipeline) == sum(s.macs for s in segs)
    if all(not p.needs_accumulation for p in rep.splits):
        covered = {}
        for s in rep.pipeline:
            for m in s.members:
                covered.setdefault(m.layer_id, []).append((m.row_lo, m.row_hi, m.tag))
        for k, (H, *_rest) in enumerate(spec):
            rows = sorted({(lo, hi) for lo, hi, tag in covered[k] if "W1" not in tag})
            assert rows[0][0] == 0 and rows[-1][1] == H
