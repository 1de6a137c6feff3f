"""Block schedule invariants: canonical order, working set, flush/emit coverage."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flarezip.errors import DataFormatError
from flarezip.schedule import (
    EmitStep,
    FlushStep,
    PassStep,
    WarnStep,
    anchors_in_block,
    canonical_offsets,
    canonical_pass_order,
    level_count,
    make_grid,
    pass_point_count,
    peak_working_set,
    schedule_steps,
    total_anchor_count,
)
from flarezip.volume import Axis

dims_st = st.tuples(
    st.integers(min_value=1, max_value=40),
    st.integers(min_value=1, max_value=40),
    st.integers(min_value=1, max_value=40),
)
block_st = st.sampled_from([2, 4, 8, 16, 32])


def test_level_count_values():
    assert level_count(2) == 1
    assert level_count(4) == 2
    assert level_count(32) == 5
    assert level_count(48) == 5
    with pytest.raises(DataFormatError):
        level_count(1)


def test_canonical_offsets_partition_all_points():
    grid = make_grid((13, 9, 21), 8)
    offsets, total = canonical_offsets(grid)
    n = 13 * 9 * 21
    assert total + total_anchor_count(grid) == n
    # offsets are contiguous and in canonical order
    pos = 0
    for key in canonical_pass_order(grid):
        off, cnt = offsets[key]
        assert off == pos and cnt > 0
        pos += cnt
    assert pos == total


@given(dims_st, block_st)
def test_every_point_predicted_once(dims, block):
    grid = make_grid(dims, block)
    n = dims[0] * dims[1] * dims[2]
    _, total = canonical_offsets(grid)
    assert total + total_anchor_count(grid) == n


@given(dims_st, block_st, st.sampled_from(["bfs", "lookahead"]))
def test_schedule_covers_canonical_passes(dims, block, order):
    grid = make_grid(dims, block)
    steps = list(schedule_steps(grid, order))
    ran = [(s.level, s.axis, s.block_id) for s in steps if isinstance(s, PassStep)]
    assert sorted(ran) == sorted(canonical_pass_order(grid))
    # bfs runs passes exactly in canonical order
    if order == "bfs":
        assert ran == list(canonical_pass_order(grid))


@given(dims_st, block_st, st.sampled_from(["bfs", "lookahead"]))
def test_flush_and_emit_conservation(dims, block, order):
    grid = make_grid(dims, block)
    n = dims[0] * dims[1] * dims[2]
    steps = list(schedule_steps(grid, order))
    flushed = sum(s.byte_count for s in steps if isinstance(s, FlushStep))
    assert flushed == 4 * n
    zs = []
    for s in steps:
        if isinstance(s, EmitStep):
            zs.extend(range(s.z_start, s.z_start + s.z_count))
    assert sorted(zs) == list(range(dims[2]))
    assert len(zs) == len(set(zs))


@given(dims_st, block_st)
def test_lookahead_peak_never_exceeds_bfs(dims, block):
    grid = make_grid(dims, block)
    assert peak_working_set(grid, "lookahead") <= peak_working_set(grid, "bfs")


def test_bfs_peak_is_whole_volume():
    grid = make_grid((64, 64, 64), 32)
    assert peak_working_set(grid, "bfs") == 64 ** 3 * 4


def test_lookahead_peak_ratio_on_cube():
    # the 3-deep halving recursion holds 1/2 of blocks at 1/64 density,
    # 1/4 at 1/8, and 1/4 fully resident: 37/128 of the volume
    grid = make_grid((256, 256, 256), 32)
    ratio = peak_working_set(grid, "bfs") / peak_working_set(grid, "lookahead")
    assert ratio == pytest.approx(128 / 37, rel=1e-6)


def test_single_block_falls_back_to_bfs_with_warning():
    grid = make_grid((16, 16, 16), 32)
    steps = list(schedule_steps(grid, "lookahead"))
    assert isinstance(steps[0], WarnStep) and steps[0].reason == "bfs_fallback"
    passes = [s for s in steps if isinstance(s, PassStep)]
    bfs_passes = [s for s in schedule_steps(grid, "bfs") if isinstance(s, PassStep)]
    assert passes == bfs_passes


def test_unknown_order_rejected():
    grid = make_grid((8, 8, 8), 4)
    with pytest.raises(DataFormatError):
        list(schedule_steps(grid, "zigzag"))


def test_pass_point_count_matches_enumeration():
    # brute-force the lattice walk for a truncated block
    shape = (13, 6, 9)
    for level in range(1, 4):
        s = 1 << level
        h = s >> 1
        ex, ey, ez = shape
        expect = {
            Axis.X: len(range(h, ex, s)) * len(range(0, ey, s)) * len(range(0, ez, s)),
            Axis.Y: len(range(h, ey, s)) * len(range(0, ex, h)) * len(range(0, ez, s)),
            Axis.Z: len(range(h, ez, s)) * len(range(0, ex, h)) * len(range(0, ey, h)),
        }
        for axis in (Axis.X, Axis.Y, Axis.Z):
            assert pass_point_count(shape, level, axis) == expect[axis]


def test_anchor_count_truncated_blocks():
    assert anchors_in_block((32, 32, 32), 32) == 1
    assert anchors_in_block((33, 1, 5), 32) == 2
    assert anchors_in_block((8, 8, 8), 8) == 1
    assert anchors_in_block((8, 8, 8), 4) == 8
