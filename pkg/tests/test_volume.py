"""Volume I/O, PSNR, and block partition tests against direct oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flarezip.errors import DataFormatError
from flarezip.volume import (
    Axis,
    load_volume,
    partition_blocks,
    psnr,
    slice_view,
    store_volume,
    volume_from_array,
)


def test_load_volume_values_and_extrema(tmp_path):
    path = tmp_path / "f.raw"
    np.arange(64, dtype="<f4").tofile(path)
    v = load_volume(path, (4, 4, 4))
    assert v.value_range == (0.0, 63.0)
    # z fastest: flat index (x*4 + y)*4 + z
    assert v.data[1, 2, 3] == (1 * 4 + 2) * 4 + 3
    assert v.data.dtype == np.float32


def test_load_volume_single_point(tmp_path):
    path = tmp_path / "one.raw"
    np.zeros(1, dtype="<f4").tofile(path)
    v = load_volume(path, (1, 1, 1))
    assert v.value_range == (0.0, 0.0)
    assert v.point_count == 1


def test_load_volume_size_mismatch(tmp_path):
    path = tmp_path / "short.raw"
    np.zeros(63, dtype="<f4").tofile(path)
    with pytest.raises(DataFormatError):
        load_volume(path, (4, 4, 4))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_load_volume_rejects_nonfinite(tmp_path, bad):
    path = tmp_path / "bad.raw"
    arr = np.zeros(8, dtype="<f4")
    arr[5] = bad
    arr.tofile(path)
    with pytest.raises(DataFormatError):
        load_volume(path, (2, 2, 2))


def test_store_load_round_trip(tmp_path):
    rng = np.random.Generator(np.random.PCG64(0))
    v = volume_from_array(rng.normal(size=(5, 7, 3)))
    path = tmp_path / "rt.raw"
    store_volume(v, path)
    w = load_volume(path, v.dims)
    assert np.array_equal(v.data, w.data)
    assert path.read_bytes() == v.data.tobytes()


def test_volume_from_array_requires_3d():
    with pytest.raises(DataFormatError):
        volume_from_array(np.zeros((4, 4)))


def test_psnr_identity_is_infinite():
    v = volume_from_array(np.arange(27, dtype=np.float32).reshape(3, 3, 3))
    assert psnr(v, v) == math.inf


def test_psnr_uniform_error_oracle():
    # range 1.0, |error| = 1e-3 everywhere: 10*log10(1 / 1e-6) = 60 dB
    base = np.linspace(0.0, 1.0, 64, dtype=np.float32).reshape(4, 4, 4)
    ref = volume_from_array(base)
    off = volume_from_array(base + np.float32(1e-3))
    assert psnr(ref, off) == pytest.approx(60.0, abs=0.01)
    # doubling the range adds 20*log10(2) = 6.02 dB
    ref2 = volume_from_array(2.0 * base)
    off2 = volume_from_array(2.0 * base + np.float32(1e-3))
    assert psnr(ref2, off2) == pytest.approx(66.02, abs=0.01)


def test_psnr_decreases_with_perturbation():
    rng = np.random.Generator(np.random.PCG64(1))
    base = rng.normal(size=(6, 6, 6))
    ref = volume_from_array(base)
    noise = rng.normal(size=base.shape)
    vals = [psnr(ref, volume_from_array(base + m * noise))
            for m in (1e-4, 1e-3, 1e-2, 1e-1)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_psnr_dims_mismatch():
    a = volume_from_array(np.zeros((2, 2, 2)))
    b = volume_from_array(np.zeros((2, 2, 3)))
    with pytest.raises(DataFormatError):
        psnr(a, b)


@pytest.mark.parametrize("dims,B,count", [
    ((64, 64, 64), 32, 8),
    ((32, 32, 32), 32, 1),
    ((100, 500, 500), 32, 4 * 16 * 16),
])
def test_partition_counts(dims, B, count):
    grid = partition_blocks(dims, B)
    assert grid.block_count == count
    assert grid.grid == tuple(-(-d // B) for d in dims)


@pytest.mark.parametrize("B", [0, 1])
def test_partition_rejects_small_blocks(B):
    with pytest.raises(DataFormatError):
        partition_blocks((8, 8, 8), B)


def test_block_id_coord_round_trip():
    grid = partition_blocks((65, 33, 40), 32)
    for b in range(grid.block_count):
        assert grid.block_id(*grid.block_coord(b)) == b


@given(
    dims=st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9)),
    B=st.integers(2, 5),
)
def test_block_tiling_covers_every_index_once(dims, B):
    grid = partition_blocks(dims, B)
    hits = np.zeros(dims, dtype=np.int32)
    for b in range(grid.block_count):
        ox, oy, oz = grid.origin(b)
        ex, ey, ez = grid.shape(b)
        assert ex > 0 and ey > 0 and ez > 0
        hits[ox:ox + ex, oy:oy + ey, oz:oz + ez] += 1
    assert (hits == 1).all()


def test_slice_view_matches_indexing():
    rng = np.random.Generator(np.random.PCG64(2))
    v = volume_from_array(rng.normal(size=(3, 4, 5)))
    assert np.array_equal(slice_view(v, Axis.X, 1).data, v.data[1, :, :])
    assert np.array_equal(slice_view(v, Axis.Y, 3).data, v.data[:, 3, :])
    assert np.array_equal(slice_view(v, Axis.Z, 4).data, v.data[:, :, 4])
    assert slice_view(v, Axis.Z, 0).data.shape == (3, 4)
    with pytest.raises(DataFormatError):
        slice_view(v, Axis.Z, 5)
