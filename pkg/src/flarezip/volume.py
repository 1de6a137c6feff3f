"""3D float32 volumes: raw file I/O, quality metrics, block partitioning.

Volumes are dense float32 scalar fields with dims (nx, ny, nz), stored
row-major with z fastest: flat index = (x*ny + y)*nz + z. Raw files are
headerless little-endian float32 (the common convention for scientific
dataset archives); dimensions travel out of band.

Slices are 2D planes at a fixed coordinate along one axis. The enhancement
stage and the per-slice statistics both work on Z slices (fixed z, shape
(nx, ny)), matching the slice-wise streaming of the pipeline.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError


class Axis(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2


@dataclass(frozen=True)
class Volume:
    dims: tuple[int, int, int]          # (nx, ny, nz)
    data: np.ndarray                    # float32, shape dims, C order, read-only
    value_range: tuple[float, float]    # (vmin, vmax) as float64

    @property
    def point_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def nbytes(self) -> int:
        return self.point_count * 4


@dataclass(frozen=True)
class Slice2D:
    axis: Axis
    index: int
    data: np.ndarray    # 2D float32, shape = the two remaining dims in order


@dataclass(frozen=True)
class BlockGrid:
    """Partition of a volume into B^3 blocks (boundary blocks may be smaller).

    Blocks are enumerated in lexicographic (bx, by, bz) order with bx the
    most significant key; that enumeration order is the canonical block id.
    """

    dims: tuple[int, int, int]
    block_size: int
    grid: tuple[int, int, int]          # blocks per axis

    @property
    def block_count(self) -> int:
        gx, gy, gz = self.grid
        return gx * gy * gz

    def block_coord(self, block_id: int) -> tuple[int, int, int]:
        gx, gy, gz = self.grid
        bx, rem = divmod(block_id, gy * gz)
        by, bz = divmod(rem, gz)
        return bx, by, bz

    def block_id(self, bx: int, by: int, bz: int) -> int:
        gx, gy, gz = self.grid
        return (bx * gy + by) * gz + bz

    def origin(self, block_id: int) -> tuple[int, int, int]:
        bx, by, bz = self.block_coord(block_id)
        b = self.block_size
        return bx * b, by * b, bz * b

    def shape(self, block_id: int) -> tuple[int, int, int]:
        ox, oy, oz = self.origin(block_id)
        nx, ny, nz = self.dims
        b = self.block_size
        return min(b, nx - ox), min(b, ny - oy), min(b, nz - oz)


def _validate_dims(dims: tuple[int, int, int]) -> tuple[int, int, int]:
    if len(dims) != 3 or any(int(d) != d or d < 1 for d in dims):
        raise DataFormatError(f"dims must be three positive integers, got {dims!r}")
    return tuple(int(d) for d in dims)


def volume_from_array(arr: np.ndarray) -> Volume:
    """Wrap a 3D array as a Volume (casts to float32, rejects non-finite)."""
    if arr.ndim != 3:
        raise DataFormatError(f"expected a 3D array, got shape {arr.shape}")
    data = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.isfinite(data).all():
        raise DataFormatError("volume contains NaN or Inf values")
    data.flags.writeable = False
    vmin = float(data.min())
    vmax = float(data.max())
    return Volume(dims=tuple(data.shape), data=data, value_range=(vmin, vmax))


def load_volume(path: str | os.PathLike, dims: tuple[int, int, int]) -> Volume:
    """Read a headerless little-endian float32 raw file.

    The file size must equal nx*ny*nz*4 exactly; NaN/Inf content is rejected.
    """
    dims = _validate_dims(dims)
    nx, ny, nz = dims
    expected = nx * ny * nz * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise DataFormatError(
            f"{path}: file is {actual} bytes but dims {dims} require {expected}"
        )
    flat = np.fromfile(path, dtype="<f4")
    return volume_from_array(flat.reshape(dims))


def store_volume(volume: Volume, path: str | os.PathLike) -> None:
    """Write the raw little-endian float32 file (inverse of load_volume)."""
    volume.data.astype("<f4", copy=False).tofile(path)


def psnr(reference: Volume, test: Volume) -> float:
    """Peak signal-to-noise ratio in dB against the reference's value range.

    psnr = 10*log10(range^2 / MSE); returns +inf when the volumes agree
    exactly (MSE == 0), the sentinel for lossless-on-this-data.
    """
    if reference.dims != test.dims:
        raise DataFormatError(
            f"dims mismatch: {reference.dims} vs {test.dims}"
        )
    diff = reference.data.astype(np.float64) - test.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    vmin, vmax = reference.value_range
    rng = vmax - vmin
    return 10.0 * math.log10((rng * rng) / mse)


def partition_blocks(dims: tuple[int, int, int], block_size: int) -> BlockGrid:
    """Tile dims into block_size^3 blocks; boundary blocks keep their partial extent."""
    dims = _validate_dims(dims)
    if block_size < 2:
        raise DataFormatError(f"block size must be >= 2, got {block_size}")
    grid = tuple(-(-d // block_size) for d in dims)
    return BlockGrid(dims=dims, block_size=block_size, grid=grid)


def slice_view(volume: Volume, axis: Axis, index: int) -> Slice2D:
    """Extract the plane at `index` along `axis` (a view, not a copy)."""
    nx, ny, nz = volume.dims
    n_axis = volume.dims[int(axis)]
    if not 0 <= index < n_axis:
        raise DataFormatError(f"slice index {index} out of range for axis {axis.name}")
    if axis == Axis.X:
        data = volume.data[index, :, :]
    elif axis == Axis.Y:
        data = volume.data[:, index, :]
    else:
        data = volume.data[:, :, index]
    return Slice2D(axis=axis, index=index, data=data)
