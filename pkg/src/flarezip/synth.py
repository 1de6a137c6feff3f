"""Seeded synthetic 3D fields standing in for archived scientific datasets.

Two families:

* sinusoid: a superposition of a few low-frequency separable waves. Very
  smooth; the cubic interpolation predictor is nearly exact on these, so
  they exercise the high-compressibility end and give the neural stage a
  learnable residual structure.
* turbulence: multi-octave value noise (random coarse lattices, trilinear
  upsampling, geometric amplitude decay). Broad-band like simulation output;
  this is the proxy used where a real archived field would otherwise be
  downloaded.

All generators are deterministic in (kind, dims, seed) and return finite
float32 volumes with a nonzero value range (except the constant field).
"""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError
from .volume import Volume, volume_from_array

KINDS = ("sinusoid", "turbulence", "constant")


def _lin_upsample(grid: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    """Separable linear interpolation of a coarse lattice onto dims."""
    out = grid
    for ax in range(3):
        n = dims[ax]
        src = out.shape[ax]
        if src == n:
            continue
        if src == 1:
            reps = [1, 1, 1]
            reps[ax] = n
            out = np.tile(out, reps)
            continue
        pos = np.linspace(0.0, src - 1.0, n)
        i0 = np.floor(pos).astype(np.intp)
        i1 = np.minimum(i0 + 1, src - 1)
        shape = [1, 1, 1]
        shape[ax] = n
        frac = (pos - i0).reshape(shape)
        out = (np.take(out, i0, axis=ax) * (1.0 - frac)
               + np.take(out, i1, axis=ax) * frac)
    return out


def sinusoid_volume(dims: tuple[int, int, int], seed: int,
                    components: int = 4, kmin: float = 0.5,
                    kmax: float = 2.5) -> Volume:
    """Sum of `components` random separable sine waves.

    kmin/kmax bound each wave's cycles across the volume; the defaults give
    very smooth fields, larger values add curvature the interpolation
    predictor cannot follow exactly.
    """
    dims = tuple(int(d) for d in dims)
    rng = np.random.Generator(np.random.PCG64(seed))
    axes = [np.arange(d, dtype=np.float64) / max(d - 1, 1) for d in dims]
    x = axes[0][:, None, None]
    y = axes[1][None, :, None]
    z = axes[2][None, None, :]
    field = np.zeros(dims, dtype=np.float64)
    for _ in range(components):
        k = rng.uniform(kmin, kmax, size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
        amp = rng.uniform(0.5, 1.0)
        field += (amp
                  * np.sin(2.0 * np.pi * k[0] * x + phase[0])
                  * np.sin(2.0 * np.pi * k[1] * y + phase[1])
                  * np.sin(2.0 * np.pi * k[2] * z + phase[2]))
    return volume_from_array(field)


def turbulence_volume(dims: tuple[int, int, int], seed: int,
                      octaves: int = 5) -> Volume:
    """Fractal value noise: coarse Gaussian lattices, upsampled and summed."""
    dims = tuple(int(d) for d in dims)
    rng = np.random.Generator(np.random.PCG64(seed))
    field = np.zeros(dims, dtype=np.float64)
    cells = 4
    amp = 1.0
    for _ in range(octaves):
        shape = tuple(min(d, cells) for d in dims)
        field += amp * _lin_upsample(rng.standard_normal(shape), dims)
        cells *= 2
        amp *= 0.5
    return volume_from_array(field)


def constant_volume(dims: tuple[int, int, int], value: float = 0.0) -> Volume:
    return volume_from_array(np.full(dims, value, dtype=np.float32))


def synthetic_volume(kind: str, dims: tuple[int, int, int],
                     seed: int = 0) -> Volume:
    if kind == "sinusoid":
        return sinusoid_volume(dims, seed)
    if kind == "turbulence":
        return turbulence_volume(dims, seed)
    if kind == "constant":
        return constant_volume(dims)
    raise DataFormatError(f"unknown synthetic field kind {kind!r}; "
                          f"choose from {KINDS}")
