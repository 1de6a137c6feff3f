"""Level-wise block interpolation with error-bounded linear-scaling quantization.

Each block runs floor(log2(B)) levels coarse to fine; level L predicts the
points at stride 2^(L-1) along one axis at a time from the stride-2^L
lattice already reconstructed in that block. Per new point the tap ladder is

* 4-tap cubic (-1/16, 9/16, 9/16, -1/16) when both second-ring neighbors
  are inside the block,
* 2-tap (1/2, 1/2) of the two surrounding lattice points otherwise,
* 2-tap (1/2, 1/2) of the two lattice points to the left when the right
  neighbor is outside the block,
* copy of the left neighbor when even that pair is unavailable.

Predictions are evaluated in float64 from the float32 lattice and rounded
once to float32; quantization, reconstruction, and the explicit bound check
run in float64. That makes compression and decompression bit-identical (the
decompressor replays the same expressions) and keeps the taps exact on
constant and linear fields.

Quantization: bin = round_half_away((orig - pred) / (2*eb_abs)); code =
bin + radius; recon = float32(pred + 2*eb_abs*bin). |bin| >= radius or a
reconstruction that misses the bound after the float32 cast turns the point
into an outlier: sentinel code 0 plus the raw value in a side channel keyed
by the code's canonical stream position. The bound |orig - recon| <= eb_abs
therefore holds unconditionally.

Code positions in the stream always follow the canonical breadth-first
order; the look-ahead execution order writes into the same slots, so both
orders produce byte-identical streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, StreamCorruptError
from .schedule import (
    CUBIC_TAPS,
    PassStep,
    anchor_stride,
    canonical_offsets,
    make_grid,
    schedule_steps,
)
from .trace import PHASE_COMPRESS, PHASE_DECOMPRESS, ExecTrace, step_event
from .volume import Axis, BlockGrid, Volume, volume_from_array

OUTLIER_CODE = 0
DEFAULT_RADIUS = 32768


@dataclass(frozen=True)
class QuantizerConfig:
    """Quantizer parameters; eb_abs is eb_rel times the volume value range."""

    eb_rel: float
    eb_abs: float
    radius: int = DEFAULT_RADIUS
    taps: tuple = CUBIC_TAPS

    def __post_init__(self):
        if self.eb_rel < 0 or self.eb_abs < 0:
            raise DataFormatError("error bounds must be non-negative")
        if not 2 <= self.radius <= 2 ** 30:
            raise DataFormatError(f"radius {self.radius} out of range")
        if len(self.taps) != 4:
            raise DataFormatError("expected a 4-tap interior stencil")

    @classmethod
    def from_range(cls, eb_rel: float, value_range: tuple[float, float],
                   radius: int = DEFAULT_RADIUS) -> "QuantizerConfig":
        vmin, vmax = value_range
        return cls(eb_rel=eb_rel, eb_abs=eb_rel * (vmax - vmin), radius=radius)


@dataclass
class QuantCodeStream:
    """Quantization codes in canonical order plus raw side channels.

    codes[i] == 0 marks an outlier whose raw value sits in the side channel
    at the matching canonical index; anchors are the raw coarsest-lattice
    values in block-id order, C order within a block.
    """

    codes: np.ndarray         # int32, canonical order
    outlier_idx: np.ndarray   # uint64, sorted ascending
    outlier_val: np.ndarray   # float32, parallel to outlier_idx
    anchors: np.ndarray       # float32


@dataclass(frozen=True)
class SliceStats:
    """Per-Z-slice (min, max) of the reconstructed volume."""

    mins: np.ndarray  # float32, shape (nz,)
    maxs: np.ndarray  # float32, shape (nz,)


def _pass_selectors(shape: tuple[int, int, int], level: int, axis: Axis):
    """New coordinates and the lattice-plane selector for one pass.

    sel(t) indexes the full lattice plane at axis coordinate t; planes keep
    2D shape, and their C-order ravel is the canonical within-pass order
    (ascending new coordinate, remaining axes lexicographic).
    """
    s = 1 << level
    h = s >> 1
    sx, sy, sz = shape
    if axis == Axis.X:
        news, extent = range(h, sx, s), sx
        sel = lambda t: (t, slice(0, None, s), slice(0, None, s))
    elif axis == Axis.Y:
        news, extent = range(h, sy, s), sy
        sel = lambda t: (slice(0, None, h), t, slice(0, None, s))
    else:
        news, extent = range(h, sz, s), sz
        sel = lambda t: (slice(0, None, h), slice(0, None, h), t)
    return news, extent, h, sel


def _predict_plane(rec: np.ndarray, sel, c: int, h: int, extent: int,
                   taps: tuple) -> np.ndarray:
    """Predict the plane at new coordinate c; float64 math, one float32 cast."""
    f = lambda t: rec[sel(t)].astype(np.float64)
    if c - 3 * h >= 0 and c + 3 * h <= extent - 1:
        p = taps[0] * f(c - 3 * h) + taps[1] * f(c - h) \
            + taps[2] * f(c + h) + taps[3] * f(c + 3 * h)
    elif c + h <= extent - 1:
        p = 0.5 * f(c - h) + 0.5 * f(c + h)
    elif c - 3 * h >= 0:
        p = 0.5 * f(c - h) + 0.5 * f(c - 3 * h)
    else:
        p = f(c - h)
    with np.errstate(over="ignore"):
        return p.astype(np.float32)


def _quantize_plane(pred32: np.ndarray, orig32: np.ndarray, cfg: QuantizerConfig):
    """Vectorized quantizer; returns (codes int32, recon float32, outlier mask)."""
    p = pred32.astype(np.float64)
    o = orig32.astype(np.float64)
    err = o - p
    teb = 2.0 * cfg.eb_abs
    if teb > 0.0:
        x = err / teb
        bins = np.floor(np.abs(x) + 0.5) * np.sign(x)
    else:
        bins = np.zeros_like(err)
    out = np.abs(bins) >= cfg.radius
    bins = np.where(out, 0.0, bins)
    with np.errstate(over="ignore"):
        rec = (p + teb * bins).astype(np.float32)
    out |= np.abs(o - rec.astype(np.float64)) > cfg.eb_abs
    rec = np.where(out, orig32, rec)
    codes = np.where(out, OUTLIER_CODE,
                     bins.astype(np.int32) + cfg.radius).astype(np.int32)
    return codes, rec, out


def quantize(pred, orig, cfg: QuantizerConfig):
    """Scalar quantizer: (code, recon); code 0 is the outlier sentinel."""
    codes, rec, _ = _quantize_plane(
        np.asarray([pred], dtype=np.float32),
        np.asarray([orig], dtype=np.float32), cfg)
    return int(codes[0]), np.float32(rec[0])


def interpolate_level(block: np.ndarray, level: int, axis, cfg: QuantizerConfig,
                      ) -> np.ndarray:
    """Predictions for all new points of one (level, axis) pass over a block.

    `block` is the reconstructed lattice (stride 2^level already filled).
    Returns a flat float32 array in pass order.
    """
    axis = Axis(axis)
    if block.ndim != 3:
        raise DataFormatError(f"expected a 3D block, got shape {block.shape}")
    cap = 1 << max(int(d) - 1 for d in block.shape).bit_length()
    if level < 1 or (1 << (level - 1)) >= cap:
        raise DataFormatError(
            f"level {level} outside the block's lattice (shape {block.shape})")
    news, extent, h, sel = _pass_selectors(block.shape, level, axis)
    planes = [_predict_plane(block, sel, c, h, extent, cfg.taps).ravel()
              for c in news]
    if not planes:
        return np.empty(0, dtype=np.float32)
    return np.concatenate(planes)


def _block_view(arr: np.ndarray, grid: BlockGrid, block_id: int) -> np.ndarray:
    ox, oy, oz = grid.origin(block_id)
    ex, ey, ez = grid.shape(block_id)
    return arr[ox:ox + ex, oy:oy + ey, oz:oz + ez]


def _encode_pass(rec_b, org_b, level, axis, cfg, seg, seg_base,
                 out_idx_acc, out_val_acc):
    """Run one (level, axis) pass over a block, filling its code segment.

    seg is the canonical-order slot for this pass; seg_base its absolute
    offset, used to key outliers by canonical position.
    """
    news, extent, h, sel = _pass_selectors(rec_b.shape, level, axis)
    pos = 0
    for c in news:
        pred = _predict_plane(rec_b, sel, c, h, extent, cfg.taps)
        o32 = org_b[sel(c)]
        cplane, rplane, out = _quantize_plane(pred, o32, cfg)
        rec_b[sel(c)] = rplane
        n = cplane.size
        seg[pos:pos + n] = cplane.ravel()
        if out.any():
            flat = np.flatnonzero(out.ravel())
            out_idx_acc.append(seg_base + pos + flat)
            out_val_acc.append(np.asarray(o32[out], dtype=np.float32))
        pos += n


def _decode_pass(rec_b, level, axis, cfg, seg, local_pos, local_val):
    """Replay one pass from its code segment; local_pos are segment-relative
    outlier positions (sorted), local_val the raw values to substitute."""
    news, extent, h, sel = _pass_selectors(rec_b.shape, level, axis)
    teb = 2.0 * cfg.eb_abs
    pos = 0
    for c in news:
        pred = _predict_plane(rec_b, sel, c, h, extent, cfg.taps)
        n = pred.size
        cplane = seg[pos:pos + n].reshape(pred.shape)
        bins = (cplane - cfg.radius).astype(np.float64)
        with np.errstate(over="ignore"):
            rplane = (pred.astype(np.float64) + teb * bins).astype(np.float32)
        view = rec_b[sel(c)]
        view[...] = rplane
        lo, hi = np.searchsorted(local_pos, [pos, pos + n])
        if hi > lo:
            rel = (local_pos[lo:hi] - pos).astype(np.intp)
            view[np.unravel_index(rel, pred.shape)] = local_val[lo:hi]
        pos += n


def _slice_stats(rec: np.ndarray) -> SliceStats:
    return SliceStats(mins=rec.min(axis=(0, 1)), maxs=rec.max(axis=(0, 1)))


def _compress(v: Volume, cfg: QuantizerConfig, block_size: int, order: str):
    grid = make_grid(v.dims, block_size)
    offsets, total = canonical_offsets(grid)
    org = v.data
    rec = np.zeros(v.dims, dtype=np.float32)

    a = anchor_stride(block_size)
    anchor_parts = []
    for b in range(grid.block_count):
        lat = _block_view(org, grid, b)[::a, ::a, ::a]
        _block_view(rec, grid, b)[::a, ::a, ::a] = lat
        anchor_parts.append(lat.ravel())
    anchors = np.concatenate(anchor_parts)

    codes = np.zeros(total, dtype=np.int32)
    out_idx_acc: list[np.ndarray] = []
    out_val_acc: list[np.ndarray] = []
    nx, ny, _ = v.dims
    slice_bytes = nx * ny * 4
    events = []
    for step in schedule_steps(grid, order):
        events.append(step_event(step, slice_bytes))
        if not isinstance(step, PassStep):
            continue
        off, cnt = offsets[(step.level, step.axis, step.block_id)]
        _encode_pass(_block_view(rec, grid, step.block_id),
                     _block_view(org, grid, step.block_id),
                     step.level, step.axis, cfg,
                     codes[off:off + cnt], off, out_idx_acc, out_val_acc)

    if out_idx_acc:
        idx = np.concatenate(out_idx_acc)
        val = np.concatenate(out_val_acc)
        srt = np.argsort(idx, kind="stable")
        outlier_idx = idx[srt].astype(np.uint64)
        outlier_val = val[srt]
    else:
        outlier_idx = np.empty(0, dtype=np.uint64)
        outlier_val = np.empty(0, dtype=np.float32)

    stream = QuantCodeStream(codes=codes, outlier_idx=outlier_idx,
                             outlier_val=outlier_val, anchors=anchors)
    trace = ExecTrace(phase=PHASE_COMPRESS, order=order, dims=v.dims,
                      block_size=block_size, epochs=0, payload_bytes=0,
                      events=events)
    return stream, volume_from_array(rec), _slice_stats(rec), trace


def compress_predict_bfs(v: Volume, cfg: QuantizerConfig, block_size: int = 32):
    """Breadth-first prediction: every level sweeps all blocks (canonical order)."""
    return _compress(v, cfg, block_size, "bfs")


def compress_predict_lookahead(v: Volume, cfg: QuantizerConfig,
                               block_size: int = 32):
    """Depth-first look-ahead prediction; output is byte-identical to BFS."""
    return _compress(v, cfg, block_size, "lookahead")


def decompress_predict(stream: QuantCodeStream, cfg: QuantizerConfig,
                       dims: tuple[int, int, int], block_size: int = 32,
                       order: str = "bfs"):
    """Rebuild the volume from codes; bit-identical to the compressor recon."""
    grid = make_grid(dims, block_size)
    offsets, total = canonical_offsets(grid)
    codes = np.asarray(stream.codes)
    if codes.size != total:
        raise StreamCorruptError(
            f"code stream has {codes.size} codes, dims {dims} need {total}",
            offset=min(codes.size, total))
    if codes.size and (codes.min() < 0 or codes.max() > 2 * cfg.radius):
        raise DataFormatError("quantization code outside [0, 2*radius]")

    out_idx = np.asarray(stream.outlier_idx, dtype=np.int64)
    out_val = np.asarray(stream.outlier_val, dtype=np.float32)
    if out_idx.size != out_val.size:
        raise DataFormatError("outlier index/value arrays differ in length")
    if out_idx.size and (np.any(np.diff(out_idx) <= 0)
                         or out_idx[0] < 0 or out_idx[-1] >= total):
        raise DataFormatError("outlier indices must be sorted, unique, in range")
    zero_positions = np.flatnonzero(codes == OUTLIER_CODE)
    if not np.array_equal(zero_positions, out_idx):
        raise DataFormatError(
            "outlier side channel does not match sentinel code positions")

    anchors = np.asarray(stream.anchors, dtype=np.float32)
    rec = np.zeros(dims, dtype=np.float32)
    a = anchor_stride(block_size)
    cur = 0
    for b in range(grid.block_count):
        lat = _block_view(rec, grid, b)[::a, ::a, ::a]
        if cur + lat.size > anchors.size:
            raise StreamCorruptError(
                f"anchor stream exhausted at block {b}", offset=cur)
        lat[...] = anchors[cur:cur + lat.size].reshape(lat.shape)
        cur += lat.size
    if cur != anchors.size:
        raise StreamCorruptError(
            f"anchor stream has {anchors.size} values, expected {cur}",
            offset=cur)

    nx, ny, _ = dims
    slice_bytes = nx * ny * 4
    events = []
    for step in schedule_steps(grid, order):
        events.append(step_event(step, slice_bytes))
        if not isinstance(step, PassStep):
            continue
        off, cnt = offsets[(step.level, step.axis, step.block_id)]
        lo, hi = np.searchsorted(out_idx, [off, off + cnt])
        _decode_pass(_block_view(rec, grid, step.block_id),
                     step.level, step.axis, cfg, codes[off:off + cnt],
                     out_idx[lo:hi] - off, out_val[lo:hi])

    trace = ExecTrace(phase=PHASE_DECOMPRESS, order=order, dims=dims,
                      block_size=block_size, epochs=0, payload_bytes=0,
                      events=events)
    return volume_from_array(rec), _slice_stats(rec), trace
