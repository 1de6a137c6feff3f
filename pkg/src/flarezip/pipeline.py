"""End-to-end compression pipeline gluing the stages together.

Compression: level-wise interpolation prediction quantizes every non-anchor
point (canonical order), the codes are canonically Huffman coded, and an
optional per-volume enhancement net is trained online on (reconstructed,
original) slice pairs. The container stores anchors, outliers, the code
table, the bit payload, and the trained parameters; nothing else. Slice
statistics are NOT stored: the decompressor rebuilds the identical
reconstruction first, so it recomputes bit-identical per-slice min/max.

Decompression: decode codes, rebuild the predictor reconstruction (bit
identical to the compressor's), then run the enhancement net per Z slice
and clamp to +-eb_abs around the reconstruction. The clamp keeps the final
output within 2*eb_abs of the original (predictor bound + clamp rail).

Both phases also assemble the execution trace of the run for the
performance model. The trace always carries NeuralSlice events, matching
hardware where slices stream through the enhancement engine
unconditionally; an empty parameter section behaves as an identity pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .codec import StreamHeader, decode, encode, pack_stream, table_for, unpack_stream
from .errors import DataFormatError
from .neural import (
    DEFAULT_LR,
    enhance_and_clamp,
    forward,
    init_params,
    parse_params,
    serialize_params,
    train_online,
)
from .predictor import (
    DEFAULT_RADIUS,
    QuantCodeStream,
    QuantizerConfig,
    SliceStats,
    compress_predict_bfs,
    compress_predict_lookahead,
    decompress_predict,
)
from .schedule import canonical_offsets, make_grid
from .trace import PHASE_COMPRESS, PHASE_DECOMPRESS, ExecTrace, build_trace
from .volume import Volume, psnr, volume_from_array

#: interior interpolator identifier stored in the container header
TAPS_CUBIC_ID = 1

ORDERS = ("bfs", "lookahead")


@dataclass
class CompressResult:
    blob: bytes
    metrics: dict
    trace: ExecTrace
    predictor_volume: Volume
    output_volume: Volume   # what decompression of `blob` will produce


@dataclass
class DecompressResult:
    volume: Volume
    predictor_volume: Volume
    header: StreamHeader
    trace: ExecTrace


def slice_pairs(recon: Volume, orig: Volume, stats: SliceStats) -> list:
    """(recon slice, orig slice, (min, max)) training triples, z ascending."""
    nz = recon.dims[2]
    return [
        (recon.data[:, :, z], orig.data[:, :, z],
         (float(stats.mins[z]), float(stats.maxs[z])))
        for z in range(nz)
    ]


def apply_enhancement(recon: Volume, stats: SliceStats, params,
                      eb_abs: float) -> Volume:
    """Run the net over every Z slice and clamp to +-eb_abs around recon."""
    nx, ny, nz = recon.dims
    out = np.empty(recon.dims, dtype=np.float32)
    rec = recon.data
    for z in range(nz):
        rs = rec[:, :, z]
        enh = forward(params, rs, (float(stats.mins[z]), float(stats.maxs[z])))
        out[:, :, z] = enhance_and_clamp(rs, enh - rs, eb_abs)
    return volume_from_array(out)


def compress(volume: Volume, eb_rel: float, block_size: int = 32,
             order: str = "lookahead", epochs: int = 6, seed: int = 0,
             lr: float = DEFAULT_LR,
             radius: int = DEFAULT_RADIUS) -> CompressResult:
    """Full compression; the stream bytes are independent of `order`."""
    if eb_rel <= 0.0:
        raise DataFormatError(f"relative error bound must be positive, "
                              f"got {eb_rel}")
    if order not in ORDERS:
        raise DataFormatError(f"unknown schedule order {order!r}")
    if epochs < 0:
        raise DataFormatError("epochs must be >= 0")
    nx, ny, _ = volume.dims
    if epochs > 0 and min(nx, ny) < 3:
        raise DataFormatError(
            f"slices of {volume.dims} are too small for the 3x3 net; "
            f"use epochs=0")

    t0 = time.perf_counter()
    cfg = QuantizerConfig.from_range(eb_rel, volume.value_range, radius)
    predict = (compress_predict_lookahead if order == "lookahead"
               else compress_predict_bfs)
    stream, recon, stats, pred_trace = predict(volume, cfg, block_size)

    table = table_for(stream.codes)
    payload, nbits = encode(stream.codes, table)

    if epochs > 0:
        params = train_online(init_params(seed), slice_pairs(recon, volume, stats),
                              epochs, lr=lr)
        flat = serialize_params(params)
        output = apply_enhancement(recon, stats, params, cfg.eb_abs)
    else:
        flat = np.empty(0, dtype=np.float32)
        output = recon

    header = StreamHeader(
        dims=volume.dims, eb_rel=eb_rel, value_range=volume.value_range,
        block_size=block_size, radius=radius, taps_id=TAPS_CUBIC_ID,
    )
    blob = pack_stream(header, stream.anchors, stream.outlier_idx,
                       stream.outlier_val, table, payload, nbits, flat)
    trace = build_trace(PHASE_COMPRESS, make_grid(volume.dims, block_size),
                        order, epochs, payload_bytes=len(payload),
                        pred_events=pred_trace.events)
    metrics = {
        "ratio": volume.nbytes / len(blob),
        "psnr_predictor": psnr(volume, recon),
        "psnr_enhanced": psnr(volume, output),
        "input_bytes": volume.nbytes,
        "stream_bytes": len(blob),
        "payload_bits": nbits,
        "outlier_count": int(stream.outlier_idx.size),
        "epochs": epochs,
        "order": order,
        "eb_rel": eb_rel,
        "eb_abs": cfg.eb_abs,
        "seconds": time.perf_counter() - t0,
    }
    return CompressResult(blob=blob, metrics=metrics, trace=trace,
                          predictor_volume=recon, output_volume=output)


def decompress(blob: bytes, order: str = "lookahead") -> DecompressResult:
    """Rebuild the volume from a container; `order` only shapes the trace."""
    if order not in ORDERS:
        raise DataFormatError(f"unknown schedule order {order!r}")
    (header, anchors, outlier_idx, outlier_val, table,
     payload, nbits, flat) = unpack_stream(blob)
    if header.taps_id != TAPS_CUBIC_ID:
        raise DataFormatError(
            f"stream uses unknown interpolator id {header.taps_id}")
    cfg = QuantizerConfig.from_range(header.eb_rel, header.value_range,
                                     header.radius)
    grid = make_grid(header.dims, header.block_size)
    _, total = canonical_offsets(grid)
    codes = decode(payload, table, total, nbits).astype(np.int32)
    stream = QuantCodeStream(codes=codes, outlier_idx=outlier_idx,
                             outlier_val=outlier_val, anchors=anchors)
    recon, stats, pred_trace = decompress_predict(
        stream, cfg, header.dims, header.block_size, order)

    if flat.size:
        params = parse_params(flat)
        out = apply_enhancement(recon, stats, params, cfg.eb_abs)
    else:
        out = recon
    trace = build_trace(PHASE_DECOMPRESS, grid, order, 0,
                        payload_bytes=len(payload),
                        pred_events=pred_trace.events)
    return DecompressResult(volume=out, predictor_volume=recon,
                            header=header, trace=trace)
