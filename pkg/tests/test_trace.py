"""Execution-trace framing and synthesis tests.

The trace of a run must be reproducible from the run configuration alone;
these tests pin the binary framing, the event interleaving for both phases,
and the corruption checks of the reader.
"""

import io

import numpy as np
import pytest

from flarezip.errors import DataFormatError, StreamCorruptError
from flarezip.schedule import make_grid
from flarezip.trace import (
    MACS_PER_POINT,
    TRAIN_PASSES_PER_EPOCH,
    CodecSymbols,
    EmitSliceBatch,
    ExecTrace,
    NeuralSlice,
    PredictBatch,
    Warn,
    build_trace,
    read_trace,
    synthesize_trace,
    write_trace,
)


def roundtrip(trace: ExecTrace) -> ExecTrace:
    buf = io.BytesIO()
    write_trace(buf, trace)
    buf.seek(0)
    return read_trace(buf)


def test_macs_per_point_constant():
    # 3x3 kernels over the 1->16->16->16->1 channel chain
    assert MACS_PER_POINT == 9 * (1 * 16 + 16 * 16 + 16 * 16 + 16 * 1)
    assert TRAIN_PASSES_PER_EPOCH == 3


@pytest.mark.parametrize("order", ["bfs", "lookahead"])
@pytest.mark.parametrize("phase", ["compress", "decompress"])
def test_framing_roundtrip(order, phase):
    tr = synthesize_trace((40, 24, 36), 8, order, phase, epochs=4,
                          payload_bytes=12345)
    back = roundtrip(tr)
    assert back == tr


def test_compress_interleaving():
    tr = synthesize_trace((16, 16, 16), 8, "bfs", "compress", epochs=2)
    events = tr.events
    # codec symbols immediately follow every prediction batch
    for i, ev in enumerate(events):
        if isinstance(ev, PredictBatch):
            nxt = events[i + 1]
            assert isinstance(nxt, CodecSymbols)
            assert nxt.count == ev.point_count
        if isinstance(ev, EmitSliceBatch):
            for k in range(ev.z_count):
                ns = events[i + 1 + k]
                assert isinstance(ns, NeuralSlice)
                assert ns.slice_index == ev.z_start + k
                assert ns.mac_count == (16 * 16 * MACS_PER_POINT
                                        * (1 + TRAIN_PASSES_PER_EPOCH * 2))
    # coded symbols cover every non-anchor point exactly once
    from flarezip.schedule import total_anchor_count

    grid = make_grid((16, 16, 16), 8)
    assert tr.total_symbols() == tr.point_count - total_anchor_count(grid)


def test_decompress_interleaving():
    tr = synthesize_trace((16, 16, 16), 8, "bfs", "decompress", epochs=0)
    events = tr.events
    for i, ev in enumerate(events):
        if isinstance(ev, PredictBatch):
            prev = events[i - 1]
            assert isinstance(prev, CodecSymbols)
            assert prev.count == ev.point_count
        if isinstance(ev, NeuralSlice):
            # inference only on reconstruction
            assert ev.mac_count == 16 * 16 * MACS_PER_POINT
    assert tr.epochs == 0


def test_synthesized_deterministic():
    a = synthesize_trace((33, 20, 27), 16, "lookahead", "compress", epochs=3)
    b = synthesize_trace((33, 20, 27), 16, "lookahead", "compress", epochs=3)
    assert a == b


def test_single_block_fallback_warning_in_trace():
    tr = synthesize_trace((8, 8, 8), 8, "lookahead", "compress")
    assert any(isinstance(ev, Warn) for ev in tr.events)


def test_peak_working_set_matches_schedule():
    from flarezip.schedule import peak_working_set

    grid = make_grid((64, 64, 64), 32)
    tr = synthesize_trace((64, 64, 64), 32, "lookahead", "compress")
    assert tr.peak_working_set() == peak_working_set(grid, "lookahead")


def test_build_trace_equals_synthesize():
    grid = make_grid((24, 16, 20), 8)
    tr = build_trace("compress", grid, "lookahead", epochs=1,
                     payload_bytes=777)
    syn = synthesize_trace((24, 16, 20), 8, "lookahead", "compress",
                           epochs=1, payload_bytes=777)
    assert tr == syn


def test_bad_magic_rejected():
    tr = synthesize_trace((8, 8, 8), 4, "bfs", "compress")
    buf = io.BytesIO()
    write_trace(buf, tr)
    raw = bytearray(buf.getvalue())
    raw[:4] = b"XXXX"
    with pytest.raises(StreamCorruptError):
        read_trace(io.BytesIO(bytes(raw)))


def test_bad_version_rejected():
    tr = synthesize_trace((8, 8, 8), 4, "bfs", "compress")
    buf = io.BytesIO()
    write_trace(buf, tr)
    raw = bytearray(buf.getvalue())
    raw[4] = 0xEE
    raw[5] = 0xEE
    with pytest.raises(DataFormatError):
        read_trace(io.BytesIO(bytes(raw)))


def test_truncated_trace_rejected():
    tr = synthesize_trace((16, 16, 16), 8, "bfs", "compress")
    buf = io.BytesIO()
    write_trace(buf, tr)
    raw = buf.getvalue()
    for cut in (3, len(raw) // 2, len(raw) - 1):
        with pytest.raises(StreamCorruptError):
            read_trace(io.BytesIO(raw[:cut]))


def test_unknown_event_kind_rejected():
    tr = synthesize_trace((8, 8, 8), 4, "bfs", "compress")
    buf = io.BytesIO()
    write_trace(buf, tr)
    raw = bytearray(buf.getvalue())
    # first event kind byte sits right after the fixed header
    from flarezip.trace import _HEADER

    raw[_HEADER.size] = 99
    with pytest.raises(StreamCorruptError):
        read_trace(io.BytesIO(bytes(raw)))


def test_trace_total_symbols_excludes_anchors():
    dims = (32, 32, 32)
    tr = synthesize_trace(dims, 8, "bfs", "compress")
    grid = make_grid(dims, 8)
    from flarezip.schedule import total_anchor_count

    n = dims[0] * dims[1] * dims[2]
    assert tr.total_symbols() == n - total_anchor_count(grid)
