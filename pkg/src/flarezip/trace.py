"""Execution traces: the ordered event log bridging compression and the simulator.

A trace records, in logical schedule order, everything the performance model
needs: prediction passes with their post-pass working set, block flushes out
of the prediction buffer, whole Z-slice emissions, codec symbol batches, and
per-slice neural work. The event sequence is a pure function of
(dims, block_size, order, phase, epochs); real runs build it from the very
schedule steps they execute, and synthesize_trace() rebuilds it without any
data, so traces for the simulator never require running the compressor.

Event interleaving per phase:

* compress: each prediction pass is followed by the codec consuming that
  pass's quantization codes (CodecSymbols after PredictBatch); every emitted
  Z-slice is followed by one NeuralSlice event whose MAC count includes
  online training (1 + 3*epochs forward-equivalent passes).
* decompress: the codec produces codes before the predictor consumes them
  (CodecSymbols before PredictBatch); NeuralSlice events carry inference
  MACs only.

Binary framing (little-endian throughout): header magic "FLTR", version u16,
phase u8, order u8, dims 3*u32, block_size u32, epochs u32, payload_bytes
u64, event_count u64; then per event a kind byte followed by that kind's
fixed-width fields. payload_bytes is the encoded Huffman payload size when
known, 0 when synthesized (consumers fall back to a 1 byte/symbol estimate).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

from .errors import DataFormatError, StreamCorruptError
from .schedule import EmitStep, FlushStep, PassStep, WarnStep, make_grid, schedule_steps
from .volume import BlockGrid

TRACE_MAGIC = b"FLTR"
TRACE_VERSION = 1

PHASE_COMPRESS = "compress"
PHASE_DECOMPRESS = "decompress"
_PHASE_IDS = {PHASE_COMPRESS: 0, PHASE_DECOMPRESS: 1}
_ORDER_IDS = {"bfs": 0, "lookahead": 1}

WARN_BFS_FALLBACK = 1
_WARN_CODES = {"bfs_fallback": WARN_BFS_FALLBACK}

#: MACs per slice point for the enhancement net: four 3x3 conv layers over
#: channel fan 1->16->16->16->1 gives 9*(16+256+256+16) multiply-accumulates.
MACS_PER_POINT = 9 * (16 + 256 + 256 + 16)

#: training cost per epoch in forward-equivalent passes (forward + input
#: gradient + weight gradient).
TRAIN_PASSES_PER_EPOCH = 3


@dataclass(frozen=True)
class PredictBatch:
    level: int
    axis: int
    block_id: int
    point_count: int
    working_set_bytes: int


@dataclass(frozen=True)
class EmitSliceBatch:
    z_start: int
    z_count: int
    byte_count: int


@dataclass(frozen=True)
class CodecSymbols:
    count: int


@dataclass(frozen=True)
class NeuralSlice:
    slice_index: int
    mac_count: int


@dataclass(frozen=True)
class Warn:
    code: int


@dataclass(frozen=True)
class BlockFlush:
    byte_count: int


@dataclass
class ExecTrace:
    phase: str
    order: str
    dims: tuple[int, int, int]
    block_size: int
    epochs: int
    payload_bytes: int
    events: list = field(default_factory=list)

    @property
    def point_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def peak_working_set(self) -> int:
        return max(
            (e.working_set_bytes for e in self.events if isinstance(e, PredictBatch)),
            default=0,
        )

    def total_symbols(self) -> int:
        return sum(e.count for e in self.events if isinstance(e, CodecSymbols))


def step_event(step, slice_bytes: int):
    """Convert one schedule step into its trace event."""
    if isinstance(step, PassStep):
        return PredictBatch(
            level=step.level,
            axis=int(step.axis),
            block_id=step.block_id,
            point_count=step.point_count,
            working_set_bytes=step.working_set_bytes,
        )
    if isinstance(step, FlushStep):
        return BlockFlush(byte_count=step.byte_count)
    if isinstance(step, EmitStep):
        return EmitSliceBatch(
            z_start=step.z_start,
            z_count=step.z_count,
            byte_count=step.z_count * slice_bytes,
        )
    if isinstance(step, WarnStep):
        return Warn(code=_WARN_CODES[step.reason])
    raise DataFormatError(f"unknown schedule step {step!r}")


def predictor_events(grid: BlockGrid, order: str) -> list:
    """Predictor-side events for one phase: passes, flushes, slice emissions."""
    nx, ny, _ = grid.dims
    slice_bytes = nx * ny * 4
    return [step_event(step, slice_bytes) for step in schedule_steps(grid, order)]


def _interleave(pred_events: list, dims: tuple[int, int, int],
                phase: str, epochs: int) -> list:
    nx, ny, _ = dims
    if phase == PHASE_COMPRESS:
        mac = nx * ny * MACS_PER_POINT * (1 + TRAIN_PASSES_PER_EPOCH * epochs)
    else:
        mac = nx * ny * MACS_PER_POINT
    out = []
    for ev in pred_events:
        if isinstance(ev, PredictBatch):
            if phase == PHASE_COMPRESS:
                out.append(ev)
                out.append(CodecSymbols(count=ev.point_count))
            else:
                out.append(CodecSymbols(count=ev.point_count))
                out.append(ev)
        elif isinstance(ev, EmitSliceBatch):
            out.append(ev)
            for z in range(ev.z_start, ev.z_start + ev.z_count):
                out.append(NeuralSlice(slice_index=z, mac_count=mac))
        else:
            out.append(ev)
    return out


def build_trace(phase: str, grid: BlockGrid, order: str, epochs: int,
                payload_bytes: int = 0, pred_events: list | None = None) -> ExecTrace:
    """Assemble the full per-phase trace around predictor events.

    `pred_events` lets a real run pass the events it actually executed;
    omitted, they are regenerated from the schedule (synthesis path).
    """
    if phase not in _PHASE_IDS:
        raise DataFormatError(f"unknown trace phase {phase!r}")
    if pred_events is None:
        pred_events = predictor_events(grid, order)
    return ExecTrace(
        phase=phase,
        order=order,
        dims=grid.dims,
        block_size=grid.block_size,
        epochs=epochs if phase == PHASE_COMPRESS else 0,
        payload_bytes=payload_bytes,
        events=_interleave(pred_events, grid.dims, phase, epochs),
    )


def synthesize_trace(dims: tuple[int, int, int], block_size: int, order: str,
                     phase: str, epochs: int = 0, payload_bytes: int = 0) -> ExecTrace:
    """Build the trace for a run without any volume data.

    The event sequence is data-independent, so this matches the trace of a
    real run over the same geometry (payload_bytes aside, which is data).
    """
    grid = make_grid(dims, block_size)
    return build_trace(phase, grid, order, epochs, payload_bytes)


_HEADER = struct.Struct("<4sHBB3IIIQQ")
_EV_PREDICT = struct.Struct("<BBIIQ")
_EV_EMIT = struct.Struct("<IIQ")
_EV_U64 = struct.Struct("<Q")
_EV_NEURAL = struct.Struct("<IQ")

_KIND_PREDICT = 1
_KIND_EMIT = 2
_KIND_CODEC = 3
_KIND_NEURAL = 4
_KIND_WARN = 5
_KIND_FLUSH = 6


def write_trace(dest, trace: ExecTrace) -> None:
    """Serialize a trace to a path or binary file object."""
    buf = io.BytesIO()
    buf.write(_HEADER.pack(
        TRACE_MAGIC, TRACE_VERSION,
        _PHASE_IDS[trace.phase], _ORDER_IDS[trace.order],
        trace.dims[0], trace.dims[1], trace.dims[2],
        trace.block_size, trace.epochs, trace.payload_bytes,
        len(trace.events),
    ))
    for ev in trace.events:
        if isinstance(ev, PredictBatch):
            buf.write(bytes([_KIND_PREDICT]))
            buf.write(_EV_PREDICT.pack(ev.level, ev.axis, ev.block_id,
                                       ev.point_count, ev.working_set_bytes))
        elif isinstance(ev, EmitSliceBatch):
            buf.write(bytes([_KIND_EMIT]))
            buf.write(_EV_EMIT.pack(ev.z_start, ev.z_count, ev.byte_count))
        elif isinstance(ev, CodecSymbols):
            buf.write(bytes([_KIND_CODEC]))
            buf.write(_EV_U64.pack(ev.count))
        elif isinstance(ev, NeuralSlice):
            buf.write(bytes([_KIND_NEURAL]))
            buf.write(_EV_NEURAL.pack(ev.slice_index, ev.mac_count))
        elif isinstance(ev, Warn):
            buf.write(bytes([_KIND_WARN, ev.code]))
        elif isinstance(ev, BlockFlush):
            buf.write(bytes([_KIND_FLUSH]))
            buf.write(_EV_U64.pack(ev.byte_count))
        else:
            raise DataFormatError(f"cannot serialize trace event {ev!r}")
    if hasattr(dest, "write"):
        dest.write(buf.getvalue())
    else:
        with open(dest, "wb") as fh:
            fh.write(buf.getvalue())


def read_trace(src) -> ExecTrace:
    """Parse a trace from a path or binary file object."""
    if hasattr(src, "read"):
        raw = src.read()
    else:
        with open(src, "rb") as fh:
            raw = fh.read()
    if len(raw) < _HEADER.size:
        raise StreamCorruptError("trace shorter than header", offset=len(raw))
    (magic, version, phase_id, order_id, nx, ny, nz,
     block_size, epochs, payload_bytes, count) = _HEADER.unpack_from(raw, 0)
    if magic != TRACE_MAGIC:
        raise StreamCorruptError(f"bad trace magic {magic!r}", offset=0)
    if version != TRACE_VERSION:
        raise DataFormatError(f"unsupported trace version {version}")
    phases = {v: k for k, v in _PHASE_IDS.items()}
    orders = {v: k for k, v in _ORDER_IDS.items()}
    if phase_id not in phases or order_id not in orders:
        raise StreamCorruptError("bad phase/order byte", offset=6)
    pos = _HEADER.size
    events = []
    for _ in range(count):
        if pos >= len(raw):
            raise StreamCorruptError("trace truncated mid event list", offset=pos)
        kind = raw[pos]
        pos += 1
        try:
            if kind == _KIND_PREDICT:
                lv, ax, bid, pc, ws = _EV_PREDICT.unpack_from(raw, pos)
                pos += _EV_PREDICT.size
                events.append(PredictBatch(lv, ax, bid, pc, ws))
            elif kind == _KIND_EMIT:
                z0, zc, bc = _EV_EMIT.unpack_from(raw, pos)
                pos += _EV_EMIT.size
                events.append(EmitSliceBatch(z0, zc, bc))
            elif kind == _KIND_CODEC:
                (n,) = _EV_U64.unpack_from(raw, pos)
                pos += _EV_U64.size
                events.append(CodecSymbols(n))
            elif kind == _KIND_NEURAL:
                si, mc = _EV_NEURAL.unpack_from(raw, pos)
                pos += _EV_NEURAL.size
                events.append(NeuralSlice(si, mc))
            elif kind == _KIND_WARN:
                if pos >= len(raw):
                    raise StreamCorruptError("trace truncated mid event",
                                             offset=pos)
                events.append(Warn(raw[pos]))
                pos += 1
            elif kind == _KIND_FLUSH:
                (bc,) = _EV_U64.unpack_from(raw, pos)
                pos += _EV_U64.size
                events.append(BlockFlush(bc))
            else:
                raise StreamCorruptError(f"unknown trace event kind {kind}", offset=pos - 1)
        except struct.error as exc:
            raise StreamCorruptError(f"trace truncated: {exc}", offset=pos) from exc
    if pos != len(raw):
        raise StreamCorruptError(f"{len(raw) - pos} trailing bytes after the "
                                 "last event", offset=pos)
    return ExecTrace(
        phase=phases[phase_id],
        order=orders[order_id],
        dims=(nx, ny, nz),
        block_size=block_size,
        epochs=epochs,
        payload_bytes=payload_bytes,
        events=events,
    )
