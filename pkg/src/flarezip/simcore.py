"""Trace-driven performance and data-movement model of the computing core.

One core holds a Prediction Engine (M one-dimensional systolic arrays), a
Neural Engine (2D PE array with a global buffer), a Codec Engine with M
lanes, and two staging FIFOs: FIFO1 carries quantization codes from the
predictor to the codec (1 byte/symbol), FIFO2 carries reconstructed slices
to the Neural Engine (4 bytes/point). The simulation replays an execution
trace in event order with integer cycle clocks per resource: producers
block when a FIFO is full, consumers wait for their parcel, and a single
DRAM channel serves transfers serially at a fixed byte rate. The event
graph is acyclic, so the pipeline cannot deadlock; a parcel larger than its
FIFO is flagged as a capacity violation and pushed anyway, never clipped.

Modes:

* flare: pipelined execution. Compression reads originals from DRAM into
  the predictor and writes only the coded payload back; slice normalization
  is folded into the first conv layer, so it moves no bytes. Decompression
  chains codec -> prediction -> neural, with the enhanced volume as the
  only large DRAM write.
* baseline: the same work serialized stage by stage, each stage spilling
  its full intermediate to DRAM. Per volume of V bytes, compression moves
  3V in prediction (read originals, write recon, write codes), 5V in
  normalization (min/max scan V, normalize read+write 2V, denormalize
  read+write 2V), V in neural, and V + payload in the codec. The resulting
  stage savings of (5V, 2V, V, V) are what movement_breakdown reports.

Cost constants (CoreConfig) are model inputs, not measurements: a systolic
array emits one interpolated point per cycle after a fill ramp, the PE
array retires pe_rows*pe_cols*utilization MACs per cycle, codec lanes move
one symbol per enc/dec cycle count, and training costs 3 forward-equivalent
passes per epoch. Energy is a weighted byte/op count in arbitrary units.
Traces synthesized without a real payload fall back to 1 byte/symbol.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import deque
from dataclasses import dataclass

from .errors import DataFormatError, InternalInvariantError
from .trace import (
    BlockFlush,
    CodecSymbols,
    EmitSliceBatch,
    NeuralSlice,
    PredictBatch,
    Warn,
    ExecTrace,
    synthesize_trace,
)

MIB = 1 << 20
STAGES = ("prediction", "normalization", "neural", "codec")

_WARN_NAMES = {1: "bfs_fallback"}


@dataclass(frozen=True)
class CoreConfig:
    """Core geometry and cost model; all quantities must be positive."""

    M: int = 4
    N: int = 1
    sram_bytes: int = 32 * MIB
    fifo1_bytes: int = 8 * MIB
    fifo2_bytes: int = 32 * MIB
    pe_rows: int = 128
    pe_cols: int = 128
    global_buffer_bytes: int = 24 * MIB
    cycles_per_interp_point: int = 1
    systolic_fill: int = 4
    cycles_per_mac: int = 1
    neural_utilization: float = 0.7
    codec_cycles_per_symbol_enc: int = 2
    codec_cycles_per_symbol_dec: int = 4
    dram_bytes_per_cycle: int = 64
    energy_dram_byte: float = 10.0
    energy_sram_byte: float = 1.0
    energy_mac: float = 0.2

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v <= 0:
                raise DataFormatError(f"CoreConfig.{f.name} must be positive")
        if not self.neural_utilization <= 1.0:
            raise DataFormatError("neural_utilization must be in (0, 1]")
        for name in ("fifo1_bytes", "fifo2_bytes"):
            if getattr(self, name) > self.sram_bytes:
                raise DataFormatError(
                    f"{name} exceeds the SRAM budget of {self.sram_bytes} B")

    @property
    def macs_per_cycle(self) -> float:
        return self.pe_rows * self.pe_cols * self.neural_utilization


@dataclass
class SimReport:
    mode: str
    phase: str
    dims: tuple
    total_cycles: int
    engines: dict
    bubble_cycles: int
    fifo1_peak_bytes: int
    fifo2_peak_bytes: int
    fifo1_bytes_through: int
    fifo2_bytes_through: int
    sram_peak_bytes: int
    dram_bytes: dict
    dram_total: int
    macs_total: int
    symbols_total: int
    energy_units: float
    capacity_violations: list
    warnings: list

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dims"] = list(self.dims)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class MovementBreakdown:
    shares: dict
    savings_bytes: dict
    zero_savings: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class _Dram:
    """Full-duplex interface: one read and one write channel, each serving
    requests in issue order at dram_bytes_per_cycle."""

    def __init__(self, bw: int):
        self.bw = bw
        self.read_free = 0
        self.write_free = 0

    def read(self, nbytes: int, earliest: int) -> int:
        start = max(self.read_free, earliest)
        self.read_free = start + (_ceil_div(nbytes, self.bw) if nbytes else 0)
        return self.read_free

    def write(self, nbytes: int, earliest: int) -> int:
        start = max(self.write_free, earliest)
        self.write_free = start + (_ceil_div(nbytes, self.bw) if nbytes else 0)
        return self.write_free


class _Fifo:
    """Bounded staging buffer with parcel-granularity occupancy.

    Producers block until scheduled consumer releases make room; consumers
    assign each parcel's release time in FIFO order. By trace construction
    the oldest resident parcel always has a scheduled release when a push
    needs space, except when a single parcel exceeds capacity, which is
    flagged and pushed through.
    """

    def __init__(self, name: str, capacity: int, violations: list):
        self.name = name
        self.capacity = capacity
        self.resident = deque()  # [nbytes, release_time | None]
        self.pending = deque()
        self.occupancy = 0
        self.peak = 0
        self.through = 0
        self.violations = violations
        self.flagged = False

    def _drain(self, now: int):
        while self.resident and self.resident[0][1] is not None \
                and self.resident[0][1] <= now:
            self.occupancy -= self.resident.popleft()[0]

    def push(self, t: int, nbytes: int) -> int:
        self._drain(t)
        while self.occupancy + nbytes > self.capacity:
            if not self.resident or self.resident[0][1] is None:
                if not self.flagged:
                    self.violations.append(
                        f"{self.name} parcel of {nbytes} B exceeds capacity "
                        f"{self.capacity} B")
                    self.flagged = True
                break
            t = max(t, self.resident[0][1])
            self.occupancy -= self.resident.popleft()[0]
        parcel = [nbytes, None]
        self.resident.append(parcel)
        self.pending.append(parcel)
        self.occupancy += nbytes
        self.peak = max(self.peak, self.occupancy)
        self.through += nbytes
        return t

    def consume(self, release_time: int):
        if not self.pending:
            raise InternalInvariantError(
                f"{self.name}: consumer ran without a staged parcel")
        self.pending.popleft()[1] = release_time


class _Lanes:
    """Fixed lane pool with earliest-free, lowest-index assignment."""

    def __init__(self, count: int):
        self.free = [0] * count
        self.busy = [0] * count
        self.stall = [0] * count

    def pick(self) -> int:
        return min(range(len(self.free)), key=lambda i: (self.free[i], i))

    def run(self, lane: int, ready: int, duration: int, done: int):
        """Account one job: idle wait before `ready`, service, post-wait."""
        self.stall[lane] += max(0, ready - self.free[lane])
        self.busy[lane] += duration
        self.stall[lane] += max(0, done - ready - duration)
        self.free[lane] = done

    def report(self) -> dict:
        i = max(range(len(self.free)),
                key=lambda k: (self.busy[k] + self.stall[k], self.busy[k]))
        return {"busy": self.busy[i], "stall": self.stall[i],
                "work": sum(self.busy)}

    def makespan(self) -> int:
        return max(self.free)


def _neural_cycles(mac_count: int, cfg: CoreConfig) -> int:
    return int(math.ceil(mac_count * cfg.cycles_per_mac / cfg.macs_per_cycle))


def _codec_cycles(count: int, cfg: CoreConfig, phase: str) -> int:
    cps = (cfg.codec_cycles_per_symbol_enc if phase == "compress"
           else cfg.codec_cycles_per_symbol_dec)
    return _ceil_div(count * cps, cfg.M)


def _payload_shares(trace: ExecTrace, payload: int) -> list[int]:
    """Pro-rata payload bytes per CodecSymbols batch, summing exactly."""
    counts = [e.count for e in trace.events if isinstance(e, CodecSymbols)]
    total = sum(counts)
    if total == 0:
        return [0] * len(counts)
    shares = []
    cum = 0
    prev = 0
    for c in counts:
        cum += c
        cur = payload * cum // total
        shares.append(cur - prev)
        prev = cur
    return shares


def _trace_sums(trace: ExecTrace):
    p4 = sum(e.point_count for e in trace.events
             if isinstance(e, PredictBatch)) * 4
    s = sum(e.byte_count for e in trace.events
            if isinstance(e, EmitSliceBatch))
    syms = trace.total_symbols()
    macs = sum(e.mac_count for e in trace.events
               if isinstance(e, NeuralSlice))
    return p4, s, syms, macs


def _stage_dram(trace: ExecTrace, payload: int, mode: str) -> dict:
    """Per-stage DRAM byte ledger; see the module docstring."""
    p4, s, syms, _ = _trace_sums(trace)
    c4 = syms * 4
    if trace.phase == "compress":
        if mode == "baseline":
            return {"prediction": p4 + s + c4, "normalization": 5 * s,
                    "neural": s, "codec": c4 + payload}
        return {"prediction": p4, "normalization": 0,
                "neural": 0, "codec": payload}
    if mode == "baseline":
        return {"prediction": c4 + s, "normalization": 5 * s,
                "neural": 2 * s, "codec": payload + c4}
    return {"prediction": 0, "normalization": 0,
            "neural": s, "codec": payload}


def _pred_sram_bytes(trace: ExecTrace, cfg: CoreConfig) -> int:
    """On-chip traffic of interpolation: tap reads plus one write per point."""
    pts = sum(e.point_count for e in trace.events
              if isinstance(e, PredictBatch))
    return pts * 4 * (cfg.systolic_fill + 1)


def simulate(trace: ExecTrace, cfg: CoreConfig, mode: str = "flare",
             phase: str | None = None) -> SimReport:
    """Replay one phase's trace under the chosen execution mode."""
    if mode not in ("baseline", "flare"):
        raise DataFormatError(f"unknown simulation mode {mode!r}")
    if phase is not None and phase != trace.phase:
        raise DataFormatError(
            f"trace is a {trace.phase} trace, not {phase}")
    phase = trace.phase
    _, s_bytes, syms, macs = _trace_sums(trace)
    payload = trace.payload_bytes if trace.payload_bytes else syms
    dram_bytes = _stage_dram(trace, payload, mode)
    violations: list[str] = []
    warnings = [_WARN_NAMES.get(e.code, f"warn_{e.code}")
                for e in trace.events if isinstance(e, Warn)]

    nx, ny, _ = trace.dims
    slice_bytes = nx * ny * 4

    if mode == "flare":
        total, engines, f1, f2 = _run_flare(trace, cfg, payload, violations)
    else:
        total, engines = _run_baseline(trace, cfg, payload, dram_bytes)
        f1 = f2 = None

    # the working set must leave headroom for tables and control state
    sram_peak = trace.peak_working_set()
    if sram_peak >= cfg.sram_bytes:
        violations.append(f"sram peak {sram_peak} B exceeds capacity "
                          f"{cfg.sram_bytes} B")
    # weights plus one input and one 16-channel activation set per slice
    gb_need = slice_bytes * 18 if macs else 0
    if gb_need > cfg.global_buffer_bytes:
        violations.append(f"global buffer needs {gb_need} B for a slice, "
                          f"capacity {cfg.global_buffer_bytes} B")
    for f, cap in ((f1, cfg.fifo1_bytes), (f2, cfg.fifo2_bytes)):
        if f is not None and f.peak > cap and not f.flagged:
            violations.append(f"{f.name} peak {f.peak} B exceeds capacity "
                              f"{cap} B")

    dram_total = sum(dram_bytes.values())
    sram_traffic = _pred_sram_bytes(trace, cfg)
    if f1 is not None:
        sram_traffic += 2 * (f1.through + f2.through)
    energy = (dram_total * cfg.energy_dram_byte
              + sram_traffic * cfg.energy_sram_byte
              + macs * cfg.energy_mac)

    busiest = max((e["busy"] for e in engines.values()), default=0)
    return SimReport(
        mode=mode,
        phase=phase,
        dims=trace.dims,
        total_cycles=total,
        engines=engines,
        bubble_cycles=total - busiest,
        fifo1_peak_bytes=f1.peak if f1 else 0,
        fifo2_peak_bytes=f2.peak if f2 else 0,
        fifo1_bytes_through=f1.through if f1 else 0,
        fifo2_bytes_through=f2.through if f2 else 0,
        sram_peak_bytes=sram_peak,
        dram_bytes=dram_bytes,
        dram_total=dram_total,
        macs_total=macs,
        symbols_total=syms,
        energy_units=energy,
        capacity_violations=violations,
        warnings=warnings,
    )


def _run_flare(trace: ExecTrace, cfg: CoreConfig, payload: int,
               violations: list):
    """Pipelined replay; returns (total_cycles, engines, fifo1, fifo2)."""
    compress = trace.phase == "compress"
    nx, ny, _ = trace.dims
    slice_bytes = nx * ny * 4

    dram = _Dram(cfg.dram_bytes_per_cycle)
    fifo1 = _Fifo("fifo1", cfg.fifo1_bytes, violations)
    fifo2 = _Fifo("fifo2", cfg.fifo2_bytes, violations)
    pred = _Lanes(cfg.M)
    neural = _Lanes(1)
    codec = _Lanes(1)

    shares = deque(_payload_shares(trace, payload))
    pred_gate = 0       # prediction stalls here when FIFO2 pushes block
    pred_frontier = 0   # completion time of every pass seen so far
    code_parcel_at = deque()   # decompress: push times of code parcels
    slice_inbox = deque()      # (availability, bytes) per emitted slice

    for ev in trace.events:
        if isinstance(ev, PredictBatch):
            lane = pred.pick()
            dur = cfg.systolic_fill + ev.point_count * cfg.cycles_per_interp_point
            base = max(pred.free[lane], pred_gate)
            if compress:
                ready = dram.read(ev.point_count * 4, base)
            else:
                if not code_parcel_at:
                    raise InternalInvariantError(
                        "prediction ran ahead of the codec's code parcels")
                ready = max(base, code_parcel_at.popleft())
            start = max(base, ready)
            end = start + dur
            done = end
            if compress:
                done = fifo1.push(end, ev.point_count)  # 1 B/symbol staged
            else:
                fifo1.consume(end)
            pred.run(lane, start, dur, done)
            pred_frontier = max(pred_frontier, done)
        elif isinstance(ev, CodecSymbols):
            dur = _codec_cycles(ev.count, cfg, trace.phase)
            share = shares.popleft()
            if compress:
                # symbols staged by the pass that just completed
                start = max(codec.free[0], pred_frontier)
                end = start + dur
                fifo1.consume(end)
                done = dram.write(share, end)
            else:
                ready = dram.read(share, codec.free[0])
                start = max(codec.free[0], ready)
                end = start + dur
                done = fifo1.push(end, ev.count)
                code_parcel_at.append(done)
            codec.run(0, start, dur, done)
        elif isinstance(ev, EmitSliceBatch):
            per = ev.byte_count // max(ev.z_count, 1)
            for _ in range(ev.z_count):
                slice_inbox.append((pred_frontier, per))
        elif isinstance(ev, NeuralSlice):
            if not slice_inbox:
                raise InternalInvariantError(
                    "neural engine ran ahead of emitted slices")
            avail, nbytes = slice_inbox.popleft()
            pushed = fifo2.push(avail, nbytes)
            pred_gate = max(pred_gate, pushed)
            dur = _neural_cycles(ev.mac_count, cfg)
            start = max(neural.free[0], pushed)
            end = start + dur
            done = end if compress else dram.write(nbytes, end)
            fifo2.consume(done)
            neural.run(0, start, dur, done)
        elif isinstance(ev, (BlockFlush, Warn)):
            continue
        else:
            raise DataFormatError(f"unknown trace event {ev!r}")

    total = max(pred.makespan(), neural.makespan(), codec.makespan())
    engines = {"prediction": pred.report(), "neural": neural.report(),
               "codec": codec.report()}
    return total, engines, fifo1, fifo2


def _run_baseline(trace: ExecTrace, cfg: CoreConfig, payload: int,
                  dram_bytes: dict):
    """Serialized stages; each spans max(compute, its DRAM traffic time)."""
    compress = trace.phase == "compress"
    pred_jobs = [cfg.systolic_fill + e.point_count * cfg.cycles_per_interp_point
                 for e in trace.events if isinstance(e, PredictBatch)]
    codec_jobs = [_codec_cycles(e.count, cfg, trace.phase)
                  for e in trace.events if isinstance(e, CodecSymbols)]
    neural_jobs = [_neural_cycles(e.mac_count, cfg)
                   for e in trace.events if isinstance(e, NeuralSlice)]

    pred = _Lanes(cfg.M)
    for dur in pred_jobs:
        lane = pred.pick()
        pred.run(lane, pred.free[lane], dur, pred.free[lane] + dur)

    def dram_time(stage):
        return _ceil_div(dram_bytes[stage], cfg.dram_bytes_per_cycle) \
            if dram_bytes[stage] else 0

    spans = {
        "prediction": max(pred.makespan(), dram_time("prediction")),
        "normalization": dram_time("normalization"),
        "neural": max(sum(neural_jobs), dram_time("neural")),
        "codec": max(sum(codec_jobs), dram_time("codec")),
    }
    order = (("prediction", "normalization", "neural", "codec") if compress
             else ("codec", "prediction", "normalization", "neural"))
    total = sum(spans[s] for s in order)

    engines = {
        "prediction": pred.report(),
        "neural": {"busy": sum(neural_jobs), "stall": 0,
                   "work": sum(neural_jobs)},
        "codec": {"busy": sum(codec_jobs), "stall": 0,
                  "work": sum(codec_jobs)},
    }
    return total, engines


def speedup(baseline: SimReport, flare: SimReport) -> float:
    if flare.total_cycles == 0:
        return 1.0
    return baseline.total_cycles / flare.total_cycles


def movement_ratio(baseline: SimReport, flare: SimReport) -> float:
    if flare.dram_total == 0:
        return float("inf") if baseline.dram_total else 1.0
    return baseline.dram_total / flare.dram_total


def movement_breakdown(baseline: SimReport,
                       flare: SimReport) -> MovementBreakdown:
    """Per-stage share of the DRAM bytes saved by pipelined execution."""
    if baseline.phase != flare.phase or baseline.dims != flare.dims:
        raise DataFormatError("breakdown requires reports of the same run")
    savings = {s: baseline.dram_bytes[s] - flare.dram_bytes[s]
               for s in STAGES}
    total = sum(savings.values())
    if total <= 0:
        return MovementBreakdown(shares={s: 0.0 for s in STAGES},
                                 savings_bytes=savings, zero_savings=True)
    shares = {s: 100.0 * savings[s] / total for s in STAGES}
    return MovementBreakdown(shares=shares, savings_bytes=savings,
                             zero_savings=False)


def sweep_M(dims, cfg: CoreConfig, m_range, block_size: int = 32,
            order: str = "lookahead", epochs: int = 6) -> list[dict]:
    """Flare cycles per M for one volume, both phases."""
    m_range = list(m_range)
    if not m_range:
        raise DataFormatError("sweep needs at least one M value")
    comp = synthesize_trace(tuple(dims), block_size, order, "compress",
                            epochs=epochs)
    decomp = synthesize_trace(tuple(dims), block_size, order, "decompress")
    rows = []
    for m in m_range:
        cfgm = dataclasses.replace(cfg, M=m)
        rc = simulate(comp, cfgm, mode="flare")
        rd = simulate(decomp, cfgm, mode="flare")
        rows.append({
            "M": m,
            "compress_cycles": rc.total_cycles,
            "decompress_cycles": rd.total_cycles,
            "compress_pred_busy": rc.engines["prediction"]["busy"],
            "decompress_pred_busy": rd.engines["prediction"]["busy"],
        })
    return rows


def sweep_N(workloads, cfg: CoreConfig, n_range, block_size: int = 32,
            order: str = "lookahead", epochs: int = 6) -> list[dict]:
    """Longest-processing-time-first makespan per core count."""
    n_range = list(n_range)
    if not n_range:
        raise DataFormatError("sweep needs at least one N value")
    cycles = []
    for dims in workloads:
        tr = synthesize_trace(tuple(dims), block_size, order, "compress",
                              epochs=epochs)
        cycles.append(simulate(tr, cfg, mode="flare").total_cycles)
    order_desc = sorted(range(len(cycles)), key=lambda i: (-cycles[i], i))
    rows = []
    for n in n_range:
        if n < 1:
            raise DataFormatError("core count must be >= 1")
        loads = [0] * n
        assignment = [0] * len(cycles)
        for i in order_desc:
            core = min(range(n), key=lambda k: (loads[k], k))
            assignment[i] = core
            loads[core] += cycles[i]
        rows.append({
            "N": n,
            "makespan_cycles": max(loads),
            "workload_cycles": list(cycles),
            "assignment": assignment,
        })
    return rows
