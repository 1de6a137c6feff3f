"""Performance-model tests.

Oracles: closed-form pass-cycle sums from lattice arithmetic, a hand-computed
byte ledger for the movement breakdown, and LPT arithmetic for core sweeps.
"""

import json

import numpy as np
import pytest

from flarezip.errors import DataFormatError
from flarezip.simcore import (
    CoreConfig,
    SimReport,
    movement_breakdown,
    movement_ratio,
    simulate,
    speedup,
    sweep_M,
    sweep_N,
)
from flarezip.trace import (
    CodecSymbols,
    EmitSliceBatch,
    ExecTrace,
    NeuralSlice,
    PredictBatch,
    synthesize_trace,
)


def cfg_with(**kw):
    return CoreConfig(**kw)


# ---------------------------------------------------------------- oracles


def block_pass_counts(n):
    """Lattice points per (level, axis) pass inside one cubic n-block."""
    lmax = n.bit_length() - 1
    counts = {}
    for level in range(lmax, 0, -1):
        h, s = 1 << (level - 1), 1 << level

        def lat(stride):
            return len(range(0, n, stride))

        counts[(level, 0)] = len(range(h, n, s)) * lat(s) * lat(s)
        counts[(level, 1)] = lat(h) * len(range(h, n, s)) * lat(s)
        counts[(level, 2)] = lat(h) * lat(h) * len(range(h, n, s))
    return counts


def toy_trace(payload_bytes=57):
    """Hand-built two-slice trace with a fully known byte ledger."""
    nx, ny, nz = 10, 10, 2
    events = [
        PredictBatch(level=1, axis=0, block_id=0, point_count=100,
                     working_set_bytes=800),
        CodecSymbols(count=100),
        EmitSliceBatch(z_start=0, z_count=2, byte_count=2 * nx * ny * 4),
        NeuralSlice(slice_index=0, mac_count=100 * 4896),
        NeuralSlice(slice_index=1, mac_count=100 * 4896),
    ]
    return ExecTrace(phase="compress", order="bfs", dims=(nx, ny, nz),
                     block_size=8, epochs=0, payload_bytes=payload_bytes,
                     events=events)


# ------------------------------------------------------------------ config


def test_config_defaults_and_validation():
    cfg = CoreConfig()
    assert cfg.M == 4 and cfg.N == 1
    assert cfg.sram_bytes == 32 * 2**20
    assert cfg.fifo1_bytes == 8 * 2**20
    assert cfg.fifo2_bytes == 32 * 2**20
    assert cfg.pe_rows == 128 and cfg.pe_cols == 128
    assert cfg.global_buffer_bytes == 24 * 2**20
    assert cfg.systolic_fill == 4
    assert cfg.neural_utilization == 0.7
    assert cfg.codec_cycles_per_symbol_enc == 2
    assert cfg.codec_cycles_per_symbol_dec == 4
    assert cfg.dram_bytes_per_cycle == 64
    with pytest.raises(DataFormatError):
        cfg_with(M=0)
    with pytest.raises(DataFormatError):
        cfg_with(neural_utilization=0.0)
    with pytest.raises(DataFormatError):
        cfg_with(neural_utilization=1.5)
    with pytest.raises(DataFormatError):
        cfg_with(dram_bytes_per_cycle=-1)
    with pytest.raises(DataFormatError):
        cfg_with(fifo1_bytes=2**40)  # cannot exceed the SRAM budget


# ------------------------------------------------------------- basic runs


def test_empty_trace_all_zero():
    tr = ExecTrace(phase="compress", order="bfs", dims=(8, 8, 8),
                   block_size=8, epochs=0, payload_bytes=0, events=[])
    for mode in ("baseline", "flare"):
        rep = simulate(tr, CoreConfig(), mode=mode)
        assert rep.total_cycles == 0
        assert rep.dram_total == 0
        assert rep.energy_units == 0.0
        assert rep.fifo1_peak_bytes == 0 and rep.fifo2_peak_bytes == 0
        assert all(e["busy"] == 0 for e in rep.engines.values())


def test_single_block_prediction_cycles_closed_form():
    # oracle: sum over levels/axes of lattice point counts, plus the
    # systolic fill cost of every non-empty pass
    tr = synthesize_trace((32, 32, 32), 32, "bfs", "compress")
    cfg = cfg_with(M=1)
    rep = simulate(tr, cfg, mode="flare")
    counts = block_pass_counts(32)
    nonempty = [c for c in counts.values() if c > 0]
    want = sum(nonempty) + cfg.systolic_fill * len(nonempty)
    assert sum(counts.values()) == 32**3 - 1  # everything but the anchor
    assert rep.engines["prediction"]["busy"] == want
    assert rep.engines["prediction"]["work"] == want


def test_mode_and_phase_validation():
    tr = synthesize_trace((8, 8, 8), 8, "bfs", "compress")
    with pytest.raises(DataFormatError):
        simulate(tr, CoreConfig(), mode="turbo")
    with pytest.raises(DataFormatError):
        simulate(tr, CoreConfig(), mode="flare", phase="decompress")


def test_deterministic_reports():
    tr = synthesize_trace((24, 24, 24), 8, "lookahead", "compress", epochs=2)
    a = simulate(tr, CoreConfig(), mode="flare")
    b = simulate(tr, CoreConfig(), mode="flare")
    assert json.dumps(a.to_dict(), sort_keys=True) == \
        json.dumps(b.to_dict(), sort_keys=True)


# ------------------------------------------------------------ byte ledger


def test_compress_ledger_flare_vs_baseline():
    dims = (32, 32, 32)
    tr = synthesize_trace(dims, 8, "lookahead", "compress", epochs=1,
                          payload_bytes=5000)
    v = 32**3 * 4
    base = simulate(tr, CoreConfig(), mode="baseline")
    flare = simulate(tr, CoreConfig(), mode="flare")
    p4 = sum(e.point_count for e in tr.events if isinstance(e, PredictBatch)) * 4
    assert base.dram_bytes["prediction"] == p4 + v + p4
    assert base.dram_bytes["normalization"] == 5 * v
    assert base.dram_bytes["neural"] == v
    assert base.dram_bytes["codec"] == p4 + 5000
    assert flare.dram_bytes["prediction"] == p4
    assert flare.dram_bytes["normalization"] == 0
    assert flare.dram_bytes["neural"] == 0
    assert flare.dram_bytes["codec"] == 5000
    # conservation: every staged byte flows through exactly once
    assert flare.fifo1_bytes_through == p4 // 4
    assert flare.fifo2_bytes_through == v
    assert base.fifo1_bytes_through == 0


def test_decompress_ledger():
    dims = (16, 16, 16)
    tr = synthesize_trace(dims, 8, "bfs", "decompress", payload_bytes=900)
    v = 16**3 * 4
    p4 = sum(e.point_count for e in tr.events if isinstance(e, PredictBatch)) * 4
    base = simulate(tr, CoreConfig(), mode="baseline")
    flare = simulate(tr, CoreConfig(), mode="flare")
    assert base.dram_bytes["codec"] == 900 + p4
    assert base.dram_bytes["prediction"] == p4 + v
    assert base.dram_bytes["normalization"] == 5 * v
    assert base.dram_bytes["neural"] == 2 * v
    assert flare.dram_bytes["codec"] == 900
    assert flare.dram_bytes["prediction"] == 0
    assert flare.dram_bytes["neural"] == v
    assert flare.dram_total == 900 + v


def test_payload_fallback_one_byte_per_symbol():
    tr = synthesize_trace((16, 16, 16), 8, "bfs", "compress")
    assert tr.payload_bytes == 0
    rep = simulate(tr, CoreConfig(), mode="flare")
    syms = tr.total_symbols()
    assert rep.dram_bytes["codec"] == syms  # 1 byte/symbol estimate


def test_movement_breakdown_hand_ledger():
    tr = toy_trace(payload_bytes=57)
    base = simulate(tr, CoreConfig(), mode="baseline")
    flare = simulate(tr, CoreConfig(), mode="flare")
    # hand ledger: V=800, P4=C4=400, b=57
    assert base.dram_total == 1600 + 4000 + 800 + 457
    assert flare.dram_total == 400 + 57
    bd = movement_breakdown(base, flare)
    assert not bd.zero_savings
    assert bd.shares["normalization"] == pytest.approx(100 * 4000 / 6400)
    assert bd.shares["prediction"] == pytest.approx(100 * 1200 / 6400)
    assert bd.shares["neural"] == pytest.approx(100 * 800 / 6400)
    assert bd.shares["codec"] == pytest.approx(100 * 400 / 6400)
    assert sum(bd.shares.values()) == pytest.approx(100.0)


def test_movement_breakdown_zero_savings():
    tr = toy_trace()
    rep = simulate(tr, CoreConfig(), mode="flare")
    bd = movement_breakdown(rep, rep)
    assert bd.zero_savings
    assert all(s == 0.0 for s in bd.shares.values())


def test_movement_ratio_and_speedup():
    tr = synthesize_trace((32, 32, 32), 16, "lookahead", "compress", epochs=1)
    base = simulate(tr, CoreConfig(), mode="baseline")
    flare = simulate(tr, CoreConfig(), mode="flare")
    assert movement_ratio(base, flare) == base.dram_total / flare.dram_total
    assert movement_ratio(base, flare) > 5.0
    assert speedup(base, flare) == base.total_cycles / flare.total_cycles
    assert speedup(base, flare) >= 1.0


# ----------------------------------------------------- pipeline invariants


@pytest.mark.parametrize("phase", ["compress", "decompress"])
@pytest.mark.parametrize("order", ["bfs", "lookahead"])
def test_flare_never_slower_than_baseline(phase, order):
    for dims in [(16, 16, 16), (32, 24, 20), (40, 40, 24)]:
        tr = synthesize_trace(dims, 8, order, phase, epochs=2)
        base = simulate(tr, CoreConfig(), mode="baseline")
        flare = simulate(tr, CoreConfig(), mode="flare")
        assert flare.total_cycles <= base.total_cycles


def test_fifo_peaks_within_capacity():
    tr = synthesize_trace((48, 48, 48), 16, "lookahead", "compress", epochs=1)
    cfg = CoreConfig()
    rep = simulate(tr, cfg, mode="flare")
    assert 0 < rep.fifo1_peak_bytes <= cfg.fifo1_bytes
    assert 0 < rep.fifo2_peak_bytes <= cfg.fifo2_bytes
    assert rep.capacity_violations == []


def test_busy_plus_stall_bounded_by_total():
    for phase in ("compress", "decompress"):
        tr = synthesize_trace((32, 32, 32), 8, "lookahead", phase, epochs=1)
        for mode in ("baseline", "flare"):
            rep = simulate(tr, CoreConfig(), mode=mode)
            for name, e in rep.engines.items():
                assert e["busy"] + e["stall"] <= rep.total_cycles, (mode, name)
            assert rep.bubble_cycles >= 0


def test_sram_violation_flagged_not_clipped():
    tr = synthesize_trace((64, 64, 64), 32, "bfs", "compress")
    cfg = cfg_with(sram_bytes=2**20, fifo1_bytes=2**18, fifo2_bytes=2**18)
    rep = simulate(tr, cfg, mode="flare")
    assert rep.sram_peak_bytes == 64**3 * 4  # true peak, not clipped
    assert any("sram" in v for v in rep.capacity_violations)


def test_tiny_fifo_flags_violation_and_completes():
    tr = synthesize_trace((32, 32, 32), 32, "bfs", "compress")
    cfg = cfg_with(fifo1_bytes=64, fifo2_bytes=256)
    rep = simulate(tr, cfg, mode="flare")
    assert rep.total_cycles > 0  # no deadlock
    assert any("fifo" in v for v in rep.capacity_violations)


def test_dram_bandwidth_monotonicity():
    tr = synthesize_trace((32, 32, 32), 8, "lookahead", "compress", epochs=1)
    prev = None
    for bw in (16, 32, 64, 128, 256):
        rep = simulate(tr, cfg_with(dram_bytes_per_cycle=bw), mode="flare")
        if prev is not None:
            assert rep.total_cycles <= prev
        prev = rep.total_cycles


def test_fifo_capacity_monotonicity():
    tr = synthesize_trace((32, 32, 32), 8, "lookahead", "compress", epochs=1)
    prev = None
    for f1 in (2**12, 2**14, 2**16, 2**20):
        rep = simulate(tr, cfg_with(fifo1_bytes=f1), mode="flare")
        if prev is not None:
            assert rep.total_cycles <= prev
        prev = rep.total_cycles


def test_working_set_ratio_reported_via_traces():
    base_tr = synthesize_trace((64, 64, 64), 32, "bfs", "compress")
    look_tr = synthesize_trace((64, 64, 64), 32, "lookahead", "compress")
    cfg = CoreConfig()
    br = simulate(base_tr, cfg, mode="flare")
    lr = simulate(look_tr, cfg, mode="flare")
    assert br.sram_peak_bytes == 64**3 * 4
    ratio = br.sram_peak_bytes / lr.sram_peak_bytes
    assert ratio == pytest.approx(128 / 37, rel=1e-6)


def test_energy_flare_below_baseline():
    tr = synthesize_trace((32, 32, 32), 8, "lookahead", "compress", epochs=1)
    base = simulate(tr, CoreConfig(), mode="baseline")
    flare = simulate(tr, CoreConfig(), mode="flare")
    assert 0 < flare.energy_units < base.energy_units
    assert flare.macs_total == base.macs_total > 0


# ----------------------------------------------------------------- sweeps


def test_prediction_work_halves_m1_to_m2():
    rows = sweep_M((64, 64, 64), CoreConfig(), [1, 2], block_size=32,
                   epochs=0)
    busy1 = rows[0]["compress_pred_busy"]
    busy2 = rows[1]["compress_pred_busy"]
    assert abs(busy2 - busy1 / 2) <= 0.05 * (busy1 / 2)


def test_decompress_cycles_strictly_decrease_through_m4():
    rows = sweep_M((64, 64, 64), CoreConfig(), [1, 2, 3, 4], block_size=32,
                   epochs=6)
    dec = [r["decompress_cycles"] for r in rows]
    assert all(b < a for a, b in zip(dec, dec[1:]))


def test_compress_cycles_plateau_beyond_m4():
    rows = sweep_M((64, 64, 64), CoreConfig(), [4, 5, 6, 7, 8],
                   block_size=32, epochs=6)
    c4 = rows[0]["compress_cycles"]
    for r in rows[1:]:
        assert abs(r["compress_cycles"] - c4) / c4 < 0.02


def test_sweep_n_makespan_rules():
    cfg = CoreConfig()
    # four equal workloads: makespan halves exactly from N=1 to N=2
    equal = [(24, 24, 24)] * 4
    rows = sweep_N(equal, cfg, [1, 2, 4, 8], block_size=8, epochs=1)
    by_n = {r["N"]: r["makespan_cycles"] for r in rows}
    assert by_n[2] * 2 == by_n[1]
    # N >= #workloads: makespan equals the largest single workload
    assert by_n[4] == by_n[8] == max(rows[0]["workload_cycles"]) > 0
    # monotone non-increasing in N
    ms = [r["makespan_cycles"] for r in rows]
    assert all(b <= a for a, b in zip(ms, ms[1:]))


def test_sweep_n_bottleneck_pair():
    cfg = CoreConfig()
    # two large plus two small: with 3 or 4 cores the large pair dominates
    mix = [(32, 32, 32), (32, 32, 32), (16, 24, 24), (10, 25, 25)]
    rows = sweep_N(mix, cfg, [1, 2, 3, 4], block_size=8, epochs=1)
    by_n = {r["N"]: r["makespan_cycles"] for r in rows}
    assert by_n[3] == by_n[4]  # improvement bounded by the big pair
    assert by_n[4] == max(rows[0]["workload_cycles"])


# ------------------------------------------------------------------ report


def test_report_json_shape():
    tr = synthesize_trace((16, 16, 16), 8, "bfs", "compress", epochs=1)
    rep = simulate(tr, CoreConfig(), mode="flare")
    d = rep.to_dict()
    for key in ("mode", "phase", "total_cycles", "engines", "bubble_cycles",
                "fifo1_peak_bytes", "fifo2_peak_bytes", "sram_peak_bytes",
                "dram_bytes", "dram_total", "energy_units",
                "capacity_violations", "macs_total", "symbols_total"):
        assert key in d, key
    blob = json.dumps(d)
    assert json.loads(blob)["mode"] == "flare"
    assert set(d["dram_bytes"]) == {"prediction", "normalization",
                                    "neural", "codec"}
