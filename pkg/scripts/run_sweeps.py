#!/usr/bin/env python3
"""Reproduce the scaling study on synthesized traces.

Writes four artifacts under --out (default results/):
  working_set.csv    on-chip peak bytes, block order vs look-ahead order
  movement.json      per-stage DRAM bytes and savings shares, 256^3 compress
  sweep_m.csv        pipelined cycles vs codec lane count M
  sweep_n.csv        multi-volume makespan vs core count N

Everything here replays synthesized traces, so it runs in seconds and needs
no input data; real streams produce the same geometry (the trace depends
only on dims, block size, order, and epochs).
"""

import argparse
import csv
import json
import pathlib

from flarezip.simcore import (CoreConfig, movement_breakdown, movement_ratio,
                              simulate, speedup, sweep_M, sweep_N)
from flarezip.trace import synthesize_trace

GRIDS = [(256, 256, 256), (128, 192, 192), (50, 250, 250)]
WORKLOADS = [(256, 256, 256), (256, 256, 256),
             (128, 192, 192), (50, 250, 250)]


def working_set_rows(cfg):
    rows = []
    for dims in GRIDS:
        peaks = {}
        for order in ("bfs", "lookahead"):
            tr = synthesize_trace(dims, 32, order, "compress")
            peaks[order] = simulate(tr, cfg, mode="flare").sram_peak_bytes
        rows.append({"dims": "x".join(map(str, dims)),
                     "bfs_peak_bytes": peaks["bfs"],
                     "lookahead_peak_bytes": peaks["lookahead"],
                     "ratio": round(peaks["bfs"] / peaks["lookahead"], 4)})
    return rows


def movement_summary(cfg):
    out = {}
    for phase in ("compress", "decompress"):
        tr = synthesize_trace((256, 256, 256), 32, "lookahead", phase,
                              epochs=6)
        base = simulate(tr, cfg, mode="baseline")
        flare = simulate(tr, cfg, mode="flare")
        out[phase] = {
            "baseline_dram_bytes": base.dram_bytes,
            "flare_dram_bytes": flare.dram_bytes,
            "movement_ratio": movement_ratio(base, flare),
            "speedup": speedup(base, flare),
            "savings_shares_pct": movement_breakdown(base, flare).shares,
        }
    return out


def write_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: "|".join(map(str, v)) if isinstance(v, list)
                        else v for k, v in r.items()})
    print(f"wrote {path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=pathlib.Path,
                    default=pathlib.Path("results"))
    ap.add_argument("--epochs", type=int, default=6)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    cfg = CoreConfig()

    write_csv(args.out / "working_set.csv", working_set_rows(cfg))

    mv = movement_summary(cfg)
    (args.out / "movement.json").write_text(json.dumps(mv, indent=2) + "\n")
    print(f"wrote {args.out / 'movement.json'} "
          f"(compress ratio {mv['compress']['movement_ratio']:.1f}x)")

    write_csv(args.out / "sweep_m.csv",
              sweep_M((256, 256, 256), cfg, range(1, 9), epochs=args.epochs))
    write_csv(args.out / "sweep_n.csv",
              sweep_N(WORKLOADS, cfg, range(1, 9), epochs=args.epochs))


if __name__ == "__main__":
    main()
