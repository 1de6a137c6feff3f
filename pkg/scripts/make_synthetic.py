#!/usr/bin/env python3
"""Generate seeded synthetic volumes as raw float32 files.

Each field is written as a headerless little-endian .f32 file (z fastest)
next to a .json sidecar recording dims, kind, and seed, so the files can be
fed straight back to the command line tool:

    python3 scripts/make_synthetic.py --out data
    flarezip compress data/turbulence_64x64x64_s3.f32 --dims 64,64,64 \
        --eb 1e-3 --out out.flrz
"""

import argparse
import json
import pathlib

from flarezip.synth import synthetic_volume
from flarezip.volume import store_volume

DEFAULT_SPECS = [
    ("sinusoid", (64, 64, 64), 1),
    ("sinusoid", (64, 64, 64), 2),
    ("turbulence", (64, 64, 64), 3),
    ("turbulence", (64, 64, 64), 4),
    ("turbulence", (128, 128, 128), 77),
    ("constant", (64, 64, 64), 0),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data"))
    ap.add_argument("--kind", choices=("sinusoid", "turbulence", "constant"))
    ap.add_argument("--dims", type=lambda s: tuple(int(d) for d in s.split(",")))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.kind:
        specs = [(args.kind, args.dims or (64, 64, 64), args.seed)]
    else:
        specs = DEFAULT_SPECS

    args.out.mkdir(parents=True, exist_ok=True)
    for kind, dims, seed in specs:
        v = synthetic_volume(kind, dims, seed=seed)
        stem = f"{kind}_{dims[0]}x{dims[1]}x{dims[2]}_s{seed}"
        raw = args.out / f"{stem}.f32"
        store_volume(v, raw)
        meta = {"kind": kind, "dims": list(dims), "seed": seed,
                "value_range": [float(x) for x in v.value_range]}
        (args.out / f"{stem}.json").write_text(
            json.dumps(meta, indent=2) + "\n")
        print(f"wrote {raw} ({raw.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
