"""Command-line front end: compress, decompress, verify, simulate, sweep.

Raw volumes are headerless little-endian float32 files; dimensions always
travel on the command line (--dims NX,NY,NZ). Every command that writes an
output also writes two sidecars: <out>.metrics.json (machine-readable
report, overridable with --json) and <out>.manifest.json (enough arguments
to byte-reproduce the run). PSNR of a perfect reconstruction serializes as
JSON Infinity.

Exit codes: 0 success, 1 verification failure, 2 I/O or format error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (
    DataFormatError,
    InternalInvariantError,
    VerificationFailure,
)
from .neural import DEFAULT_LR
from .pipeline import ORDERS, compress, decompress
from .simcore import (
    CoreConfig,
    movement_breakdown,
    movement_ratio,
    simulate,
    speedup,
    sweep_M,
    sweep_N,
)
from .trace import read_trace, write_trace
from .volume import load_volume, psnr, store_volume

try:
    from importlib.metadata import version as _pkg_version
    VERSION = _pkg_version("flarezip")
except Exception:
    VERSION = "unknown"

SWEEP_M_COLUMNS = ["M", "compress_cycles", "decompress_cycles",
                   "compress_pred_busy", "decompress_pred_busy"]
SWEEP_N_COLUMNS = ["N", "makespan_cycles", "workload_cycles", "assignment"]


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"dims must be NX,NY,NZ, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must be integers: {text!r}")
    if any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"dims must be positive: {text!r}")
    return dims


def _parse_span(text: str) -> list[int]:
    """A:B inclusive integer span, or a single integer."""
    lo, _, hi = text.partition(":")
    try:
        a = int(lo)
        b = int(hi) if hi else a
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must be A:B, got {text!r}")
    if a < 1 or b < a:
        raise argparse.ArgumentTypeError(f"range {text!r} is empty or negative")
    return list(range(a, b + 1))


def load_core_config(path: str | None) -> CoreConfig:
    """Flat key=value file (# comments) over CoreConfig defaults."""
    if path is None:
        return CoreConfig()
    overrides = {}
    fields = {f.name: f.type for f in dataclasses.fields(CoreConfig)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or key not in fields:
            raise DataFormatError(f"{path}:{lineno}: unknown setting {line!r}")
        caster = float if fields[key] == "float" else int
        try:
            overrides[key] = caster(value)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: bad value {value!r}")
    return dataclasses.replace(CoreConfig(), **overrides)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(ns: argparse.Namespace, outputs: dict) -> None:
    args = {k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(ns).items() if k != "func"}
    manifest = {
        "tool": "flarezip",
        "version": VERSION,
        "command": ns.command,
        "arguments": args,
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    _write_json(str(outputs["out"]) + ".manifest.json", manifest)


def _metrics_path(ns: argparse.Namespace) -> str:
    return ns.json if ns.json else str(ns.out) + ".metrics.json"


def cmd_compress(ns: argparse.Namespace) -> int:
    v = load_volume(ns.input, ns.dims)
    res = compress(v, ns.eb, block_size=ns.block, order=ns.order,
                   epochs=ns.epochs, seed=ns.seed, lr=ns.lr)
    Path(ns.out).write_bytes(res.blob)
    outputs = {"out": ns.out}
    if ns.trace:
        write_trace(ns.trace, res.trace)
        outputs["trace"] = ns.trace
    metrics = dict(res.metrics)
    metrics.update(input=str(ns.input), output=str(ns.out),
                   trace=str(ns.trace) if ns.trace else None, dims=list(ns.dims))
    _write_json(_metrics_path(ns), metrics)
    _write_manifest(ns, outputs)
    print(f"compressed {ns.input} {ns.dims} -> {ns.out}: "
          f"ratio {metrics['ratio']:.2f}, "
          f"predictor {metrics['psnr_predictor']:.2f} dB, "
          f"enhanced {metrics['psnr_enhanced']:.2f} dB, "
          f"{metrics['seconds']:.2f} s")
    return 0


def cmd_decompress(ns: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    blob = Path(ns.input).read_bytes()
    res = decompress(blob, order=ns.order)
    store_volume(res.volume, ns.out)
    outputs = {"out": ns.out}
    if ns.trace:
        write_trace(ns.trace, res.trace)
        outputs["trace"] = ns.trace
    enhanced = res.volume is not res.predictor_volume
    eb_abs = res.header.eb_rel * (res.header.value_range[1]
                                  - res.header.value_range[0])
    metrics = {
        "input": str(ns.input),
        "output": str(ns.out),
        "dims": list(res.header.dims),
        "eb_rel": res.header.eb_rel,
        "enhanced": enhanced,
        "max_err_bound": (2.0 if enhanced else 1.0) * eb_abs,
        "output_bytes": res.volume.nbytes,
        "trace": str(ns.trace) if ns.trace else None,
        "seconds": time.perf_counter() - t0,
    }
    _write_json(_metrics_path(ns), metrics)
    _write_manifest(ns, outputs)
    print(f"decompressed {ns.input} -> {ns.out}: dims {res.header.dims}, "
          f"bound {metrics['max_err_bound']:.3g}, {metrics['seconds']:.2f} s")
    return 0


def cmd_verify(ns: argparse.Namespace) -> int:
    ref = load_volume(ns.original, ns.dims)
    out = load_volume(ns.reconstructed, ns.dims)
    vmin, vmax = ref.value_range
    eb_abs = ns.eb * (vmax - vmin)
    bound = eb_abs if ns.policy == "predictor" else 2.0 * eb_abs
    err = float(np.max(np.abs(ref.data.astype(np.float64)
                              - out.data.astype(np.float64))))
    quality = psnr(ref, out)
    passed = err <= bound
    report = {
        "max_abs_err": err,
        "bound": bound,
        "policy": ns.policy,
        "eb_rel": ns.eb,
        "psnr": quality,
        "passed": passed,
    }
    if ns.json:
        _write_json(ns.json, report)
    status = "PASS" if passed else "FAIL"
    print(f"{status} max|err| {err:.6g} vs bound {bound:.6g} "
          f"({ns.policy} policy), psnr {quality:.2f} dB")
    if not passed:
        raise VerificationFailure(
            f"max|err| {err:.6g} exceeds {ns.policy} bound {bound:.6g}")
    return 0


def cmd_simulate(ns: argparse.Namespace) -> int:
    trace = read_trace(ns.trace)
    cfg = load_core_config(ns.config)
    if ns.mode == "both":
        base = simulate(trace, cfg, mode="baseline", phase=ns.phase)
        flare = simulate(trace, cfg, mode="flare", phase=ns.phase)
        report = {
            "baseline": base.to_dict(),
            "flare": flare.to_dict(),
            "speedup": speedup(base, flare),
            "movement_ratio": movement_ratio(base, flare),
            "movement_breakdown": movement_breakdown(base, flare).to_dict(),
        }
        print(f"{trace.phase} {trace.dims}: baseline {base.total_cycles} cyc "
              f"/ flare {flare.total_cycles} cyc, "
              f"speedup {report['speedup']:.2f}x, "
              f"dram {base.dram_total} -> {flare.dram_total} B "
              f"({report['movement_ratio']:.2f}x)")
        for rep in (base, flare):
            for violation in rep.capacity_violations:
                print(f"  {rep.mode}: {violation}")
    else:
        rep = simulate(trace, cfg, mode=ns.mode, phase=ns.phase)
        report = rep.to_dict()
        print(f"{trace.phase} {trace.dims} [{ns.mode}]: "
              f"{rep.total_cycles} cyc, dram {rep.dram_total} B, "
              f"energy {rep.energy_units:.3g}")
        for violation in rep.capacity_violations:
            print(f"  {violation}")
    if ns.json:
        _write_json(ns.json, report)
    return 0


def cmd_sweep(ns: argparse.Namespace) -> int:
    cfg = load_core_config(ns.config)
    if ns.kind == "M":
        if ns.dims is None:
            raise DataFormatError("sweep M needs --dims")
        rows = sweep_M(ns.dims, cfg, ns.range, block_size=ns.block,
                       order=ns.order, epochs=ns.epochs)
        columns = SWEEP_M_COLUMNS
    else:
        if not ns.workloads:
            raise DataFormatError("sweep N needs --workloads")
        workloads = [_parse_dims(w) for w in ns.workloads.split(";") if w]
        rows = sweep_N(workloads, cfg, ns.range, block_size=ns.block,
                       order=ns.order, epochs=ns.epochs)
        columns = SWEEP_N_COLUMNS
    with open(ns.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                ["|".join(str(x) for x in row[c])
                 if isinstance(row[c], list) else row[c] for c in columns])
    _write_manifest(ns, {"out": ns.out})
    print(f"sweep {ns.kind} over {ns.range[0]}..{ns.range[-1]}: "
          f"{len(rows)} rows -> {ns.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flarezip",
        description="Error-bounded lossy compressor for 3D float32 volumes "
                    "with a trace-driven accelerator performance model.")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("compress", help="compress a raw float32 volume")
    pc.add_argument("input")
    pc.add_argument("--dims", type=_parse_dims, required=True,
                    metavar="NX,NY,NZ")
    pc.add_argument("--eb", type=float, required=True,
                    help="relative error bound (fraction of value range)")
    pc.add_argument("--block", type=int, default=32)
    pc.add_argument("--order", choices=ORDERS, default="lookahead")
    pc.add_argument("--epochs", type=int, default=6,
                    help="enhancement training epochs; 0 disables the net")
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--lr", type=float, default=DEFAULT_LR)
    pc.add_argument("--out", required=True)
    pc.add_argument("--json", help="metrics path (default <out>.metrics.json)")
    pc.add_argument("--trace", help="also write the execution trace here")
    pc.set_defaults(func=cmd_compress)

    pd = sub.add_parser("decompress", help="reconstruct a compressed stream")
    pd.add_argument("input")
    pd.add_argument("--order", choices=ORDERS, default="lookahead")
    pd.add_argument("--out", required=True)
    pd.add_argument("--json")
    pd.add_argument("--trace")
    pd.set_defaults(func=cmd_decompress)

    pv = sub.add_parser("verify", help="check a reconstruction against its "
                                       "original and error bound")
    pv.add_argument("original")
    pv.add_argument("reconstructed")
    pv.add_argument("--dims", type=_parse_dims, required=True,
                    metavar="NX,NY,NZ")
    pv.add_argument("--eb", type=float, required=True)
    pv.add_argument("--policy", choices=("predictor", "enhanced"),
                    default="enhanced",
                    help="bound: eb_abs (predictor) or 2*eb_abs (enhanced)")
    pv.add_argument("--json")
    pv.set_defaults(func=cmd_verify)

    ps = sub.add_parser("simulate", help="replay a trace through the "
                                         "performance model")
    ps.add_argument("trace")
    ps.add_argument("--mode", choices=("baseline", "flare", "both"),
                    default="both")
    ps.add_argument("--phase", choices=("compress", "decompress"))
    ps.add_argument("--config", help="key=value CoreConfig overrides file")
    ps.add_argument("--json")
    ps.set_defaults(func=cmd_simulate)

    pw = sub.add_parser("sweep", help="M or N scaling sweep to CSV")
    pw.add_argument("kind", choices=("M", "N"))
    pw.add_argument("--dims", type=_parse_dims, metavar="NX,NY,NZ",
                    help="volume for the M sweep")
    pw.add_argument("--workloads",
                    help="semicolon-separated dims list for the N sweep")
    pw.add_argument("--range", type=_parse_span, default=list(range(1, 9)),
                    metavar="A:B")
    pw.add_argument("--block", type=int, default=32)
    pw.add_argument("--order", choices=ORDERS, default="lookahead")
    pw.add_argument("--epochs", type=int, default=6)
    pw.add_argument("--config")
    pw.add_argument("--out", required=True)
    pw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InternalInvariantError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
