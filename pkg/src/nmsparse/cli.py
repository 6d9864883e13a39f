"""Command-line interface.

    nmsparse bench sweep --kind conv --sparsity 1:8 1:16 --isa-ext on \
        --cores 8 --c-list 32 64 --seed 7 --format csv
    nmsparse bench net --layers resnet_blocks.json --format md
    nmsparse fmt pack --dense w.npy --m 8 --layout replicated --out w.nmsw
    nmsparse fmt unpack --in w.nmsw --out w_dense.npy
    nmsparse fmt footprint --in w.nmsw

`bench` commands are fully seeded; identical invocations produce
byte-identical reports. Any invariant violation exits non-zero.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import (
    SPARSITIES, SweepConfig, emit_report, run_network, sweep_single_layer,
)
from .formats import (
    DenseWeights, Layout, SparsityPattern, compress_nm, decompress_nm,
    footprint_coo, footprint_csr, footprint_nm, interleave_offsets_fc,
    load_weights, replicate_offsets, save_weights,
)
from .geometry import LayerGeometry

_LAYOUTS = {"plain": Layout.PLAIN, "replicated": Layout.REPLICATED,
            "interleaved": Layout.INTERLEAVED}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmsparse", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run seeded kernel benchmarks")
    bsub = bench.add_subparsers(dest="bench_command", required=True)

    sweep = bsub.add_parser("sweep", help="single-layer kernel sweep")
    sweep.add_argument("--kind", choices=["conv", "fc", "all"], default="all")
    sweep.add_argument("--sparsity", nargs="+", choices=list(SPARSITIES),
                       default=list(SPARSITIES))
    sweep.add_argument("--isa-ext", choices=["on", "off", "both"], default="both")
    sweep.add_argument("--cores", type=int, default=8)
    sweep.add_argument("--c-list", type=int, nargs="+",
                       help="input channel/feature counts (defaults per kind)")
    sweep.add_argument("--k", type=int, default=256)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--repetitions", type=int, default=1)
    sweep.add_argument("--l1-budget", type=int, default=128 * 1024)
    sweep.add_argument("--format", choices=["csv", "json", "md"], default="csv")
    sweep.add_argument("--out", default="-", help="output file, - for stdout")
    sweep.add_argument("--trace", metavar="PATH",
                       help="dump the first run's full instruction trace")

    net = bsub.add_parser("net", help="run a layer-sequence file")
    net.add_argument("--layers", required=True, help="JSON layer list")
    net.add_argument("--cores", type=int, default=8)
    net.add_argument("--seed", type=int, default=0)
    net.add_argument("--l1-budget", type=int, default=128 * 1024)
    net.add_argument("--format", choices=["csv", "json", "md"], default="md")
    net.add_argument("--out", default="-")

    fmt = sub.add_parser("fmt", help="weight-file operations")
    fsub = fmt.add_subparsers(dest="fmt_command", required=True)

    pack = fsub.add_parser("pack", help="compress a dense .npy into a weight file")
    pack.add_argument("--dense", required=True, help="int8 .npy, (K, FX*FY*C) or (K, FY, FX, C)")
    pack.add_argument("--m", type=int, required=True, choices=[4, 8, 16])
    pack.add_argument("--layout", choices=list(_LAYOUTS), default="plain")
    pack.add_argument("--fx", type=int, default=1)
    pack.add_argument("--fy", type=int, default=1)
    pack.add_argument("--c", type=int, help="input channels (2-D input only)")
    pack.add_argument("--out", required=True)

    unpack = fsub.add_parser("unpack", help="decompress a weight file to .npy")
    unpack.add_argument("--in", dest="infile", required=True)
    unpack.add_argument("--out", required=True)

    foot = fsub.add_parser("footprint", help="storage report for a weight file")
    foot.add_argument("--in", dest="infile", required=True)
    return parser


def _write_out(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _cmd_sweep(args) -> int:
    kinds = ("conv", "fc") if args.kind == "all" else (args.kind,)
    sparsities = tuple(s for s in SPARSITIES if s in set(args.sparsity) or s == "dense")
    cfg = SweepConfig(kinds=kinds, sparsities=sparsities, isa_ext=args.isa_ext,
                      n_cores=args.cores, k=args.k, seed=args.seed,
                      repetitions=args.repetitions, l1_budget=args.l1_budget)
    if args.c_list:
        cfg = SweepConfig(**{**cfg.__dict__, "conv_c": tuple(args.c_list),
                             "fc_c": tuple(args.c_list)})
    trace_out = open(args.trace, "w") if args.trace else None
    try:
        result = sweep_single_layer(cfg, trace_out=trace_out)
    finally:
        if trace_out:
            trace_out.close()
    _write_out(emit_report(result, args.format), args.out)
    return 0


def _cmd_net(args) -> int:
    result = run_network(args.layers, n_cores=args.cores, seed=args.seed,
                         l1_budget=args.l1_budget)
    _write_out(emit_report(result, args.format), args.out)
    return 0


def _load_dense(path: str, fx: int, fy: int, c: int | None) -> DenseWeights:
    arr = np.load(path)
    if arr.dtype != np.int8:
        raise ValueError("weights .npy must be int8")
    if arr.ndim == 4:
        k, fy, fx, c = arr.shape
        arr = arr.reshape(k, fy * fx * c)
    elif arr.ndim == 2:
        k = arr.shape[0]
        c = c if c is not None else arr.shape[1] // (fx * fy)
    else:
        raise ValueError("expected a 2-D or 4-D weight array")
    geom = LayerGeometry.from_weight_shape(k, fx, fy, c)
    if geom.reduction_dim != arr.shape[1]:
        raise ValueError(f"FX*FY*C = {geom.reduction_dim} != row length {arr.shape[1]}")
    return DenseWeights(geom, arr)


def _cmd_pack(args) -> int:
    dense = _load_dense(args.dense, args.fx, args.fy, args.c)
    sparse = compress_nm(dense, SparsityPattern(1, args.m))
    layout = _LAYOUTS[args.layout]
    if layout == Layout.REPLICATED:
        sparse = replicate_offsets(sparse)
    elif layout == Layout.INTERLEAVED:
        sparse = interleave_offsets_fc(sparse)
    save_weights(sparse, args.out)
    g = sparse.geometry
    print(f"packed K={g.k} FX={g.fx} FY={g.fy} C={g.c} pattern={sparse.pattern.name} "
          f"layout={args.layout} -> {args.out}")
    return 0


def _cmd_unpack(args) -> int:
    from .formats import deinterleave_offsets_fc

    sparse = load_weights(args.infile)
    if sparse.layout == Layout.INTERLEAVED:
        sparse = deinterleave_offsets_fc(sparse)
    elif sparse.layout == Layout.REPLICATED:
        fields = sparse.offset_fields().reshape(-1, 2)[:, 0]
        from .formats import NmSparseWeights, pack_offset_fields
        sparse = NmSparseWeights(sparse.pattern, sparse.geometry, sparse.values,
                                 pack_offset_fields(fields, sparse.pattern.offset_bits),
                                 Layout.PLAIN)
    np.save(args.out, decompress_nm(sparse).data)
    print(f"unpacked -> {args.out}")
    return 0


def _cmd_footprint(args) -> int:
    sparse = load_weights(args.infile)
    g = sparse.geometry
    pat = sparse.pattern
    rep = footprint_nm(g, pat, sparse.layout)
    sparsity = 1.0 - pat.n / pat.m
    coo = footprint_coo(g, sparsity)
    csr = footprint_csr(g, sparsity)
    print(f"K={g.k} FX={g.fx} FY={g.fy} C={g.c} pattern={pat.name} "
          f"layout={Layout(sparse.layout).name.lower()}")
    print(f"dense bits        {rep.dense_bits}")
    for name, r in (("n:m", rep), ("coo", coo), ("csr", csr)):
        print(f"{name:4s} total bits   {r.total_bits}  (values {r.values_bits}, "
              f"indices {r.index_bits})  reduction {r.reduction:.4%}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "bench":
            return _cmd_sweep(args) if args.bench_command == "sweep" else _cmd_net(args)
        if args.fmt_command == "pack":
            return _cmd_pack(args)
        if args.fmt_command == "unpack":
            return _cmd_unpack(args)
        return _cmd_footprint(args)
    except Exception as exc:  # surface invariant violations as non-zero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
