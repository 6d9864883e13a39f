"""Benchmark harness: seeded random layers, kernel sweeps, network runs.

Random weight tensors place exactly one non-zero per M-sized block
(uniform position, value uniform in [-127, 127] excluding 0); pruning
quality is irrelevant to the cost model, so any conforming tensor is
valid. Every run is fully determined by (seed, spec): reports are
byte-identical across repeated invocations.

Costs are reported as instruction counts and labeled "instr"; the
emulator does not model memory stalls, so these are not cycles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .formats import (
    DenseWeights, Layout, NmSparseWeights, SparsityPattern, compress_nm,
    footprint_nm, interleave_offsets_fc, pattern_from_name, replicate_offsets,
)
from .geometry import CONV, FC, LayerGeometry
from .kernels import (
    QuantParams, conv_dense_1x2, conv_dense_4x2, conv_sparse_isa,
    conv_sparse_sw, fc_dense, fc_sparse_isa, fc_sparse_sw, peak_dense_equiv,
    peak_effective,
)
from .tiler import InfeasibleTilingError, plan_tiles

SPARSITIES = ("dense", "1:4", "1:8", "1:16")

# kernel name -> (kind, needs_isa, layout for sparse input)
KERNELS = {
    "conv_dense_4x2": (CONV, False, None),
    "conv_dense_1x2": (CONV, False, None),
    "conv_sparse_sw": (CONV, False, Layout.PLAIN),
    "conv_sparse_isa": (CONV, True, Layout.REPLICATED),
    "fc_dense": (FC, False, None),
    "fc_sparse_sw": (FC, False, Layout.PLAIN),
    "fc_sparse_isa": (FC, True, Layout.INTERLEAVED),
}

_KERNEL_FN = {
    "conv_dense_4x2": conv_dense_4x2,
    "conv_dense_1x2": conv_dense_1x2,
    "conv_sparse_sw": conv_sparse_sw,
    "conv_sparse_isa": conv_sparse_isa,
    "fc_dense": fc_dense,
    "fc_sparse_sw": fc_sparse_sw,
    "fc_sparse_isa": fc_sparse_isa,
}

_BASELINE = {CONV: "conv_dense_1x2", FC: "fc_dense"}
_BASELINE2 = {CONV: "conv_dense_4x2"}


class ReproducibilityError(RuntimeError):
    """A repeated seeded run produced a different result."""


# ---------------------------------------------------------------------------
# random layer generation
# ---------------------------------------------------------------------------

def random_input(geometry: LayerGeometry, rng) -> np.ndarray:
    if geometry.kind == CONV:
        shape = (geometry.iy, geometry.ix, geometry.c)
    else:
        shape = (geometry.c,)
    return rng.integers(-128, 128, size=shape, dtype=np.int16).astype(np.int8)


def random_dense(geometry: LayerGeometry, rng) -> DenseWeights:
    data = rng.integers(-127, 128, size=(geometry.k, geometry.reduction_dim),
                        dtype=np.int16).astype(np.int8)
    return DenseWeights(geometry, data)


def random_conforming_dense(geometry: LayerGeometry, pattern: SparsityPattern,
                            rng) -> DenseWeights:
    """One non-zero per block: uniform position, non-zero magnitude."""
    b = pattern.blocks(geometry.reduction_dim)
    k = geometry.k
    data = np.zeros((k, b * pattern.m), dtype=np.int8)
    pos = rng.integers(0, pattern.m, size=(k, b))
    mag = rng.integers(1, 128, size=(k, b), dtype=np.int16)
    sign = rng.choice(np.array([-1, 1], dtype=np.int16), size=(k, b))
    cols = np.arange(b) * pattern.m + pos
    np.put_along_axis(data, cols, (mag * sign).astype(np.int8), axis=1)
    # non-zeros that landed in the zero-pad tail are dropped with their block
    return DenseWeights(geometry, data[:, : geometry.reduction_dim].copy())


def default_quant(geometry: LayerGeometry, rng) -> QuantParams:
    """Shift keeping typical outputs inside int8; small random bias."""
    acc_bits = max(geometry.reduction_dim, 1).bit_length() + 14  # |w|,|x| < 2^7
    shift = min(31, max(0, acc_bits - 8))
    bias = rng.integers(-(1 << 10), 1 << 10, size=geometry.k, dtype=np.int32)
    return QuantParams(shift=shift, bias=bias)


def prepare_weights(kernel: str, geometry: LayerGeometry, sparsity: str, rng):
    """Dense tensor or compressed tensor in the layout the kernel consumes."""
    kind, _, layout = KERNELS[kernel]
    if sparsity == "dense":
        if layout is not None:
            raise ValueError(f"{kernel} needs a sparsity level")
        return random_dense(geometry, rng)
    pattern = pattern_from_name(sparsity)
    dense = random_conforming_dense(geometry, pattern, rng)
    sparse = compress_nm(dense, pattern)
    if layout == Layout.REPLICATED:
        return replicate_offsets(sparse)
    if layout == Layout.INTERLEAVED:
        return interleave_offsets_fc(sparse)
    return sparse


def weight_storage_bytes(geometry: LayerGeometry, sparsity: str,
                         layout: Layout | None) -> int:
    if sparsity == "dense":
        return geometry.k * geometry.reduction_dim
    rep = footprint_nm(geometry, pattern_from_name(sparsity),
                       layout if layout is not None else Layout.PLAIN)
    return -(-rep.total_bits // 8)


# ---------------------------------------------------------------------------
# single bench runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchSpec:
    kernel: str
    geometry: LayerGeometry
    sparsity: str = "dense"
    n_cores: int = 8
    seed: int = 0
    repetitions: int = 1
    l1_budget: int = 128 * 1024


_FLOAT_FIELDS = ("macs_per_instr", "macs_equiv_per_instr", "peak_effective",
                 "peak_dense_equiv", "speedup_vs_dense_1x2", "speedup_vs_dense_4x2")

REPORT_FIELDS = (
    "kind", "kernel", "sparsity", "c", "k", "ix", "iy", "fx", "fy", "p", "s",
    "cores", "seed", "status", "reason", "instructions", "macs_effective",
    "macs_dense_equiv", "macs_per_instr", "macs_equiv_per_instr",
    "window_instr", "window_macs", "peak_effective", "peak_dense_equiv",
    "weight_bytes", "tile_k", "tile_oy", "tile_ox", "l1_bytes",
    "baseline", "baseline_instructions", "speedup_vs_dense_1x2",
    "baseline2", "baseline2_instructions", "speedup_vs_dense_4x2",
)

_INT_FIELDS = {
    "c", "k", "ix", "iy", "fx", "fy", "p", "s", "cores", "seed",
    "instructions", "macs_effective", "macs_dense_equiv", "window_instr",
    "window_macs", "weight_bytes", "tile_k", "tile_oy", "tile_ox", "l1_bytes",
    "baseline_instructions", "baseline2_instructions",
}


def _layer_rng(seed: int, *tags: int):
    return np.random.default_rng([seed, *tags])


_KIND_TAG = {CONV: 0, FC: 1}
_SPARSITY_TAG = {"dense": 0, "1:4": 4, "1:8": 8, "1:16": 16}


def run_bench(spec: BenchSpec, trace_out=None) -> dict:
    """Run one kernel on one seeded random layer and build a report row.

    Inputs depend only on (seed, kind, geometry) so every kernel in a sweep
    sees the same activations; weights depend additionally on the sparsity.
    """
    geom = spec.geometry
    kind, _, layout = KERNELS[spec.kernel]
    if kind != geom.kind:
        raise ValueError(f"{spec.kernel} cannot run a {geom.kind} layer")
    in_rng = _layer_rng(spec.seed, _KIND_TAG[kind], geom.c, geom.k, 0)
    w_rng = _layer_rng(spec.seed, _KIND_TAG[kind], geom.c, geom.k,
                       1 + _SPARSITY_TAG[spec.sparsity])
    inp = random_input(geom, in_rng)
    quant = default_quant(geom, in_rng)
    weights = prepare_weights(spec.kernel, geom, spec.sparsity, w_rng)
    m = None if spec.sparsity == "dense" else pattern_from_name(spec.sparsity).m

    row = {f: "" for f in REPORT_FIELDS}
    row.update(kind=kind, kernel=spec.kernel, sparsity=spec.sparsity,
               c=geom.c, k=geom.k, ix=geom.ix, iy=geom.iy, fx=geom.fx,
               fy=geom.fy, p=geom.p, s=geom.s, cores=spec.n_cores,
               seed=spec.seed, status="ok", reason="")
    row["weight_bytes"] = weight_storage_bytes(geom, spec.sparsity, layout)
    try:
        pattern = None if m is None else pattern_from_name(spec.sparsity)
        plan = plan_tiles(geom, pattern, layout or Layout.PLAIN,
                          l1_budget=spec.l1_budget, n_cores=spec.n_cores)
        row.update(tile_k=plan.tile_k, tile_oy=plan.tile_oy,
                   tile_ox=plan.tile_ox, l1_bytes=plan.l1_bytes_used)
    except InfeasibleTilingError as exc:
        row.update(status="skipped", reason=str(exc))
        return row

    fn = _KERNEL_FN[spec.kernel]
    out, report = fn(inp, weights, quant, n_cores=spec.n_cores, trace_out=trace_out)
    for _ in range(spec.repetitions - 1):
        out2, report2 = fn(inp, weights, quant, n_cores=spec.n_cores)
        if not np.array_equal(out, out2) or report2 != report:
            raise ReproducibilityError(f"{spec.kernel} repetition diverged")
    row.update(
        instructions=report.instructions,
        macs_effective=report.macs_effective,
        macs_dense_equiv=report.macs_dense_equiv,
        macs_per_instr=round(report.macs_per_instruction, 6),
        macs_equiv_per_instr=round(report.macs_equiv_per_instruction, 6),
        window_instr=report.window_instructions,
        window_macs=report.window_macs,
        peak_effective=peak_effective(spec.kernel, m),
        peak_dense_equiv=peak_dense_equiv(spec.kernel, m),
    )
    return row


# ---------------------------------------------------------------------------
# single-layer sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    kinds: tuple = (CONV, FC)
    sparsities: tuple = SPARSITIES
    isa_ext: str = "both"            # on | off | both
    n_cores: int = 8
    conv_c: tuple = (32, 64, 128, 256)
    fc_c: tuple = (256, 512, 1024, 2048)
    k: int = 256
    conv_spatial: int = 8            # IX = IY = OX = OY
    fx: int = 3
    fy: int = 3
    p: int = 1
    s: int = 1
    seed: int = 0
    repetitions: int = 1
    l1_budget: int = 128 * 1024


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)


def _sweep_kernels(kind: str, sparsity: str, isa_ext: str) -> list:
    if sparsity == "dense":
        return ["conv_dense_4x2", "conv_dense_1x2"] if kind == CONV else ["fc_dense"]
    names = []
    if isa_ext in ("off", "both"):
        names.append("conv_sparse_sw" if kind == CONV else "fc_sparse_sw")
    if isa_ext in ("on", "both"):
        names.append("conv_sparse_isa" if kind == CONV else "fc_sparse_isa")
    return names


def sweep_geometry(cfg: SweepConfig, kind: str, c: int) -> LayerGeometry:
    if kind == CONV:
        return LayerGeometry.conv(cfg.conv_spatial, cfg.conv_spatial, c, cfg.k,
                                  cfg.fx, cfg.fy, p=cfg.p, s=cfg.s)
    return LayerGeometry.fc(c, cfg.k)


def sweep_single_layer(cfg: SweepConfig = SweepConfig(), trace_out=None) -> SweepResult:
    """Run the kernel sweep over the configured input-channel list.

    Dense baselines always run (speedups are relative to them); sparse
    rows carry `speedup = baseline instructions / kernel instructions`.
    """
    result = SweepResult()
    for kind in cfg.kinds:
        c_list = cfg.conv_c if kind == CONV else cfg.fc_c
        for c in c_list:
            geom = sweep_geometry(cfg, kind, c)
            base_rows = {}
            rows_here = []
            for sparsity in cfg.sparsities:
                for kernel in _sweep_kernels(kind, sparsity, cfg.isa_ext):
                    spec = BenchSpec(kernel, geom, sparsity, cfg.n_cores,
                                     cfg.seed, cfg.repetitions, cfg.l1_budget)
                    row = run_bench(spec, trace_out=trace_out)
                    trace_out = None  # only the first run is traced
                    if sparsity == "dense":
                        base_rows[kernel] = row
                    rows_here.append(row)
            b1 = base_rows.get(_BASELINE[kind])
            b2 = base_rows.get(_BASELINE2.get(kind))
            for row in rows_here:
                for base, bkey, skey in (
                        (b1, "baseline", "speedup_vs_dense_1x2"),
                        (b2, "baseline2", "speedup_vs_dense_4x2")):
                    if base is None or base["status"] != "ok" or row["status"] != "ok":
                        continue
                    row[bkey] = base["kernel"]
                    row[bkey + "_instructions"] = base["instructions"]
                    row[skey] = round(base["instructions"] / row["instructions"], 6)
            result.rows.extend(rows_here)
    return result


# ---------------------------------------------------------------------------
# network runs
# ---------------------------------------------------------------------------

def _layer_geometry(entry: dict) -> LayerGeometry:
    if entry["kind"] == CONV:
        return LayerGeometry.conv(entry["ix"], entry["iy"], entry["c"], entry["k"],
                                  entry["fx"], entry["fy"],
                                  p=entry.get("p", 0), s=entry.get("s", 1))
    return LayerGeometry.fc(entry["c"], entry["k"])


def _layer_kernel(entry: dict) -> str:
    if "kernel" in entry:
        return entry["kernel"]
    kind = entry["kind"]
    sparsity = entry.get("sparsity", "dense")
    isa = entry.get("isa", False)
    if sparsity == "dense":
        return "conv_dense_4x2" if kind == CONV else "fc_dense"
    if kind == CONV:
        return "conv_sparse_isa" if isa else "conv_sparse_sw"
    return "fc_sparse_isa" if isa else "fc_sparse_sw"


def _check_chain(prev: LayerGeometry | None, geom: LayerGeometry, name: str) -> None:
    if prev is None:
        return
    if geom.kind == CONV:
        ok = prev.kind == CONV and (geom.ix, geom.iy, geom.c) == (prev.ox, prev.oy, prev.k)
    elif prev.kind == CONV:
        ok = geom.c == prev.ox * prev.oy * prev.k
    else:
        ok = geom.c == prev.k
    if not ok:
        raise ValueError(f"layer {name!r} input shape does not match the previous output")


def run_network(layers, n_cores: int = 8, seed: int = 0, l1_budget: int = 128 * 1024) -> dict:
    """Run a layer sequence end to end, chaining real activations.

    `layers` is a list of dicts (or a JSON file path): kind, geometry
    fields, sparsity, isa flag, optional explicit kernel and name.
    Returns per-layer rows plus aggregate instruction and memory totals.
    """
    if isinstance(layers, (str, bytes)):
        with open(layers) as fh:
            layers = json.load(fh)
    rows = []
    totals = {"instructions": 0, "macs_effective": 0, "macs_dense_equiv": 0,
              "weight_bytes_stored": 0, "weight_bytes_dense": 0}
    prev = None
    act = None
    for idx, entry in enumerate(layers):
        name = entry.get("name", f"layer{idx}")
        geom = _layer_geometry(entry)
        _check_chain(prev, geom, name)
        kernel = _layer_kernel(entry)
        kind, _, layout = KERNELS[kernel]
        sparsity = entry.get("sparsity", "dense")
        rng = _layer_rng(seed, 100 + idx)
        if act is None:
            act = random_input(geom, rng)
        elif geom.kind == FC and act.ndim > 1:
            act = act.reshape(-1)
        quant = default_quant(geom, rng)

        pad_k = geom.k % 2 if kernel == "fc_sparse_isa" else 0
        run_geom = LayerGeometry.fc(geom.c, geom.k + pad_k) if pad_k else geom
        if sparsity == "dense":
            weights = random_dense(run_geom, rng)
        else:
            pattern = pattern_from_name(sparsity)
            dense = random_conforming_dense(run_geom, pattern, rng)
            if pad_k:
                data = dense.data.copy()
                data[-1] = 0
                dense = DenseWeights(run_geom, data)
            sparse = compress_nm(dense, pattern)
            if layout == Layout.REPLICATED:
                weights = replicate_offsets(sparse)
            elif layout == Layout.INTERLEAVED:
                weights = interleave_offsets_fc(sparse)
            else:
                weights = sparse
        if pad_k:
            quant = QuantParams(quant.shift,
                                np.concatenate([quant.bias_vector(geom.k),
                                                np.zeros(1, np.int32)]))

        out, report = _KERNEL_FN[kernel](act, weights, quant, n_cores=n_cores)
        if pad_k:
            out = out[: geom.k]
        stored = weight_storage_bytes(run_geom, sparsity, layout)
        dense_bytes = run_geom.k * run_geom.reduction_dim
        row = {
            "name": name, "kind": kind, "kernel": kernel, "sparsity": sparsity,
            "c": geom.c, "k": geom.k, "instructions": report.instructions,
            "macs_effective": report.macs_effective,
            "macs_dense_equiv": report.macs_dense_equiv,
            "macs_equiv_per_instr": round(report.macs_equiv_per_instruction, 6),
            "weight_bytes_stored": stored, "weight_bytes_dense": dense_bytes,
        }
        rows.append(row)
        totals["instructions"] += report.instructions
        totals["macs_effective"] += report.macs_effective
        totals["macs_dense_equiv"] += report.macs_dense_equiv
        totals["weight_bytes_stored"] += stored
        totals["weight_bytes_dense"] += dense_bytes
        prev = geom
        act = out
    return {"layers": rows, "totals": totals}


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def _cell(value) -> str:
    return "" if value == "" else str(value)


def emit_report(result, fmt: str = "csv") -> str:
    """Serialize sweep rows (or a network result) losslessly.

    CSV columns follow REPORT_FIELDS; json carries the same dicts; md is a
    table with the identical cell text as csv.
    """
    if isinstance(result, SweepResult):
        rows, fields = result.rows, list(REPORT_FIELDS)
    elif isinstance(result, dict) and "layers" in result:
        rows = result["layers"]
        fields = list(rows[0].keys()) if rows else []
        if fmt == "json":
            return json.dumps(result, indent=1, sort_keys=True) + "\n"
    else:
        raise TypeError("emit_report expects a SweepResult or network result")
    if fmt == "json":
        return json.dumps(rows, indent=1, sort_keys=True) + "\n"
    if fmt == "csv":
        lines = [",".join(fields)]
        lines += [",".join(_cell(r[f]) for f in fields) for r in rows]
        return "\n".join(lines) + "\n"
    if fmt == "md":
        lines = ["| " + " | ".join(fields) + " |",
                 "| " + " | ".join("---" for _ in fields) + " |"]
        lines += ["| " + " | ".join(_cell(r[f]) for f in fields) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def parse_csv_report(text: str) -> list:
    """Typed inverse of the csv emitter (used to verify lossless mapping)."""
    lines = [ln for ln in text.splitlines() if ln]
    fields = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        row = {}
        for f, cell in zip(fields, ln.split(",")):
            if cell == "":
                row[f] = ""
            elif f in _INT_FIELDS:
                row[f] = int(cell)
            elif f in _FLOAT_FIELDS:
                row[f] = float(cell)
            else:
                row[f] = cell
        rows.append(row)
    return rows
