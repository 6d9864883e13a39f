"""int8 fully-connected kernels as emulator trace generators.

FC layers offer no weight reuse across positions, so there is no im2col:
the kernels gather straight from the input vector. Parallelization splits
the output-channel dimension. Steady-state inner windows:

  dense       5 instr / 8 MACs    two channels deep, one activation word
  sparse SW   16 (17 for M=4) / 4 one channel, same unpack+gather as conv
  sparse ISA  13 / 8              two channels via interleaved offsets;
                                  eight decimate loads alternate the two
                                  activation registers from one buffer

The ISA kernel requires the interleaved offsets layout and an even channel
count (pad odd K with a zero channel upstream).
"""

from __future__ import annotations

import numpy as np

from ..emulator import (
    CoreState, OP_ADDI, OP_LB, OP_LW, OP_SDOTP4, OP_XDEC4, OP_XDEC8,
    OP_XDEC16, OP_XDECCLR, run_trace,
)
from ..formats import (
    DenseWeights, Layout, NmSparseWeights, kernel_offsets_image,
    kernel_offsets_run_bytes, kernel_values_image, padded_blocks,
)
from ..geometry import FC, LayerGeometry
from .common import (
    Body, CostReport, Emit, MemImage, QuantParams, R_ACC, R_ACT0, R_ACT1,
    R_BUF0, R_IDX, R_OFF0, R_W0, R_W1, R_ZERO, collect_window,
    emit_acc_init, emit_decimate_clear, emit_requant_store, parallelize,
)
from .conv import _emit_offset_unpack

_XDEC_OP = {4: OP_XDEC4, 8: OP_XDEC8, 16: OP_XDEC16}


def _check_fc_input(inp: np.ndarray, geom: LayerGeometry) -> None:
    if geom.kind != FC:
        raise ValueError("fc kernel on a non-fc geometry")
    if inp.dtype != np.int8 or inp.shape != (geom.c,):
        raise ValueError(f"input must be int8 of shape ({geom.c},)")


class _FcMem:
    def __init__(self, geom, inp, in_len: int, weight_rows: bytes,
                 offsets: bytes, bias: np.ndarray):
        padded = np.zeros(in_len, dtype=np.int8)
        padded[: geom.c] = inp
        img = MemImage()
        self.in_base = img.add(padded.tobytes())
        self.w_base = img.add(weight_rows)
        self.off_base = img.add(offsets) if offsets else 0
        self.bias_base = img.add(bias.astype("<i4").tobytes())
        self.out_base = img.reserve(geom.k)
        self.proto = img.build()


def _run_fc(kernel: str, geom: LayerGeometry, mem: _FcMem, emit_core,
            k_granule: int, macs_eff: int, equiv_scale: int, n_cores: int,
            m: int | None, trace_out=None):
    splits = parallelize(geom, n_cores, k_granule=k_granule)
    out = np.zeros(geom.k, dtype=np.int8)
    per_core = []
    clears = 0
    window = (0, 0)
    for core, (k0, k1) in enumerate(splits):
        em = Emit()
        if k1 > k0:
            emit_core(em, k0, k1)
        state = CoreState(mem=bytearray(mem.proto), core_id=core)
        delta = run_trace(state, em.items, trace_out if core == 0 else None)
        per_core.append(delta)
        clears += state.opcode_counts[OP_XDECCLR]
        w = collect_window(em.items)
        window = w if w != (0, 0) else window
        if k1 > k0:
            blob = state.mem[mem.out_base + k0: mem.out_base + k1]
            out[k0:k1] = np.frombuffer(bytes(blob), np.int8)
    report = CostReport(
        kernel=kernel, n_cores=n_cores, per_core_instructions=tuple(per_core),
        macs_effective=macs_eff, macs_dense_equiv=macs_eff * equiv_scale,
        window_instructions=window[0], window_macs=window[1], m=m,
        xdec_clears=clears,
    )
    return out, report


def fc_dense(inp: np.ndarray, weights: DenseWeights, quant: QuantParams,
             n_cores: int = 1, trace_out=None):
    """Dense baseline, unrolled by two over the output channels: one
    activation word feeds two weight rows per inner iteration."""
    geom = weights.geometry
    _check_fc_input(inp, geom)
    row = -(-geom.c // 4) * 4
    wrows = np.zeros((geom.k, row), dtype=np.int8)
    wrows[:, : geom.c] = weights.data
    mem = _FcMem(geom, inp, row, wrows.tobytes(), b"", quant.bias_vector(geom.k))
    shift = quant.shift
    words = row // 4

    def core_prog(em: Emit, k0: int, k1: int):
        k = k0
        while k + 2 <= k1:
            emit_acc_init(em, [(R_ACC[0],), (R_ACC[1],)], mem.bias_base, [k, k + 1])
            b = Body()
            b.ins(OP_LW, R_ACT0, R_ZERO, imm=mem.in_base, stride=4)
            b.ins(OP_LW, R_W0, R_ZERO, imm=mem.w_base + k * row, stride=4)
            b.ins(OP_LW, R_W1, R_ZERO, imm=mem.w_base + (k + 1) * row, stride=4)
            b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
            b.ins(OP_SDOTP4, R_ACC[1], R_W1, R_ACT0)
            em.loop(b, words, tag="inner", macs=8)
            emit_requant_store(em, R_ACC[0], shift, mem.out_base + k)
            emit_requant_store(em, R_ACC[1], shift, mem.out_base + k + 1)
            k += 2
        if k < k1:
            emit_acc_init(em, [(R_ACC[0],)], mem.bias_base, [k])
            b = Body()
            b.ins(OP_LW, R_ACT0, R_ZERO, imm=mem.in_base, stride=4)
            b.ins(OP_LW, R_W0, R_ZERO, imm=mem.w_base + k * row, stride=4)
            b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
            em.loop(b, words, macs=4)
            emit_requant_store(em, R_ACC[0], shift, mem.out_base + k)

    macs = geom.k * row
    return _run_fc("fc_dense", geom, mem, core_prog, 2, macs, 1,
                   n_cores, None, trace_out)


def fc_sparse_sw(inp: np.ndarray, weights: NmSparseWeights, quant: QuantParams,
                 n_cores: int = 1, trace_out=None):
    """Software-only sparse FC (plain layout): single channel per inner
    iteration; unpack four offsets, gather four activation bytes."""
    geom = weights.geometry
    _check_fc_input(inp, geom)
    if weights.layout != Layout.PLAIN:
        raise ValueError("fc_sparse_sw consumes the plain layout")
    m = weights.pattern.m
    bg = padded_blocks(weights)
    run = kernel_offsets_run_bytes(weights)
    mem = _FcMem(geom, inp, bg * m, kernel_values_image(weights),
                 kernel_offsets_image(weights), quant.bias_vector(geom.k))
    shift = quant.shift
    win = 17 if m == 4 else 16

    def core_prog(em: Emit, k0: int, k1: int):
        for k in range(k0, k1):
            em.li(R_BUF0, mem.in_base)
            emit_acc_init(em, [(R_ACC[0],)], mem.bias_base, [k])
            b = Body()
            _emit_offset_unpack(b, mem.off_base + k * run, m, 0)
            for i in range(4):
                b.ins(OP_LB, R_ACT0, R_BUF0, R_IDX[i], imm=i)
            b.ins(OP_ADDI, R_BUF0, R_BUF0, imm=4 * m)
            b.ins(OP_LW, R_W0, R_ZERO, imm=mem.w_base + k * bg, stride=4)
            b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
            em.loop(b, bg // 4, tag="inner", macs=4)
            emit_requant_store(em, R_ACC[0], shift, mem.out_base + k)

    macs = geom.k * bg
    out, report = _run_fc("fc_sparse_sw", geom, mem, core_prog, 1, macs, m,
                          n_cores, m, trace_out)
    assert report.window_instructions in (0, win)
    return out, report


def fc_sparse_isa(inp: np.ndarray, weights: NmSparseWeights, quant: QuantParams,
                  n_cores: int = 1, trace_out=None):
    """Decimate-load sparse FC (interleaved layout): two output channels per
    iteration. The eight decimate calls alternate destination registers, so
    the interleaved field order hands each channel its own offsets while
    the counter walks one buffer's blocks."""
    geom = weights.geometry
    _check_fc_input(inp, geom)
    if weights.layout != Layout.INTERLEAVED:
        raise ValueError("fc_sparse_isa consumes the interleaved layout")
    if geom.k % 2:
        raise ValueError("fc_sparse_isa needs even K; pad with a zero channel")
    m = weights.pattern.m
    xdec = _XDEC_OP[m]
    bg = padded_blocks(weights)
    run = kernel_offsets_run_bytes(weights)
    mem = _FcMem(geom, inp, bg * m, kernel_values_image(weights),
                 kernel_offsets_image(weights), quant.bias_vector(geom.k))
    shift = quant.shift

    def one_iter(b: Body, off_addr: int, val0: int, val1: int, val_stride: int):
        b.ins(OP_LW, R_OFF0, R_ZERO, imm=off_addr, stride=4)
        b.ins(OP_LW, R_W0, R_ZERO, imm=val0, stride=val_stride)
        b.ins(OP_LW, R_W1, R_ZERO, imm=val1, stride=val_stride)
        for _ in range(4):
            b.ins(xdec, R_ACT0, R_BUF0, R_OFF0)
            b.ins(xdec, R_ACT1, R_BUF0, R_OFF0)
        b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
        b.ins(OP_SDOTP4, R_ACC[1], R_W1, R_ACT1)

    def core_prog(em: Emit, k0: int, k1: int):
        em.li(R_BUF0, mem.in_base)
        for k in range(k0, k1, 2):
            emit_acc_init(em, [(R_ACC[0],), (R_ACC[1],)], mem.bias_base, [k, k + 1])
            v0 = mem.w_base + k * bg
            v1 = mem.w_base + (k + 1) * bg
            off = mem.off_base + (k // 2) * run
            b = Body()
            if m == 4:
                one_iter(b, off, v0, v1, 8)
                one_iter(b, off, v0 + 4, v1 + 4, 8)
                em.loop(b, bg // 8, tag="inner", macs=16, unroll=2)
            else:
                one_iter(b, off, v0, v1, 4)
                em.loop(b, bg // 4, tag="inner", macs=8)
            emit_decimate_clear(em)
            emit_requant_store(em, R_ACC[0], shift, mem.out_base + k)
            emit_requant_store(em, R_ACC[1], shift, mem.out_base + k + 1)

    macs = geom.k * bg
    out, report = _run_fc("fc_sparse_isa", geom, mem, core_prog, 2, macs, m,
                          n_cores, m, trace_out)
    assert report.window_instructions in (0, 13)
    return out, report
