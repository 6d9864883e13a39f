"""int8 convolution kernels as emulator trace generators.

All four kernels share the output-stationary dataflow: outer loop over
output positions taken two at a time (partial im2col into two gather
buffers), inner loop over output channels, innermost loop over the
flattened reduction dim. Steady-state inner-loop windows:

  dense 4x2   14 instr / 32 MACs   4 filters x 2 patches, 6 lw + 8 sdotp
  dense 1x2   10 instr / 16 MACs   1 filter x 2 patches, two words deep
  sparse SW   22 (23 for M=4) / 8  unpack 4 offsets, gather 8 bytes, 2 sdotp
  sparse ISA  12 / 8               8 decimate loads replace the 19-op fill

Sparse kernels consume the compressed format directly; weight values and
packed offsets are read from the per-channel padded images built by the
formats module, so no reduction-dim tail iterations exist. Addresses of
gathered activations are relative to the im2col buffer: block * M plus the
stored offset.
"""

from __future__ import annotations

import numpy as np

from ..emulator import (
    CoreState, OP_ADD, OP_ADDI, OP_ANDI, OP_LB, OP_LBU, OP_LW, OP_SDOTP4,
    OP_SRLI, OP_XDEC4, OP_XDEC8, OP_XDEC16, OP_XDECCLR, run_trace,
)
from ..formats import (
    DenseWeights, Layout, NmSparseWeights, kernel_offsets_image,
    kernel_offsets_run_bytes, kernel_values_image, padded_blocks,
)
from ..geometry import CONV, LayerGeometry
from .common import (
    Body, CostReport, Emit, MemImage, QuantParams, R_ACC, R_ACT0, R_ACT1,
    R_ACT2, R_ACT3, R_BUF0, R_BUF1, R_IDX, R_OFF0, R_OFF1, R_W0, R_W1,
    R_ZERO, collect_window, emit_acc_init, emit_decimate_clear,
    emit_requant_store, parallelize,
)
from .im2col import emit_im2col

_XDEC_OP = {4: OP_XDEC4, 8: OP_XDEC8, 16: OP_XDEC16}


def _check_conv_input(inp: np.ndarray, geom: LayerGeometry) -> None:
    if geom.kind != CONV:
        raise ValueError("conv kernel on a non-conv geometry")
    if inp.dtype != np.int8 or inp.shape != (geom.iy, geom.ix, geom.c):
        raise ValueError(f"input must be int8 HWC of shape {(geom.iy, geom.ix, geom.c)}")


def _pad_rows(data: np.ndarray, row_len: int) -> bytes:
    out = np.zeros((data.shape[0], row_len), dtype=np.int8)
    out[:, : data.shape[1]] = data
    return out.tobytes()


class _ConvMem:
    """Shared memory image plus the base addresses every core uses."""

    def __init__(self, geom, inp, weight_rows: bytes, row_bytes: int,
                 offsets: bytes, bias: np.ndarray, buf_len: int):
        img = MemImage()
        self.in_base = img.add(inp.tobytes())
        self.w_base = img.add(weight_rows)
        self.off_base = img.add(offsets) if offsets else 0
        self.bias_base = img.add(bias.astype("<i4").tobytes())
        self.buf0 = img.reserve(buf_len)
        self.buf1 = img.reserve(buf_len)
        self.out_base = img.reserve(geom.n_positions * geom.k)
        self.row_bytes = row_bytes
        self.buf_len = buf_len
        self.proto = img.build()


def _run_conv(kernel: str, geom: LayerGeometry, mem: _ConvMem, emit_channels,
              macs_eff: int, equiv_scale: int, n_cores: int, m: int | None,
              trace_out=None):
    """Drive one conv kernel: split positions, emit per-core programs,
    execute, gather outputs and the cost report."""
    splits = parallelize(geom, n_cores)
    out = np.zeros((geom.oy, geom.ox, geom.k), dtype=np.int8)
    flat = out.reshape(-1, geom.k) if geom.k else None
    per_core = []
    clears = 0
    window = (0, 0)
    for core, (p0, p1) in enumerate(splits):
        em = Emit()
        pos = [(i // geom.ox, i % geom.ox) for i in range(p0, p1)]
        i = 0
        while i < len(pos):
            pair = pos[i: i + 2]
            emit_im2col(em, geom, mem.in_base, mem.buf0, *pair[0])
            if len(pair) == 2:
                emit_im2col(em, geom, mem.in_base, mem.buf1, *pair[1])
            emit_channels(em, p0 + i, len(pair) == 2)
            i += 2
        state = CoreState(mem=bytearray(mem.proto), core_id=core)
        delta = run_trace(state, em.items, trace_out if core == 0 else None)
        per_core.append(delta)
        clears += state.opcode_counts[OP_XDECCLR]
        w = collect_window(em.items)
        window = w if w != (0, 0) else window
        if flat is not None and p1 > p0:
            blob = state.mem[mem.out_base + p0 * geom.k: mem.out_base + p1 * geom.k]
            flat[p0:p1] = np.frombuffer(bytes(blob), np.int8).reshape(-1, geom.k)
    report = CostReport(
        kernel=kernel, n_cores=n_cores, per_core_instructions=tuple(per_core),
        macs_effective=macs_eff, macs_dense_equiv=macs_eff * equiv_scale,
        window_instructions=window[0], window_macs=window[1], m=m,
        xdec_clears=clears,
    )
    return out, report


# ---------------------------------------------------------------------------
# dense kernels
# ---------------------------------------------------------------------------

def conv_dense_4x2(inp: np.ndarray, weights: DenseWeights, quant: QuantParams,
                   n_cores: int = 1, trace_out=None):
    """Dense baseline: 4 output channels x 2 patches per inner iteration.

    Channel remainders (K % 4) fall back to a single-filter variant.
    """
    geom = weights.geometry
    _check_conv_input(inp, geom)
    row = -(-geom.reduction_dim // 4) * 4
    mem = _ConvMem(geom, inp, _pad_rows(weights.data, row), row, b"",
                   quant.bias_vector(geom.k), row)
    words = row // 4
    shift = quant.shift

    def channels(em: Emit, pos_idx: int, paired: bool):
        out0 = mem.out_base + pos_idx * geom.k
        out1 = out0 + geom.k
        k = 0
        while k + 4 <= geom.k:
            if paired:
                emit_acc_init(em, [(R_ACC[2 * i], R_ACC[2 * i + 1]) for i in range(4)],
                              mem.bias_base, range(k, k + 4))
                b = Body()
                for i in range(4):
                    b.ins(OP_LW, R_W0 + i, R_ZERO, imm=mem.w_base + (k + i) * row, stride=4)
                b.ins(OP_LW, R_ACT0, R_ZERO, imm=mem.buf0, stride=4)
                b.ins(OP_LW, R_ACT1, R_ZERO, imm=mem.buf1, stride=4)
                for i in range(4):
                    b.ins(OP_SDOTP4, R_ACC[2 * i], R_W0 + i, R_ACT0)
                    b.ins(OP_SDOTP4, R_ACC[2 * i + 1], R_W0 + i, R_ACT1)
                em.loop(b, words, tag="inner", macs=32)
                for i in range(4):
                    emit_requant_store(em, R_ACC[2 * i], shift, out0 + k + i)
                    emit_requant_store(em, R_ACC[2 * i + 1], shift, out1 + k + i)
            else:
                emit_acc_init(em, [(R_ACC[i],) for i in range(4)], mem.bias_base,
                              range(k, k + 4))
                b = Body()
                for i in range(4):
                    b.ins(OP_LW, R_W0 + i, R_ZERO, imm=mem.w_base + (k + i) * row, stride=4)
                b.ins(OP_LW, R_ACT0, R_ZERO, imm=mem.buf0, stride=4)
                for i in range(4):
                    b.ins(OP_SDOTP4, R_ACC[i], R_W0 + i, R_ACT0)
                em.loop(b, words, macs=16)
                for i in range(4):
                    emit_requant_store(em, R_ACC[i], shift, out0 + k + i)
            k += 4
        while k < geom.k:
            # 1x2 fallback: one filter, both patches, one word per iteration
            accs = (R_ACC[0], R_ACC[1]) if paired else (R_ACC[0],)
            emit_acc_init(em, [accs], mem.bias_base, [k])
            b = Body()
            b.ins(OP_LW, R_W0, R_ZERO, imm=mem.w_base + k * row, stride=4)
            b.ins(OP_LW, R_ACT0, R_ZERO, imm=mem.buf0, stride=4)
            if paired:
                b.ins(OP_LW, R_ACT1, R_ZERO, imm=mem.buf1, stride=4)
            b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
            if paired:
                b.ins(OP_SDOTP4, R_ACC[1], R_W0, R_ACT1)
            em.loop(b, words, macs=8 if paired else 4)
            emit_requant_store(em, R_ACC[0], shift, out0 + k)
            if paired:
                emit_requant_store(em, R_ACC[1], shift, out1 + k)
            k += 1

    macs = geom.n_positions * geom.k * row
    return _run_conv("conv_dense_4x2", geom, mem, channels, macs, 1,
                     n_cores, None, trace_out)


def conv_dense_1x2(inp: np.ndarray, weights: DenseWeights, quant: QuantParams,
                   n_cores: int = 1, trace_out=None):
    """Dense variant with 1x2 unrolling: one filter, two patches, two SIMD
    words of the reduction dim per inner iteration."""
    geom = weights.geometry
    _check_conv_input(inp, geom)
    row = -(-geom.reduction_dim // 8) * 8
    mem = _ConvMem(geom, inp, _pad_rows(weights.data, row), row, b"",
                   quant.bias_vector(geom.k), row)
    shift = quant.shift

    def channels(em: Emit, pos_idx: int, paired: bool):
        out0 = mem.out_base + pos_idx * geom.k
        out1 = out0 + geom.k
        for k in range(geom.k):
            wrow = mem.w_base + k * row
            if paired:
                emit_acc_init(em, [(R_ACC[0], R_ACC[1])], mem.bias_base, [k])
                b = Body()
                b.ins(OP_LW, R_W0, R_ZERO, imm=wrow, stride=8)
                b.ins(OP_LW, R_W1, R_ZERO, imm=wrow + 4, stride=8)
                b.ins(OP_LW, R_ACT0, R_ZERO, imm=mem.buf0, stride=8)
                b.ins(OP_LW, R_ACT2, R_ZERO, imm=mem.buf0 + 4, stride=8)
                b.ins(OP_LW, R_ACT1, R_ZERO, imm=mem.buf1, stride=8)
                b.ins(OP_LW, R_ACT3, R_ZERO, imm=mem.buf1 + 4, stride=8)
                b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
                b.ins(OP_SDOTP4, R_ACC[0], R_W1, R_ACT2)
                b.ins(OP_SDOTP4, R_ACC[1], R_W0, R_ACT1)
                b.ins(OP_SDOTP4, R_ACC[1], R_W1, R_ACT3)
                em.loop(b, row // 8, tag="inner", macs=16)
                emit_requant_store(em, R_ACC[0], shift, out0 + k)
                emit_requant_store(em, R_ACC[1], shift, out1 + k)
            else:
                emit_acc_init(em, [(R_ACC[0],)], mem.bias_base, [k])
                b = Body()
                b.ins(OP_LW, R_W0, R_ZERO, imm=wrow, stride=8)
                b.ins(OP_LW, R_W1, R_ZERO, imm=wrow + 4, stride=8)
                b.ins(OP_LW, R_ACT0, R_ZERO, imm=mem.buf0, stride=8)
                b.ins(OP_LW, R_ACT2, R_ZERO, imm=mem.buf0 + 4, stride=8)
                b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
                b.ins(OP_SDOTP4, R_ACC[0], R_W1, R_ACT2)
                em.loop(b, row // 8, macs=8)
                emit_requant_store(em, R_ACC[0], shift, out0 + k)

    macs = geom.n_positions * geom.k * row
    return _run_conv("conv_dense_1x2", geom, mem, channels, macs, 1,
                     n_cores, None, trace_out)


# ---------------------------------------------------------------------------
# sparse kernels
# ---------------------------------------------------------------------------

def _emit_offset_unpack(b: Body, off_addr: int, m: int, block0: int):
    """Unpack 4 offset fields into gather-address registers R_IDX, folding
    in each block's base (i * M, on top of the running buffer pointer)."""
    if m == 4:
        # one byte holds all four 2-bit fields
        b.ins(OP_LBU, R_OFF0, R_ZERO, imm=off_addr, stride=1)
        b.ins(OP_ANDI, R_IDX[0], R_OFF0, imm=3)
        b.ins(OP_SRLI, R_IDX[1], R_OFF0, imm=2)
        b.ins(OP_ANDI, R_IDX[1], R_IDX[1], imm=3)
        b.ins(OP_SRLI, R_IDX[2], R_OFF0, imm=4)
        b.ins(OP_ANDI, R_IDX[2], R_IDX[2], imm=3)
        b.ins(OP_SRLI, R_IDX[3], R_OFF0, imm=6)
    else:
        # two bytes, two 4-bit fields each
        b.ins(OP_LBU, R_OFF0, R_ZERO, imm=off_addr, stride=2)
        b.ins(OP_LBU, R_OFF1, R_ZERO, imm=off_addr + 1, stride=2)
        b.ins(OP_ANDI, R_IDX[0], R_OFF0, imm=15)
        b.ins(OP_SRLI, R_IDX[1], R_OFF0, imm=4)
        b.ins(OP_ANDI, R_IDX[2], R_OFF1, imm=15)
        b.ins(OP_SRLI, R_IDX[3], R_OFF1, imm=4)
    for i in range(1, 4):
        b.ins(OP_ADDI, R_IDX[i], R_IDX[i], imm=(block0 + i) * m)


def conv_sparse_sw(inp: np.ndarray, weights: NmSparseWeights, quant: QuantParams,
                   n_cores: int = 1, trace_out=None):
    """Software-only sparse conv (plain layout): the inner loop unpacks the
    four next offsets with shift/mask ops and gathers one activation byte
    per non-zero weight from each patch buffer."""
    geom = weights.geometry
    _check_conv_input(inp, geom)
    if weights.layout != Layout.PLAIN:
        raise ValueError("conv_sparse_sw consumes the plain layout")
    m = weights.pattern.m
    bg = padded_blocks(weights)
    run = kernel_offsets_run_bytes(weights)
    mem = _ConvMem(geom, inp, kernel_values_image(weights), bg,
                   kernel_offsets_image(weights), quant.bias_vector(geom.k),
                   bg * m)
    shift = quant.shift
    win = 23 if m == 4 else 22

    def channels(em: Emit, pos_idx: int, paired: bool):
        out0 = mem.out_base + pos_idx * geom.k
        out1 = out0 + geom.k
        for k in range(geom.k):
            em.li(R_BUF0, mem.buf0)
            if paired:
                em.li(R_BUF1, mem.buf1)
                emit_acc_init(em, [(R_ACC[0], R_ACC[1])], mem.bias_base, [k])
            else:
                emit_acc_init(em, [(R_ACC[0],)], mem.bias_base, [k])
            b = Body()
            _emit_offset_unpack(b, mem.off_base + k * run, m, 0)
            for i in range(4):
                b.ins(OP_LB, R_ACT0, R_BUF0, R_IDX[i], imm=i)
            if paired:
                for i in range(4):
                    b.ins(OP_LB, R_ACT1, R_BUF1, R_IDX[i], imm=i)
            b.ins(OP_ADDI, R_BUF0, R_BUF0, imm=4 * m)
            if paired:
                b.ins(OP_ADDI, R_BUF1, R_BUF1, imm=4 * m)
            b.ins(OP_LW, R_W0, R_ZERO, imm=mem.w_base + k * bg, stride=4)
            b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
            if paired:
                b.ins(OP_SDOTP4, R_ACC[1], R_W0, R_ACT1)
            em.loop(b, bg // 4, tag="inner" if paired else None,
                    macs=8 if paired else 4)
            emit_requant_store(em, R_ACC[0], shift, out0 + k)
            if paired:
                emit_requant_store(em, R_ACC[1], shift, out1 + k)

    macs = geom.n_positions * geom.k * bg
    out, report = _run_conv("conv_sparse_sw", geom, mem, channels, macs, m,
                            n_cores, m, trace_out)
    assert report.window_instructions in (0, win)
    return out, report


def conv_sparse_isa(inp: np.ndarray, weights: NmSparseWeights, quant: QuantParams,
                    n_cores: int = 1, trace_out=None):
    """Decimate-load sparse conv (replicated layout): eight decimate calls
    fill both activation registers, the counter supplying block index,
    destination lane and field select. One counter clear per output
    channel."""
    geom = weights.geometry
    _check_conv_input(inp, geom)
    if weights.layout != Layout.REPLICATED:
        raise ValueError("conv_sparse_isa consumes the replicated layout")
    m = weights.pattern.m
    xdec = _XDEC_OP[m]
    bg = padded_blocks(weights)
    run = kernel_offsets_run_bytes(weights)
    mem = _ConvMem(geom, inp, kernel_values_image(weights), bg,
                   kernel_offsets_image(weights), quant.bias_vector(geom.k),
                   bg * m)
    shift = quant.shift

    def one_iter(b: Body, off_addr: int, off_stride: int, val_addr: int,
                 val_stride: int, paired: bool):
        b.ins(OP_LW, R_OFF0, R_ZERO, imm=off_addr, stride=off_stride)
        for _ in range(4):
            b.ins(xdec, R_ACT0, R_BUF0, R_OFF0)
            b.ins(xdec, R_ACT1 if paired else R_ACT0,
                  R_BUF1 if paired else R_BUF0, R_OFF0)
        b.ins(OP_LW, R_W0, R_ZERO, imm=val_addr, stride=val_stride)
        b.ins(OP_SDOTP4, R_ACC[0], R_W0, R_ACT0)
        if paired:
            b.ins(OP_SDOTP4, R_ACC[1], R_W0, R_ACT1)

    def channels(em: Emit, pos_idx: int, paired: bool):
        out0 = mem.out_base + pos_idx * geom.k
        out1 = out0 + geom.k
        em.li(R_BUF0, mem.buf0)
        if paired:
            em.li(R_BUF1, mem.buf1)
        for k in range(geom.k):
            if paired:
                emit_acc_init(em, [(R_ACC[0], R_ACC[1])], mem.bias_base, [k])
            else:
                emit_acc_init(em, [(R_ACC[0],)], mem.bias_base, [k])
            b = Body()
            if m == 4:
                # a 32-bit offsets word carries 16 2-bit fields = 2 iterations;
                # the counter's 4 select bits walk both halves, so the body
                # covers two iterations and reloads the word in each.
                one_iter(b, mem.off_base + k * run, 4, mem.w_base + k * bg, 8, paired)
                one_iter(b, mem.off_base + k * run, 4, mem.w_base + k * bg + 4, 8, paired)
                em.loop(b, bg // 8, tag="inner" if paired else None,
                        macs=16 if paired else 8, unroll=2)
            else:
                one_iter(b, mem.off_base + k * run, 4, mem.w_base + k * bg, 4, paired)
                em.loop(b, bg // 4, tag="inner" if paired else None,
                        macs=8 if paired else 4)
            emit_decimate_clear(em)
            emit_requant_store(em, R_ACC[0], shift, out0 + k)
            if paired:
                emit_requant_store(em, R_ACC[1], shift, out1 + k)

    macs = geom.n_positions * geom.k * bg
    out, report = _run_conv("conv_sparse_isa", geom, mem, channels, macs, m,
                            n_cores, m, trace_out)
    assert report.window_instructions in (0, 12)
    return out, report
