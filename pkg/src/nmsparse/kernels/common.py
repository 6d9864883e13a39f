"""Shared kernel infrastructure: quantization, cost reports, work splits,
register conventions, memory image assembly, and the theoretical peak
throughput tables of the inner loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..emulator import (
    OP_ADDI, OP_ADD, OP_CLIP8, OP_LW, OP_SB, OP_SRAI, OP_XDECCLR,
    HwLoop, Instr,
)
from ..geometry import CONV, FC, LayerGeometry

# Register conventions shared by every kernel trace. r0 is hardwired zero;
# loads whose base register is r0 use absolute addressing, standing in for
# the pointer a compiled kernel would keep (post-increment makes the
# pointer arithmetic free on the modeled ISA either way).
R_ZERO = 0
R_BUF0 = 1          # patch-0 gather base / running block pointer
R_BUF1 = 2          # patch-1 gather base
R_W0, R_W1, R_W2, R_W3 = 5, 6, 7, 8
R_ACT0, R_ACT1 = 9, 10
R_ACC = (11, 12, 13, 14, 15, 16, 17, 18)
R_ACT2, R_ACT3 = 21, 22
R_OFF0, R_OFF1 = 23, 24
R_IDX = (25, 26, 27, 28)
R_COPY = 29


@dataclass(frozen=True)
class QuantParams:
    """int32 -> int8 output stage: add bias, round-to-nearest power-of-two
    right shift, clamp to [-128, 127]. Applied identically by every kernel
    and reference so cross-checks are bit-exact.
    """

    shift: int = 0
    bias: np.ndarray | None = None

    def __post_init__(self):
        if not 0 <= self.shift <= 31:
            raise ValueError("shift must be in [0, 31]")
        if self.bias is not None and self.bias.dtype != np.int32:
            raise ValueError("bias must be int32")

    def bias_vector(self, k: int) -> np.ndarray:
        if self.bias is None:
            return np.zeros(k, dtype=np.int32)
        if self.bias.shape != (k,):
            raise ValueError(f"bias shape {self.bias.shape} != ({k},)")
        return self.bias


def requantize(acc: np.ndarray, shift: int) -> np.ndarray:
    """Round-to-nearest right shift and int8 clamp of bias-added accumulators."""
    acc = acc.astype(np.int64)
    if shift:
        acc = (acc + (1 << (shift - 1))) >> shift
    return np.clip(acc, -128, 127).astype(np.int8)


@dataclass(frozen=True)
class CostReport:
    """Exact instruction-count cost of one kernel run.

    The aggregate `instructions` is the max-loaded core's count (parallel
    completion time); `macs_effective` counts executed SIMD lane MACs and
    `macs_dense_equiv` scales sparse work back to the unpruned layer.
    Window fields describe one steady-state inner-loop iteration.
    """

    kernel: str
    n_cores: int
    per_core_instructions: tuple
    macs_effective: int
    macs_dense_equiv: int
    window_instructions: int
    window_macs: int
    m: int | None = None
    xdec_clears: int = 0

    @property
    def instructions(self) -> int:
        return max(self.per_core_instructions) if self.per_core_instructions else 0

    @property
    def macs_per_instruction(self) -> float:
        return self.macs_effective / self.instructions if self.instructions else 0.0

    @property
    def macs_equiv_per_instruction(self) -> float:
        return self.macs_dense_equiv / self.instructions if self.instructions else 0.0

    @property
    def window_macs_per_instruction(self) -> float:
        if not self.window_instructions:
            return 0.0
        return self.window_macs / self.window_instructions


# ---------------------------------------------------------------------------
# theoretical inner-loop peaks
# ---------------------------------------------------------------------------

# Steady-state inner-loop windows as (instructions, MACs) per iteration.
# Conv iterations cover two output positions; FC sparse SW covers one
# channel, the others two channels.
INNER_WINDOWS = {
    ("conv_dense_4x2", None): (14, 32),   # 6 word loads + 8 dot products
    ("conv_dense_1x2", None): (10, 16),
    ("conv_sparse_sw", 4): (23, 8),       # denser field unpack: +2 masks, -1 load
    ("conv_sparse_sw", 8): (22, 8),
    ("conv_sparse_sw", 16): (22, 8),
    ("conv_sparse_isa", 4): (12, 8),
    ("conv_sparse_isa", 8): (12, 8),
    ("conv_sparse_isa", 16): (12, 8),
    ("fc_dense", None): (5, 8),
    ("fc_sparse_sw", 4): (17, 4),         # same +2/-1 delta as the conv kernel
    ("fc_sparse_sw", 8): (16, 4),
    ("fc_sparse_sw", 16): (16, 4),
    ("fc_sparse_isa", 4): (13, 8),
    ("fc_sparse_isa", 8): (13, 8),
    ("fc_sparse_isa", 16): (13, 8),
}

# Published two-decimal effective peaks of each kernel family. These are
# the integer windows above quoted at two decimals; the dense-equivalent
# peak of a sparse kernel is the two-decimal figure scaled by M, which is
# how the per-M peak tables are conventionally derived. The fc_sparse_sw
# figure describes the M=8/16 window; the M=4 variant's measured window
# (4/17) pays the extra unpack masking.
PEAK_EFFECTIVE_2DP = {
    "conv_dense_4x2": 2.28,   # 32/14 = 2.2857
    "conv_dense_1x2": 1.6,    # 16/10
    "conv_sparse_sw": 0.36,   # 8/22 = 0.3636 (M=4 window 8/23 quoted as 0.35)
    "conv_sparse_isa": 0.66,  # 8/12 = 0.6667
    "fc_dense": 1.6,          # 8/5
    "fc_sparse_sw": 0.25,     # 4/16
    "fc_sparse_isa": 0.61,    # 8/13 = 0.6154
}


def peak_effective(kernel: str, m: int | None = None) -> float:
    if kernel == "conv_sparse_sw" and m == 4:
        return 0.35
    return PEAK_EFFECTIVE_2DP[kernel]


def peak_dense_equiv(kernel: str, m: int | None = None) -> float:
    """Dense-equivalent inner-loop peak: two-decimal effective peak times M."""
    eff = peak_effective(kernel, m)
    return eff * m if m else eff


# ---------------------------------------------------------------------------
# work splitting
# ---------------------------------------------------------------------------

def split_ranges(total: int, n_cores: int) -> list:
    """Contiguous near-even split of `total` units over cores."""
    if n_cores < 1:
        raise ValueError("n_cores must be >= 1")
    q, r = divmod(total, n_cores)
    ranges = []
    start = 0
    for c in range(n_cores):
        size = q + (1 if c < r else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


def parallelize(geometry: LayerGeometry, n_cores: int = 8, k_granule: int = 1) -> list:
    """Per-core work split: contiguous output positions (row-major, so OY
    then OX) for conv, contiguous output-channel ranges for FC.

    FC ranges are aligned to `k_granule` (2 for channel-paired kernels);
    the trailing range absorbs any remainder.
    """
    if geometry.kind == CONV:
        return split_ranges(geometry.n_positions, n_cores)
    groups = -(-geometry.k // k_granule)
    return [(lo * k_granule, min(hi * k_granule, geometry.k))
            for lo, hi in split_ranges(groups, n_cores)]


# ---------------------------------------------------------------------------
# trace emission helpers
# ---------------------------------------------------------------------------

class Emit:
    """Accumulates a program (Instr / HwLoop items) for one core."""

    def __init__(self):
        self.items = []

    def ins(self, op, rd=0, rs1=0, rs2=0, imm=0):
        self.items.append(Instr(op, rd, rs1, rs2, imm))

    def li(self, rd, imm):
        self.ins(OP_ADDI, rd, R_ZERO, imm=imm)

    def loop(self, body: "Body", count: int, tag=None, macs=0, unroll=1):
        if count > 0:
            self.items.append(HwLoop(tuple(body.instrs), tuple(body.strides),
                                     count, tag, macs, unroll))


class Body:
    """Collects one hardware-loop body with per-instruction imm strides."""

    def __init__(self):
        self.instrs = []
        self.strides = []

    def ins(self, op, rd=0, rs1=0, rs2=0, imm=0, stride=0):
        self.instrs.append(Instr(op, rd, rs1, rs2, imm))
        self.strides.append(stride)


def emit_acc_init(em: Emit, acc_regs, bias_base: int, ks) -> None:
    """Load per-channel bias into accumulators; extra accumulators of the
    same channel are register copies."""
    for regs, k in zip(acc_regs, ks):
        em.ins(OP_LW, regs[0], R_ZERO, imm=bias_base + 4 * k)
        for extra in regs[1:]:
            em.ins(OP_ADD, extra, regs[0], R_ZERO)


def emit_requant_store(em: Emit, acc_reg: int, shift: int, out_addr: int) -> None:
    """Round/shift/clamp an accumulator and store the int8 result."""
    if shift:
        em.ins(OP_ADDI, acc_reg, acc_reg, imm=1 << (shift - 1))
        em.ins(OP_SRAI, acc_reg, acc_reg, imm=shift)
    em.ins(OP_CLIP8, acc_reg, acc_reg)
    em.ins(OP_SB, 0, R_ZERO, acc_reg, imm=out_addr)


def emit_decimate_clear(em: Emit) -> None:
    em.ins(OP_XDECCLR)


# ---------------------------------------------------------------------------
# memory images
# ---------------------------------------------------------------------------

class MemImage:
    """Builds the byte image a core executes against. All regions are
    4-byte aligned so word loads line up."""

    def __init__(self):
        self._chunks = []
        self._pos = 0

    def _align(self, align: int) -> None:
        pad = (-self._pos) % align
        if pad:
            self._chunks.append(b"\x00" * pad)
            self._pos += pad

    def add(self, data: bytes, align: int = 4) -> int:
        self._align(align)
        base = self._pos
        self._chunks.append(bytes(data))
        self._pos += len(data)
        return base

    def reserve(self, size: int, align: int = 4) -> int:
        self._align(align)
        base = self._pos
        self._chunks.append(b"\x00" * size)
        self._pos += size
        return base

    def build(self) -> bytearray:
        return bytearray(b"".join(self._chunks))


def collect_window(items) -> tuple:
    """Measure the steady-state inner window from a program's tagged loops.

    Returns (instructions, macs) per logical iteration; every tagged loop
    in the program must agree.
    """
    window = None
    for item in items:
        if isinstance(item, HwLoop) and item.tag == "inner":
            w = (len(item.body) // item.unroll, item.macs // item.unroll)
            if window is None:
                window = w
            elif window != w:
                raise AssertionError(f"inconsistent inner windows {window} vs {w}")
    return window or (0, 0)
