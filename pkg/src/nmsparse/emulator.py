"""Functional, instruction-counting core emulator.

Models the minimal instruction set the int8 kernels need: scalar ALU ops,
byte/word loads and stores, a 4x8-bit SIMD dot product, zero-overhead
hardware loops, and the decimate-load extension that fuses offset
unpacking with a byte gather. Every executed instruction costs exactly 1,
so a kernel's cost report is an exact instruction count, not an estimate.

Decimate-load semantics (per call, one instruction):

    s    = csr[2:0]            (csr[3:0] for M=4, which packs 16 2-bit fields)
    o    = field s of rs2      (4-bit fields for M=8/16, 2-bit for M=4)
    addr = rs1 + M * (csr >> 1) + o
    rd[byte csr[2:1]] = mem[addr];  csr += 1

The right shift of the counter makes two consecutive calls address the
same M-sized block, which is what lets one instruction serve both the
two-patch convolution unrolling and the two-channel FC unrolling. The
block index field is 15 bits wide; a kernel must clear the counter (one
`decimate.clear` per output-channel loop) before 2**15 blocks elapse.

Hardware loops are represented structurally (HwLoop): the setup costs one
instruction, each body iteration costs len(body), and per-iteration
address advance is expressed as an immediate stride, mirroring
post-increment addressing. Register dataflow inside the body is real; only
immediates vary across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

__all__ = [
    "CoreState", "Instr", "HwLoop", "EmulatorError", "MemoryFault",
    "IllegalOpcode", "run_trace", "sdotp4", "xdecimate_step", "xdecimate_clear",
    "opcode_name", "OP_ADDI", "OP_ADD", "OP_ANDI", "OP_AND", "OP_ORI", "OP_OR",
    "OP_SLLI", "OP_SRLI", "OP_SRAI", "OP_CLIP8", "OP_LW", "OP_SW", "OP_LBU",
    "OP_SB", "OP_LB", "OP_SDOTP4", "OP_XDEC4", "OP_XDEC8", "OP_XDEC16",
    "OP_XDECCLR", "OP_LPSETUP", "N_OPCODES",
]

OP_ADDI = 0
OP_ADD = 1
OP_ANDI = 2
OP_AND = 3
OP_ORI = 4
OP_OR = 5
OP_SLLI = 6
OP_SRLI = 7
OP_SRAI = 8
OP_CLIP8 = 9
OP_LW = 10
OP_SW = 11
OP_LBU = 12
OP_SB = 13
OP_LB = 14
OP_SDOTP4 = 15
OP_XDEC4 = 16
OP_XDEC8 = 17
OP_XDEC16 = 18
OP_XDECCLR = 19
OP_LPSETUP = 20
N_OPCODES = 21

_NAMES = [
    "addi", "add", "andi", "and", "ori", "or", "slli", "srli", "srai",
    "clip8", "lw", "sw", "lbu", "sb", "lb", "sdotp4", "xdec.m4", "xdec.m8",
    "xdec.m16", "xdec.clear", "lp.setup",
]

_SEXT8 = tuple(v if v < 128 else v - 256 for v in range(256))
_LANE_CLEAR = (0xFFFFFF00, 0xFFFF00FF, 0xFF00FFFF, 0x00FFFFFF)
_MASK32 = 0xFFFFFFFF
_CSR_BLOCK_LIMIT = 1 << 15


def opcode_name(op: int) -> str:
    return _NAMES[op]


class EmulatorError(RuntimeError):
    pass


class MemoryFault(EmulatorError):
    pass


class IllegalOpcode(EmulatorError):
    pass


class Instr(NamedTuple):
    """One instruction. Addressing by opcode:

    loads/stores  addr = regs[rs1] + imm (lw/sw/lbu/sb)
    lb            addr = regs[rs1] + regs[rs2], byte lands in lane imm
    decimate      rs1 = buffer base, rs2 = packed offset fields
    alu           rd = regs[rs1] op (regs[rs2] | imm)
    """

    op: int
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0


@dataclass(frozen=True)
class HwLoop:
    """Zero-overhead loop: body repeats `count` times, immediates advancing
    by the matching stride each iteration. `tag` marks steady-state inner
    windows; `macs` is the MAC work of one body execution and `unroll` how
    many logical kernel iterations one body covers.
    """

    body: tuple[Instr, ...]
    strides: tuple[int, ...]
    count: int
    tag: str | None = None
    macs: int = 0
    unroll: int = 1

    def __post_init__(self):
        if len(self.body) != len(self.strides):
            raise ValueError("one stride per body instruction")
        if self.count < 0:
            raise ValueError("negative loop count")

    def rows(self):
        return [(i.op, i.rd, i.rs1, i.rs2, i.imm, s) for i, s in zip(self.body, self.strides)]


@dataclass
class CoreState:
    """Architectural state of one emulated core.

    Register 0 is hardwired to zero. Values are stored as unsigned 32-bit
    Python ints; signedness is applied per-operation. `opcode_counts`
    accumulates executed-instruction histograms for trace assertions.
    """

    mem: bytearray
    core_id: int = 0
    regs: list = field(default_factory=lambda: [0] * 32)
    deci_csr: int = 0
    icount: int = 0
    opcode_counts: list = field(default_factory=lambda: [0] * N_OPCODES)

    @staticmethod
    def with_memory(size: int, core_id: int = 0) -> "CoreState":
        return CoreState(mem=bytearray(size), core_id=core_id)


def run_trace(state: CoreState, program: Iterable, trace_out=None) -> int:
    """Execute a program (Instr / HwLoop items) and return the icount delta.

    Deterministic; mutates `state` in place. Raises MemoryFault on any
    out-of-bounds or misaligned access and IllegalOpcode on unknown ops.
    When `trace_out` is given, writes one line per executed instruction:
    icount, opcode, operands, csr.
    """
    regs = state.regs
    mem = state.mem
    memlen = len(mem)
    counts = state.opcode_counts
    csr = state.deci_csr
    ic = state.icount
    start = ic
    sext = _SEXT8
    lane_clear = _LANE_CLEAR

    try:
        for item in program:
            if type(item) is HwLoop:
                rows = item.rows()
                count = item.count
                ic += 1
                counts[OP_LPSETUP] += 1
                if trace_out is not None:
                    trace_out.write(f"{ic} lp.setup count={count} body={len(rows)} csr={csr}\n")
            elif type(item) is Instr:
                rows = [(item.op, item.rd, item.rs1, item.rs2, item.imm, 0)]
                count = 1
            else:
                raise IllegalOpcode(f"not an instruction: {item!r}")

            if trace_out is None:
                # opcode histograms are batched per block; they are only
                # meaningful for runs that complete.
                for row in rows:
                    counts[row[0]] += count

            for t in range(count):
                for op, rd, rs1, rs2, imm, stride in rows:
                    if stride:
                        imm += stride * t
                    ic += 1
                    if op == OP_LW:
                        a = regs[rs1] + imm
                        if a < 0 or a + 4 > memlen or a & 3:
                            raise MemoryFault(f"lw at {a:#x}")
                        if rd:
                            regs[rd] = mem[a] | mem[a + 1] << 8 | mem[a + 2] << 16 | mem[a + 3] << 24
                    elif op == OP_SDOTP4:
                        a = regs[rs1]
                        b = regs[rs2]
                        if rd:
                            regs[rd] = (regs[rd]
                                        + sext[a & 255] * sext[b & 255]
                                        + sext[a >> 8 & 255] * sext[b >> 8 & 255]
                                        + sext[a >> 16 & 255] * sext[b >> 16 & 255]
                                        + sext[a >> 24] * sext[b >> 24]) & _MASK32
                    elif op == OP_LB:
                        a = regs[rs1] + regs[rs2]
                        if a < 0 or a >= memlen:
                            raise MemoryFault(f"lb at {a:#x}")
                        lane = imm & 3
                        if rd:
                            regs[rd] = (regs[rd] & lane_clear[lane]) | mem[a] << (lane * 8)
                    elif op == OP_XDEC8 or op == OP_XDEC16 or op == OP_XDEC4:
                        if op == OP_XDEC4:
                            m = 4
                            o = regs[rs2] >> ((csr & 15) * 2) & 3
                        else:
                            m = 8 if op == OP_XDEC8 else 16
                            o = regs[rs2] >> ((csr & 7) * 4) & 15
                        blk = csr >> 1
                        if blk >= _CSR_BLOCK_LIMIT:
                            raise EmulatorError("decimate counter exceeded 2**15 blocks; missing clear?")
                        a = regs[rs1] + m * blk + o
                        if a < 0 or a >= memlen:
                            raise MemoryFault(f"decimate load at {a:#x}")
                        lane = blk & 3
                        if rd:
                            regs[rd] = (regs[rd] & lane_clear[lane]) | mem[a] << (lane * 8)
                        csr += 1
                    elif op == OP_ADDI:
                        if rd:
                            regs[rd] = (regs[rs1] + imm) & _MASK32
                    elif op == OP_LBU:
                        a = regs[rs1] + imm
                        if a < 0 or a >= memlen:
                            raise MemoryFault(f"lbu at {a:#x}")
                        if rd:
                            regs[rd] = mem[a]
                    elif op == OP_ANDI:
                        if rd:
                            regs[rd] = regs[rs1] & imm
                    elif op == OP_SRLI:
                        if rd:
                            regs[rd] = regs[rs1] >> (imm & 31)
                    elif op == OP_SB:
                        a = regs[rs1] + imm
                        if a < 0 or a >= memlen:
                            raise MemoryFault(f"sb at {a:#x}")
                        mem[a] = regs[rs2] & 255
                    elif op == OP_SW:
                        a = regs[rs1] + imm
                        if a < 0 or a + 4 > memlen or a & 3:
                            raise MemoryFault(f"sw at {a:#x}")
                        v = regs[rs2]
                        mem[a] = v & 255
                        mem[a + 1] = v >> 8 & 255
                        mem[a + 2] = v >> 16 & 255
                        mem[a + 3] = v >> 24 & 255
                    elif op == OP_ADD:
                        if rd:
                            regs[rd] = (regs[rs1] + regs[rs2]) & _MASK32
                    elif op == OP_SRAI:
                        if rd:
                            v = regs[rs1]
                            if v & 0x80000000:
                                v -= 1 << 32
                            regs[rd] = (v >> (imm & 31)) & _MASK32
                    elif op == OP_CLIP8:
                        if rd:
                            v = regs[rs1]
                            if v & 0x80000000:
                                v -= 1 << 32
                            regs[rd] = (127 if v > 127 else -128 if v < -128 else v) & _MASK32
                    elif op == OP_SLLI:
                        if rd:
                            regs[rd] = (regs[rs1] << (imm & 31)) & _MASK32
                    elif op == OP_ORI:
                        if rd:
                            regs[rd] = regs[rs1] | imm
                    elif op == OP_OR:
                        if rd:
                            regs[rd] = regs[rs1] | regs[rs2]
                    elif op == OP_AND:
                        if rd:
                            regs[rd] = regs[rs1] & regs[rs2]
                    elif op == OP_XDECCLR:
                        csr = 0
                    else:
                        raise IllegalOpcode(f"opcode {op}")
                    if trace_out is not None:
                        trace_out.write(
                            f"{ic} {_NAMES[op]} rd={rd} rs1={rs1} rs2={rs2} imm={imm} csr={csr}\n")
    finally:
        state.deci_csr = csr
        state.icount = ic
    return ic - start


# Single-instruction wrappers. These go through run_trace so the cost
# accounting is identical to kernel execution.

def sdotp4(state: CoreState, rd: int, rs1: int, rs2: int) -> CoreState:
    run_trace(state, [Instr(OP_SDOTP4, rd, rs1, rs2)])
    return state


def xdecimate_step(state: CoreState, rd: int, rs1: int, rs2: int, m: int) -> CoreState:
    op = {4: OP_XDEC4, 8: OP_XDEC8, 16: OP_XDEC16}[m]
    run_trace(state, [Instr(op, rd, rs1, rs2)])
    return state


def xdecimate_clear(state: CoreState) -> CoreState:
    run_trace(state, [Instr(OP_XDECCLR)])
    return state
