"""Partial im2col: two output patches copied into flat gather buffers.

Each patch is the FX*FY*C receptive field of one output position, laid out
filter-row-major with channels innermost, zeros wherever the field leaves
the input. The conv kernels re-run this copy once per patch pair and reuse
the buffers across all output channels, so its cost is identical for dense
and sparse kernels. Buffers are padded past FX*FY*C up to the kernel's
SIMD/block granule; the pad bytes are allocated zeroed and never written,
so they carry no copy cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..emulator import OP_LBU, OP_LW, OP_SB, OP_SW
from ..geometry import LayerGeometry
from .common import Body, Emit, R_COPY, R_ZERO


@dataclass(frozen=True)
class Im2colBuffer:
    """Two gathered patches. Per-core L1 cost is 2 buffers of `buf_len`
    bytes; across a cluster that is FX*FY*C * 2 * n_cores elements (plus
    granule padding)."""

    data: np.ndarray            # (2, buf_len) int8
    patch_centers: tuple        # ((oy, ox), (oy, ox))

    @property
    def buf_len(self) -> int:
        return self.data.shape[1]


def im2col_patch(inp: np.ndarray, geom: LayerGeometry, oy: int, ox: int,
                 buf_len: int | None = None) -> np.ndarray:
    """Gather one receptive field into a flat zero-padded buffer."""
    ffc = geom.reduction_dim
    buf_len = ffc if buf_len is None else buf_len
    out = np.zeros(buf_len, dtype=np.int8)
    iy0 = oy * geom.s - geom.p
    ix0 = ox * geom.s - geom.p
    for fy in range(geom.fy):
        iy = iy0 + fy
        if iy < 0 or iy >= geom.iy:
            continue
        x_lo = max(ix0, 0)
        x_hi = min(ix0 + geom.fx, geom.ix)
        if x_lo >= x_hi:
            continue
        dst = (fy * geom.fx + (x_lo - ix0)) * geom.c
        out[dst: dst + (x_hi - x_lo) * geom.c] = inp[iy, x_lo:x_hi, :].reshape(-1)
    return out


def im2col_partial(inp: np.ndarray, geom: LayerGeometry, pos0: tuple, pos1: tuple,
                   buf_len: int | None = None) -> Im2colBuffer:
    """Functional reference for the two-patch copy."""
    data = np.stack([im2col_patch(inp, geom, *pos0, buf_len),
                     im2col_patch(inp, geom, *pos1, buf_len)])
    return Im2colBuffer(data, (pos0, pos1))


# ---------------------------------------------------------------------------
# trace emission
# ---------------------------------------------------------------------------

def _emit_zero(em: Emit, base: int, length: int) -> None:
    """Zero-fill [base, base+length) with word stores where aligned."""
    end = base + length
    while base & 3 and base < end:
        em.ins(OP_SB, 0, R_ZERO, R_ZERO, imm=base)
        base += 1
    n_words = (end - base) // 4
    if n_words:
        if n_words <= 2:
            for i in range(n_words):
                em.ins(OP_SW, 0, R_ZERO, R_ZERO, imm=base + 4 * i)
        else:
            b = Body()
            b.ins(OP_SW, 0, R_ZERO, R_ZERO, imm=base, stride=4)
            em.loop(b, n_words)
        base += 4 * n_words
    while base < end:
        em.ins(OP_SB, 0, R_ZERO, R_ZERO, imm=base)
        base += 1


def _emit_copy(em: Emit, src: int, dst: int, length: int) -> None:
    """Copy length bytes; word-wise when both ends are word aligned."""
    if length <= 0:
        return
    if src & 3 == 0 and dst & 3 == 0 and length & 3 == 0:
        n_words = length // 4
        if n_words <= 2:
            for i in range(n_words):
                em.ins(OP_LW, R_COPY, R_ZERO, imm=src + 4 * i)
                em.ins(OP_SW, 0, R_ZERO, R_COPY, imm=dst + 4 * i)
        else:
            b = Body()
            b.ins(OP_LW, R_COPY, R_ZERO, imm=src, stride=4)
            b.ins(OP_SW, 0, R_ZERO, R_COPY, imm=dst, stride=4)
            em.loop(b, n_words)
    else:
        if length <= 2:
            for i in range(length):
                em.ins(OP_LBU, R_COPY, R_ZERO, imm=src + i)
                em.ins(OP_SB, 0, R_ZERO, R_COPY, imm=dst + i)
        else:
            b = Body()
            b.ins(OP_LBU, R_COPY, R_ZERO, imm=src, stride=1)
            b.ins(OP_SB, 0, R_ZERO, R_COPY, imm=dst, stride=1)
            em.loop(b, length)


def emit_im2col(em: Emit, geom: LayerGeometry, in_base: int, buf_base: int,
                oy: int, ox: int) -> None:
    """Emit the copy of one patch into its gather buffer.

    Only the FX*FY*C live bytes are touched: border zeros are stored
    explicitly (a later patch may have left data there), while the granule
    padding past FX*FY*C stays zero for the whole layer.
    """
    c = geom.c
    iy0 = oy * geom.s - geom.p
    ix0 = ox * geom.s - geom.p
    for fy in range(geom.fy):
        iy = iy0 + fy
        row_dst = buf_base + fy * geom.fx * c
        if iy < 0 or iy >= geom.iy:
            _emit_zero(em, row_dst, geom.fx * c)
            continue
        x_lo = max(ix0, 0)
        x_hi = min(ix0 + geom.fx, geom.ix)
        pre = (x_lo - ix0) * c
        live = (x_hi - x_lo) * c
        if pre:
            _emit_zero(em, row_dst, pre)
        if live:
            _emit_copy(em, in_base + (iy * geom.ix + x_lo) * c, row_dst + pre, live)
        post = geom.fx * c - pre - live
        if post:
            _emit_zero(em, row_dst + pre + live, post)
