"""N:M compressed weight format: packing, layout transforms, footprints.

Storage model for a 1:M pruned int8 tensor (M in {4, 8, 16}):

  * values  -- one int8 per M-sized block of the flattened filter row,
               channel-major (all blocks of output channel 0, then channel
               1, ...). An all-zero block stores value 0.
  * offsets -- the position of each block's non-zero inside its block,
               packed little-endian, LSB-first within each byte: 2 bits per
               field for M=4, 4 bits for M=8 and M=16. An all-zero block
               stores offset 0.

Three field orderings exist:

  * PLAIN        -- one field per block, natural order. Canonical storage.
  * REPLICATED   -- every field duplicated ([o0,o0,o1,o1,...]); consumed by
                    the decimate-load conv kernel, which unpacks one field
                    per call but advances its block pointer every 2 calls.
  * INTERLEAVED  -- fields of two consecutive output channels alternated
                    ([o(0,k),o(0,k+1),o(1,k),o(1,k+1),...]); consumed by the
                    decimate-load FC kernel. Values stay channel-major.

Footprint reports count exact semantic bits (no alignment padding). The
byte images the kernels execute from pad each channel run to the kernel's
unroll granule; see kernel_values_image / kernel_offsets_image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geometry import LayerGeometry


class Layout(IntEnum):
    PLAIN = 0
    REPLICATED = 1
    INTERLEAVED = 2


class NonConformingError(ValueError):
    """A dense tensor does not satisfy the claimed N:M pattern."""


@dataclass(frozen=True)
class SparsityPattern:
    """1:M block sparsity. Offsets use 2 bits for M=4, else 4 bits.

    M=16 offsets also fit 4 bits because they are block-relative (< 16);
    field widths are rounded to a power of two so fields never straddle a
    byte boundary.
    """

    n: int
    m: int

    def __post_init__(self):
        if self.n != 1:
            raise ValueError("only 1:M patterns are supported")
        if self.m not in (4, 8, 16):
            raise ValueError("M must be one of 4, 8, 16")

    @property
    def offset_bits(self) -> int:
        return 2 if self.m == 4 else 4

    def blocks(self, reduction_len: int) -> int:
        """Block count for a reduction dim, zero-padded up to a multiple of M."""
        return -(-reduction_len // self.m)

    @property
    def name(self) -> str:
        return f"{self.n}:{self.m}"


PATTERN_1_4 = SparsityPattern(1, 4)
PATTERN_1_8 = SparsityPattern(1, 8)
PATTERN_1_16 = SparsityPattern(1, 16)


def pattern_from_name(name: str) -> SparsityPattern:
    n, _, m = name.partition(":")
    return SparsityPattern(int(n), int(m))


@dataclass(frozen=True)
class DenseWeights:
    """Uncompressed int8 weights, shape (K, FX*FY*C), channel-major."""

    geometry: LayerGeometry
    data: np.ndarray

    def __post_init__(self):
        if self.data.dtype != np.int8:
            raise ValueError("weights must be int8")
        expect = (self.geometry.k, self.geometry.reduction_dim)
        if self.data.shape != expect:
            raise ValueError(f"weight shape {self.data.shape} != {expect}")


@dataclass(frozen=True)
class NmSparseWeights:
    """Compressed 1:M weights: values (K, B) plus a packed offset bit array."""

    pattern: SparsityPattern
    geometry: LayerGeometry
    values: np.ndarray
    offsets: np.ndarray
    layout: Layout = Layout.PLAIN

    def __post_init__(self):
        b = self.pattern.blocks(self.geometry.reduction_dim)
        if self.values.dtype != np.int8 or self.values.shape != (self.geometry.k, b):
            raise ValueError(f"values must be int8 of shape {(self.geometry.k, b)}")
        if self.offsets.dtype != np.uint8 or self.offsets.ndim != 1:
            raise ValueError("offsets must be a 1-D uint8 byte array")
        nf = self.n_fields
        if len(self.offsets) != packed_length(nf, self.pattern.offset_bits):
            raise ValueError("offset byte array has the wrong length")
        fields = unpack_offset_fields(self.offsets, nf, self.pattern.offset_bits)
        if nf and fields.max(initial=0) >= self.pattern.m:
            raise ValueError("offset field >= M")
        if self.layout == Layout.REPLICATED and nf:
            pairs = fields.reshape(-1, 2)
            if not (pairs[:, 0] == pairs[:, 1]).all():
                raise ValueError("replicated layout requires duplicated fields")
        if self.layout == Layout.INTERLEAVED and self.geometry.k % 2:
            raise ValueError("interleaved layout requires even K")

    @property
    def blocks_per_channel(self) -> int:
        return self.pattern.blocks(self.geometry.reduction_dim)

    @property
    def n_fields(self) -> int:
        dup = 2 if self.layout == Layout.REPLICATED else 1
        return self.geometry.k * self.blocks_per_channel * dup

    def offset_fields(self) -> np.ndarray:
        """Unpacked offset fields in storage order, one uint8 per field."""
        return unpack_offset_fields(self.offsets, self.n_fields, self.pattern.offset_bits)


@dataclass(frozen=True)
class FootprintReport:
    """Exact bit counts for one storage scheme of one layer."""

    dense_bits: int
    values_bits: int
    index_bits: int
    total_bits: int
    reduction: float

    @staticmethod
    def build(dense_bits: int, values_bits: int, index_bits: int) -> "FootprintReport":
        total = values_bits + index_bits
        # A scheme larger than dense reports reduction 0; total_bits keeps
        # the real magnitude for comparisons.
        red = max(0.0, 1.0 - total / dense_bits) if dense_bits else 0.0
        return FootprintReport(dense_bits, values_bits, index_bits, total, red)


# ---------------------------------------------------------------------------
# bit-packed offset fields
# ---------------------------------------------------------------------------

def packed_length(n_fields: int, offset_bits: int) -> int:
    """Bytes needed to hold n_fields packed fields."""
    return (n_fields * offset_bits + 7) // 8


def pack_offset_fields(fields: np.ndarray, offset_bits: int) -> np.ndarray:
    """Pack field values (each < 2**offset_bits) LSB-first into bytes."""
    if offset_bits not in (2, 4):
        raise ValueError("offset fields are 2 or 4 bits wide")
    fields = np.asarray(fields, dtype=np.uint8)
    if fields.size and fields.max() >= (1 << offset_bits):
        raise ValueError("field value does not fit the field width")
    per_byte = 8 // offset_bits
    pad = (-len(fields)) % per_byte
    if pad:
        fields = np.concatenate([fields, np.zeros(pad, np.uint8)])
    groups = fields.reshape(-1, per_byte).astype(np.uint32)
    shifts = np.arange(per_byte, dtype=np.uint32) * offset_bits
    return (groups << shifts).sum(axis=1).astype(np.uint8)


def unpack_offset_fields(packed: np.ndarray, n_fields: int, offset_bits: int) -> np.ndarray:
    """Inverse of pack_offset_fields, returning exactly n_fields values."""
    packed = np.asarray(packed, dtype=np.uint8)
    per_byte = 8 // offset_bits
    shifts = np.arange(per_byte, dtype=np.uint8) * offset_bits
    mask = (1 << offset_bits) - 1
    fields = ((packed[:, None] >> shifts) & mask).reshape(-1)
    return fields[:n_fields]


def extract_offset(packed, field_index: int, offset_bits: int) -> int:
    """Read one LSB-first bit field out of a packed byte array.

    This mirrors the shift-and-mask sequence the software kernels execute;
    fields never straddle bytes because the width divides 8.
    """
    if offset_bits not in (2, 4):
        raise ValueError("offset fields are 2 or 4 bits wide")
    bit = field_index * offset_bits
    byte = bit >> 3
    if field_index < 0 or byte >= len(packed):
        raise IndexError(f"field {field_index} out of range")
    return (packed[byte] >> (bit & 7)) & ((1 << offset_bits) - 1)


# ---------------------------------------------------------------------------
# compression / decompression
# ---------------------------------------------------------------------------

def _padded_rows(dense: DenseWeights, m: int) -> np.ndarray:
    g = dense.geometry
    b = -(-g.reduction_dim // m)
    rows = np.zeros((g.k, b * m), dtype=np.int8)
    rows[:, : g.reduction_dim] = dense.data
    return rows.reshape(g.k, b, m)


def compress_nm(dense: DenseWeights, pattern: SparsityPattern) -> NmSparseWeights:
    """Compress an already-pruned tensor; rejects blocks with > 1 non-zero.

    The reduction dim is zero-padded to a multiple of M. All-zero blocks
    store (value 0, offset 0) so the arrays stay fixed-length.
    """
    blocks = _padded_rows(dense, pattern.m)
    nz = blocks != 0
    counts = nz.sum(axis=2)
    if counts.size and counts.max() > 1:
        k, b = np.argwhere(counts > 1)[0]
        raise NonConformingError(
            f"block {b} of channel {k} holds {counts[k, b]} non-zeros, "
            f"not {pattern.name}-conforming"
        )
    offs = nz.argmax(axis=2).astype(np.uint8)  # argmax==0 for all-zero blocks
    vals = np.take_along_axis(blocks, offs[:, :, None].astype(np.intp), axis=2)[:, :, 0]
    packed = pack_offset_fields(offs.reshape(-1), pattern.offset_bits)
    return NmSparseWeights(pattern, dense.geometry, vals, packed, Layout.PLAIN)


def decompress_nm(sparse: NmSparseWeights) -> DenseWeights:
    """Expand back to dense. Plain layout only; exact inverse of compress_nm."""
    if sparse.layout != Layout.PLAIN:
        raise ValueError("decompress_nm expects the plain layout")
    g = sparse.geometry
    m = sparse.pattern.m
    b = sparse.blocks_per_channel
    offs = sparse.offset_fields().reshape(g.k, b)
    full = np.zeros((g.k, b, m), dtype=np.int8)
    np.put_along_axis(full, offs[:, :, None].astype(np.intp), sparse.values[:, :, None], axis=2)
    return DenseWeights(g, full.reshape(g.k, b * m)[:, : g.reduction_dim].copy())


def replicate_offsets(sparse: NmSparseWeights) -> NmSparseWeights:
    """Duplicate every offset field; values untouched. Plain -> Replicated."""
    if sparse.layout != Layout.PLAIN:
        raise ValueError("replicate_offsets expects the plain layout")
    fields = np.repeat(sparse.offset_fields(), 2)
    packed = pack_offset_fields(fields, sparse.pattern.offset_bits)
    return NmSparseWeights(sparse.pattern, sparse.geometry, sparse.values, packed, Layout.REPLICATED)


def interleave_offsets_fc(sparse: NmSparseWeights) -> NmSparseWeights:
    """Alternate the offset fields of each channel pair. Plain -> Interleaved.

    For the pair (k, k+1) the field order becomes o(0,k), o(0,k+1),
    o(1,k), o(1,k+1), ... so that consecutive decimate calls serve the two
    channels in turn. K must be even (pad K upstream).
    """
    if sparse.layout != Layout.PLAIN:
        raise ValueError("interleave_offsets_fc expects the plain layout")
    g = sparse.geometry
    if g.k % 2:
        raise ValueError("interleaving requires an even channel count")
    b = sparse.blocks_per_channel
    fields = sparse.offset_fields().reshape(g.k // 2, 2, b)
    inter = fields.transpose(0, 2, 1).reshape(-1)
    packed = pack_offset_fields(inter, sparse.pattern.offset_bits)
    return NmSparseWeights(sparse.pattern, g, sparse.values, packed, Layout.INTERLEAVED)


def deinterleave_offsets_fc(sparse: NmSparseWeights) -> NmSparseWeights:
    """Inverse of interleave_offsets_fc."""
    if sparse.layout != Layout.INTERLEAVED:
        raise ValueError("expected the interleaved layout")
    g = sparse.geometry
    b = sparse.blocks_per_channel
    fields = sparse.offset_fields().reshape(g.k // 2, b, 2)
    plain = fields.transpose(0, 2, 1).reshape(-1)
    packed = pack_offset_fields(plain, sparse.pattern.offset_bits)
    return NmSparseWeights(sparse.pattern, g, sparse.values, packed, Layout.PLAIN)


# ---------------------------------------------------------------------------
# footprints
# ---------------------------------------------------------------------------

def footprint_nm(geometry: LayerGeometry, pattern: SparsityPattern,
                 layout: Layout = Layout.PLAIN) -> FootprintReport:
    """Exact N:M storage bits: 8 per value, offset_bits per field (x2 replicated)."""
    b = pattern.blocks(geometry.reduction_dim)
    dup = 2 if layout == Layout.REPLICATED else 1
    values_bits = geometry.k * b * pattern.n * 8
    index_bits = geometry.k * b * pattern.n * pattern.offset_bits * dup
    return FootprintReport.build(geometry.k * geometry.reduction_dim * 8, values_bits, index_bits)


def footprint_coo(geometry: LayerGeometry, sparsity_fraction: float,
                  index_bits: int = 16) -> FootprintReport:
    """COO storage: 8-bit value plus a (row, col) pair of index_bits each.

    With 16-bit indices the format never beats dense below 80% sparsity;
    reduction is floored at 0 and total_bits carries the real cost.
    """
    if not 0.0 <= sparsity_fraction <= 1.0:
        raise ValueError("sparsity_fraction must be in [0, 1]")
    elems = geometry.k * geometry.reduction_dim
    nnz = round(elems * (1.0 - sparsity_fraction))
    return FootprintReport.build(elems * 8, nnz * 8, nnz * 2 * index_bits)


def footprint_csr(geometry: LayerGeometry, sparsity_fraction: float,
                  index_bits: int = 16) -> FootprintReport:
    """CSR storage: values, one column index per NZ, K+1 row pointers."""
    if not 0.0 <= sparsity_fraction <= 1.0:
        raise ValueError("sparsity_fraction must be in [0, 1]")
    elems = geometry.k * geometry.reduction_dim
    nnz = round(elems * (1.0 - sparsity_fraction))
    index = nnz * index_bits + (geometry.k + 1) * index_bits
    return FootprintReport.build(elems * 8, nnz * 8, index)


def bits_per_dense_weight(pattern: SparsityPattern | None,
                          layout: Layout = Layout.PLAIN) -> float:
    """Storage bits amortized over each dense-equivalent weight.

    Dense tensors cost 8; e.g. 1:4 replicated costs (8 + 2*2)/4 = 3.
    """
    if pattern is None:
        return 8.0
    dup = 2 if layout == Layout.REPLICATED else 1
    return (8 + pattern.offset_bits * dup) / pattern.m


# ---------------------------------------------------------------------------
# kernel-facing byte images
# ---------------------------------------------------------------------------

def kernel_block_granule(layout: Layout, m: int) -> int:
    """Blocks per channel are padded to this so inner loops never see tails.

    4 blocks feed one SIMD word of values; the decimate kernels for M=4
    additionally consume offsets a whole 32-bit word (8 blocks) at a time.
    """
    if layout in (Layout.REPLICATED, Layout.INTERLEAVED) and m == 4:
        return 8
    return 4


def padded_block_count(blocks: int, layout: Layout, m: int) -> int:
    g = kernel_block_granule(layout, m)
    return -(-blocks // g) * g


def padded_blocks(sparse: NmSparseWeights) -> int:
    return padded_block_count(sparse.blocks_per_channel, sparse.layout, sparse.pattern.m)


def kernel_values_image(sparse: NmSparseWeights) -> bytes:
    """Values with each channel row zero-padded to the block granule."""
    bg = padded_blocks(sparse)
    img = np.zeros((sparse.geometry.k, bg), dtype=np.int8)
    img[:, : sparse.blocks_per_channel] = sparse.values
    return img.tobytes()


def kernel_offsets_image(sparse: NmSparseWeights) -> bytes:
    """Offset fields re-packed per channel run, padded to the block granule.

    PLAIN runs are per channel (byte aligned by construction); REPLICATED
    runs are per channel and INTERLEAVED runs per channel pair, both a
    whole number of 32-bit words so the kernels' word loads line up with
    the decimate counter phase.
    """
    b = sparse.blocks_per_channel
    bg = padded_blocks(sparse)
    w = sparse.pattern.offset_bits
    fields = sparse.offset_fields()
    if sparse.layout == Layout.PLAIN:
        runs = fields.reshape(sparse.geometry.k, b)
        padded = np.zeros((sparse.geometry.k, bg), dtype=np.uint8)
    elif sparse.layout == Layout.REPLICATED:
        runs = fields.reshape(sparse.geometry.k, 2 * b)
        padded = np.zeros((sparse.geometry.k, 2 * bg), dtype=np.uint8)
    else:
        runs = fields.reshape(sparse.geometry.k // 2, 2 * b)
        padded = np.zeros((sparse.geometry.k // 2, 2 * bg), dtype=np.uint8)
    padded[:, : runs.shape[1]] = runs
    return b"".join(pack_offset_fields(row, w).tobytes() for row in padded)


def offsets_run_bytes(blocks: int, layout: Layout, pattern: SparsityPattern) -> int:
    """Bytes of one padded offsets run (per channel, or per pair if interleaved)."""
    bg = padded_block_count(blocks, layout, pattern.m)
    mult = 1 if layout == Layout.PLAIN else 2
    return mult * bg * pattern.offset_bits // 8


def kernel_offsets_run_bytes(sparse: NmSparseWeights) -> int:
    return offsets_run_bytes(sparse.blocks_per_channel, sparse.layout, sparse.pattern)


# ---------------------------------------------------------------------------
# weight files
# ---------------------------------------------------------------------------

_MAGIC = b"NMSW"
_VERSION = 1
_HEADER = struct.Struct("<4sHBBBIBBI")


def weights_to_bytes(sparse: NmSparseWeights) -> bytes:
    g = sparse.geometry
    header = _HEADER.pack(_MAGIC, _VERSION, int(sparse.layout), sparse.pattern.n,
                          sparse.pattern.m, g.k, g.fx, g.fy, g.c)
    return header + sparse.values.tobytes() + sparse.offsets.tobytes()


def weights_from_bytes(blob: bytes) -> NmSparseWeights:
    """Parse and fully validate a serialized weight tensor."""
    if len(blob) < _HEADER.size:
        raise ValueError("truncated weight file")
    magic, version, layout, n, m, k, fx, fy, c = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ValueError("bad magic, not an N:M weight file")
    if version != _VERSION:
        raise ValueError(f"unsupported version {version}")
    pattern = SparsityPattern(n, m)
    layout = Layout(layout)
    geometry = LayerGeometry.from_weight_shape(k, fx, fy, c)
    b = pattern.blocks(geometry.reduction_dim)
    if layout == Layout.INTERLEAVED and geometry.kind != "fc":
        raise ValueError("interleaved layout is only defined for FC weights")
    n_values = k * b
    dup = 2 if layout == Layout.REPLICATED else 1
    n_off = packed_length(k * b * dup, pattern.offset_bits)
    if len(blob) != _HEADER.size + n_values + n_off:
        raise ValueError("weight file length does not match its header")
    values = np.frombuffer(blob, np.int8, n_values, _HEADER.size).reshape(k, b).copy()
    offsets = np.frombuffer(blob, np.uint8, n_off, _HEADER.size + n_values).copy()
    return NmSparseWeights(pattern, geometry, values, offsets, layout)


def save_weights(sparse: NmSparseWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(sparse))


def load_weights(path) -> NmSparseWeights:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())
