"""Sparsity-aware tiling and storage planning.

Bridges the compressed format to a tiling compiler: recognize which 1:M
pattern a dense tensor satisfies, size L1 tiles using storage bits per
dense-equivalent weight (e.g. 1:4 replicated = 12 bits per NZ = 3 bits per
dense weight), and emit the interleaved L2 layout where each K-tile's
values are immediately followed by its packed offsets so one contiguous
transfer carries both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .formats import (
    Layout, DenseWeights, NmSparseWeights, SparsityPattern,
    kernel_offsets_image, kernel_offsets_run_bytes, kernel_values_image,
    offsets_run_bytes, pack_offset_fields, padded_block_count,
    padded_blocks, unpack_offset_fields,
)
from .geometry import CONV, LayerGeometry

L1_BUDGET_DEFAULT = 128 * 1024


class InfeasibleTilingError(ValueError):
    def __init__(self, message: str, min_bytes: int):
        super().__init__(message)
        self.min_bytes = min_bytes


@dataclass(frozen=True)
class TileConfig:
    """One L1 tiling choice plus its recomputed memory use."""

    tile_k: int
    tile_oy: int
    tile_ox: int
    tile_c: int
    l1_bytes_used: int
    n_tiles_k: int
    n_tiles_oy: int
    n_tiles_ox: int
    l1_budget: int
    double_buffer: bool

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass(frozen=True)
class StorageSegment:
    """One K-tile's byte ranges inside the interleaved image."""

    k_start: int
    k_stop: int
    values_start: int
    values_stop: int
    offsets_start: int
    offsets_stop: int


@dataclass(frozen=True)
class StoragePlan:
    """Ordered, contiguous, non-overlapping segments covering the tensor."""

    segments: tuple
    total_bytes: int
    layout: Layout

    def to_json(self) -> str:
        return json.dumps({
            "layout": int(self.layout),
            "total_bytes": self.total_bytes,
            "segments": [s.__dict__ for s in self.segments],
        }, sort_keys=True)


def recognize_pattern(dense: DenseWeights) -> SparsityPattern | None:
    """Tightest 1:M pattern (largest M) the tensor satisfies, or None.

    A block is conforming when it holds at most one non-zero; trailing
    partial blocks are checked as zero-padded.
    """
    data = dense.data
    for m in (16, 8, 4):
        pat = SparsityPattern(1, m)
        b = pat.blocks(dense.geometry.reduction_dim)
        padded = np.zeros((dense.geometry.k, b * m), dtype=np.int8)
        padded[:, : dense.geometry.reduction_dim] = data
        counts = (padded.reshape(dense.geometry.k, b, m) != 0).sum(axis=2)
        if counts.size == 0 or counts.max() <= 1:
            return pat
    return None


def default_k_granule(geometry: LayerGeometry, pattern: SparsityPattern | None,
                      layout: Layout) -> int:
    """Channel-tiling granule of the kernel that will consume the tile."""
    if pattern is None:
        return 4 if geometry.kind == CONV else 2
    return 2 if layout == Layout.INTERLEAVED else 1


def weight_tile_bytes(geometry: LayerGeometry, pattern: SparsityPattern | None,
                      layout: Layout, tile_k: int, tile_c: int) -> int:
    """Weight storage (values plus packed indices) for one tile, from the
    bits-per-dense-weight arithmetic."""
    dense_weights = tile_k * geometry.fx * geometry.fy * tile_c
    if pattern is None:
        return dense_weights
    dup = 2 if layout == Layout.REPLICATED else 1
    bits_per_nz = 8 + pattern.offset_bits * dup
    return -(-dense_weights * bits_per_nz // (pattern.m * 8))


def _l1_usage(geometry: LayerGeometry, pattern, layout, tile_k: int,
              tile_oy: int, tile_ox: int, n_cores: int, double_buffer: bool) -> int:
    g = geometry
    if g.kind == CONV:
        rows_in = min((tile_oy - 1) * g.s + g.fy, g.iy)
        cols_in = min((tile_ox - 1) * g.s + g.fx, g.ix)
        in_bytes = rows_in * cols_in * g.c
        out_bytes = tile_oy * tile_ox * tile_k
        im2col = g.fx * g.fy * g.c * 2 * n_cores
    else:
        in_bytes = g.c
        out_bytes = tile_k
        im2col = 0
    w_bytes = weight_tile_bytes(g, pattern, layout, tile_k, g.c)
    bias_bytes = 4 * tile_k
    streamed = in_bytes + out_bytes + w_bytes + bias_bytes
    return streamed * (2 if double_buffer else 1) + im2col


def plan_tiles(geometry: LayerGeometry, pattern: SparsityPattern | None = None,
               layout: Layout = Layout.PLAIN, l1_budget: int = L1_BUDGET_DEFAULT,
               n_cores: int = 8, double_buffer: bool = True,
               k_granule: int | None = None) -> TileConfig:
    """Greedy deterministic tile search: maximize tile_k first (weights are
    reused across every output position), then the spatial row extent.

    The minimal tile is one output row with one channel group and the full
    reduction dim; if that misses the budget the layer cannot be tiled and
    the minimal requirement is reported.
    """
    g = geometry
    granule = k_granule or default_k_granule(g, pattern, layout)
    min_k = min(granule, g.k) or 1

    def usage(tk, ty):
        return _l1_usage(g, pattern, layout, tk, ty, g.ox, n_cores, double_buffer)

    min_need = usage(min_k, 1)
    if min_need > l1_budget:
        raise InfeasibleTilingError(
            f"minimal tile needs {min_need} bytes, budget is {l1_budget}", min_need)

    tile_k = min_k
    for tk in range(g.k, min_k, -1):
        if tk % granule == 0 or tk == g.k:
            if usage(tk, 1) <= l1_budget:
                tile_k = tk
                break
    tile_oy = 1
    for ty in range(g.oy, 1, -1):
        if usage(tile_k, ty) <= l1_budget:
            tile_oy = ty
            break
    return TileConfig(
        tile_k=tile_k, tile_oy=tile_oy, tile_ox=g.ox, tile_c=g.c,
        l1_bytes_used=usage(tile_k, tile_oy),
        n_tiles_k=-(-g.k // tile_k) if g.k else 0,
        n_tiles_oy=-(-g.oy // tile_oy), n_tiles_ox=1,
        l1_budget=l1_budget, double_buffer=double_buffer,
    )


def layout_interleaved(sparse: NmSparseWeights, tiles: TileConfig):
    """Build the interleaved transfer image: per K-tile, that tile's value
    bytes immediately followed by its packed offset bytes, in the padded
    per-channel form the kernels consume.

    Returns (StoragePlan, image bytes); read_back reconstructs the tensor.
    """
    g = sparse.geometry
    tk = tiles.tile_k
    if tk < 1:
        raise ValueError("tile_k must be >= 1")
    if sparse.layout == Layout.INTERLEAVED and tk % 2:
        raise ValueError("interleaved offsets tile on channel pairs; tile_k must be even")
    bg = padded_blocks(sparse)
    run = kernel_offsets_run_bytes(sparse)
    values = kernel_values_image(sparse)
    offsets = kernel_offsets_image(sparse)
    per_pair = sparse.layout == Layout.INTERLEAVED
    segments = []
    image = bytearray()
    for k0 in range(0, g.k, tk):
        k1 = min(k0 + tk, g.k)
        v = values[k0 * bg: k1 * bg]
        o0, o1 = (k0 // 2, -(-k1 // 2)) if per_pair else (k0, k1)
        o = offsets[o0 * run: o1 * run]
        vs = len(image)
        image += v
        os_ = len(image)
        image += o
        segments.append(StorageSegment(k0, k1, vs, vs + len(v), os_, os_ + len(o)))
    plan = StoragePlan(tuple(segments), len(image), sparse.layout)
    return plan, bytes(image)


def read_back(plan: StoragePlan, image: bytes, pattern: SparsityPattern,
              geometry: LayerGeometry) -> NmSparseWeights:
    """Reconstruct the compressed tensor from an interleaved image."""
    b = pattern.blocks(geometry.reduction_dim)
    bg = padded_block_count(b, plan.layout, pattern.m)
    run = offsets_run_bytes(b, plan.layout, pattern)
    dup = 2 if plan.layout == Layout.REPLICATED else 1
    values = np.zeros((geometry.k, b), dtype=np.int8)
    fields = np.zeros(geometry.k * b * dup, dtype=np.uint8)
    fields_per_run = run * 8 // pattern.offset_bits
    for seg in plan.segments:
        v = np.frombuffer(image[seg.values_start: seg.values_stop], np.int8)
        values[seg.k_start: seg.k_stop] = v.reshape(-1, bg)[:, :b]
        raw = np.frombuffer(image[seg.offsets_start: seg.offsets_stop], np.uint8)
        runs = raw.reshape(-1, run)
        if plan.layout == Layout.INTERLEAVED:
            for i, row in enumerate(runs):
                pair = seg.k_start // 2 + i
                got = unpack_offset_fields(row, fields_per_run, pattern.offset_bits)
                fields[pair * 2 * b: (pair + 1) * 2 * b] = got[: 2 * b]
        else:
            for i, row in enumerate(runs):
                k = seg.k_start + i
                got = unpack_offset_fields(row, fields_per_run, pattern.offset_bits)
                fields[k * b * dup: (k + 1) * b * dup] = got[: b * dup]
    packed = pack_offset_fields(fields, pattern.offset_bits)
    return NmSparseWeights(pattern, geometry, values, packed, plan.layout)
