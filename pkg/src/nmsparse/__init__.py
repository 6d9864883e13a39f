"""nmsparse: N:M sparse int8 inference kernels for multicore MCUs.

Desk-scale, bit-faithful model of an N:M (1:4, 1:8, 1:16) sparse inference
stack: the compressed weight format, dense and sparse conv/FC kernels
executed on an instruction-counting core emulator with a decimate-load ISA
extension, sparsity-aware L1 tiling, and a benchmark harness.
"""

from .emulator import CoreState, HwLoop, Instr, run_trace
from .formats import (
    DenseWeights, FootprintReport, Layout, NmSparseWeights, SparsityPattern,
    compress_nm, decompress_nm, extract_offset, footprint_coo, footprint_csr,
    footprint_nm, interleave_offsets_fc, load_weights, replicate_offsets,
    save_weights,
)
from .geometry import LayerGeometry
from .kernels import (
    CostReport, QuantParams, conv_dense_1x2, conv_dense_4x2, conv_reference,
    conv_sparse_isa, conv_sparse_sw, fc_dense, fc_reference, fc_sparse_isa,
    fc_sparse_sw, im2col_partial, parallelize,
)
from .tiler import StoragePlan, TileConfig, layout_interleaved, plan_tiles, recognize_pattern

__version__ = "0.1.0"
