"""Kernel library: emulator trace generators plus functional references."""

from .common import (
    INNER_WINDOWS, PEAK_EFFECTIVE_2DP, CostReport, QuantParams,
    parallelize, peak_dense_equiv, peak_effective, requantize, split_ranges,
)
from .conv import conv_dense_1x2, conv_dense_4x2, conv_sparse_isa, conv_sparse_sw
from .fc import fc_dense, fc_sparse_isa, fc_sparse_sw
from .im2col import Im2colBuffer, im2col_partial, im2col_patch
from .reference import conv_reference, fc_reference

__all__ = [
    "INNER_WINDOWS", "PEAK_EFFECTIVE_2DP", "CostReport", "QuantParams",
    "parallelize", "peak_dense_equiv", "peak_effective", "requantize",
    "split_ranges", "conv_dense_1x2", "conv_dense_4x2", "conv_sparse_isa",
    "conv_sparse_sw", "fc_dense", "fc_sparse_isa", "fc_sparse_sw",
    "Im2colBuffer", "im2col_partial", "im2col_patch", "conv_reference",
    "fc_reference",
]
