"""Pure functional references for every kernel, numpy int arithmetic only.

These compute the same math as the emulated traces (including the shared
requantization stage) without touching the emulator, so trace outputs can
be checked bit-for-bit against them.
"""

from __future__ import annotations

import numpy as np

from ..formats import DenseWeights
from ..geometry import CONV, LayerGeometry
from .common import QuantParams, requantize
from .im2col import im2col_patch


def conv_reference(inp: np.ndarray, weights: DenseWeights, quant: QuantParams) -> np.ndarray:
    """Direct convolution over gathered receptive fields, int8 HWC output."""
    g = weights.geometry
    if g.kind != CONV:
        raise ValueError("conv_reference needs a conv geometry")
    if inp.shape != (g.iy, g.ix, g.c) or inp.dtype != np.int8:
        raise ValueError(f"input must be int8 of shape {(g.iy, g.ix, g.c)}")
    patches = np.stack([
        im2col_patch(inp, g, oy, ox)
        for oy in range(g.oy) for ox in range(g.ox)
    ]).astype(np.int64)
    acc = patches @ weights.data.astype(np.int64).T
    acc += quant.bias_vector(g.k).astype(np.int64)
    return requantize(acc, quant.shift).reshape(g.oy, g.ox, g.k)


def fc_reference(inp: np.ndarray, weights: DenseWeights, quant: QuantParams) -> np.ndarray:
    """Matrix-vector product with the shared requantization, int8 output."""
    g = weights.geometry
    if inp.shape != (g.c,) or inp.dtype != np.int8:
        raise ValueError(f"input must be int8 of shape ({g.c},)")
    acc = weights.data.astype(np.int64) @ inp.astype(np.int64)
    acc += quant.bias_vector(g.k).astype(np.int64)
    return requantize(acc, quant.shift)
