"""Layer hyper-parameter records shared by every module.

A single LayerGeometry describes either a convolution (spatial dims plus
filter/padding/stride) or a fully-connected layer (C input features, K
output features, all spatial dims forced to 1). Weight-only operations
(format packing, footprint math) only consume K/FX/FY/C; the remaining
fields exist so kernels and the tiler can be driven from the same record.
"""

from __future__ import annotations

from dataclasses import dataclass

CONV = "conv"
FC = "fc"


@dataclass(frozen=True)
class LayerGeometry:
    """Shape record for one layer.

    Conv output dims satisfy OX = (IX + 2P - FX) / S + 1 (same for OY);
    the constructor checks exact divisibility so the relation is an
    equality, not a floor.
    """

    kind: str
    ix: int
    iy: int
    c: int
    ox: int
    oy: int
    k: int
    fx: int
    fy: int
    p: int
    s: int

    def __post_init__(self):
        if self.kind not in (CONV, FC):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(self.ix, self.iy, self.c, self.ox, self.oy, self.fx, self.fy) < 1:
            raise ValueError("all dimensions except K must be >= 1")
        # K = 0 is tolerated so degenerate (empty) weight tensors round-trip.
        if self.k < 0 or self.p < 0 or self.s < 1:
            raise ValueError("invalid K/P/S")
        if self.kind == CONV:
            if (self.ix + 2 * self.p - self.fx) % self.s or (self.iy + 2 * self.p - self.fy) % self.s:
                raise ValueError("IX/IY, FX/FY, P, S must tile exactly")
            if self.ox != (self.ix + 2 * self.p - self.fx) // self.s + 1:
                raise ValueError("OX inconsistent with IX/FX/P/S")
            if self.oy != (self.iy + 2 * self.p - self.fy) // self.s + 1:
                raise ValueError("OY inconsistent with IY/FY/P/S")
        else:
            if (self.ix, self.iy, self.ox, self.oy, self.fx, self.fy) != (1, 1, 1, 1, 1, 1):
                raise ValueError("FC layers use spatial dims == 1")
            if (self.p, self.s) != (0, 1):
                raise ValueError("FC layers use P=0, S=1")

    @staticmethod
    def conv(ix: int, iy: int, c: int, k: int, fx: int, fy: int, p: int = 0, s: int = 1) -> "LayerGeometry":
        ox = (ix + 2 * p - fx) // s + 1
        oy = (iy + 2 * p - fy) // s + 1
        return LayerGeometry(CONV, ix, iy, c, ox, oy, k, fx, fy, p, s)

    @staticmethod
    def fc(c: int, k: int) -> "LayerGeometry":
        return LayerGeometry(FC, 1, 1, c, 1, 1, k, 1, 1, 0, 1)

    @staticmethod
    def from_weight_shape(k: int, fx: int, fy: int, c: int) -> "LayerGeometry":
        """Minimal geometry for weight-only work (e.g. loading a weight file).

        Spatial extents are placeholders (single output position, no padding).
        """
        if fx == 1 and fy == 1:
            return LayerGeometry.fc(c, k) if c >= 1 else LayerGeometry.fc(1, k)
        return LayerGeometry.conv(fx, fy, c, k, fx, fy, p=0, s=1)

    @property
    def reduction_dim(self) -> int:
        """FX*FY*C, the length of one flattened filter row."""
        return self.fx * self.fy * self.c

    @property
    def n_positions(self) -> int:
        return self.ox * self.oy

    def macs_dense(self) -> int:
        """MAC count of the unpruned layer."""
        return self.n_positions * self.k * self.reduction_dim
