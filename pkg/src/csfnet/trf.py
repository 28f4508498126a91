"""Temporal residual fusion of the two timepoint feature maps.

    refined = Conv3D(AvgPool(Upsample(t0 ++ t1)))
    fused   = sigmoid(lambda0) * refined + sigmoid(lambda1) * t1
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv3d, Module
from .tensor import Parameter, Tensor, get_default_dtype


class TemporalResidualFusion(Module):
    def __init__(self, channels: int, rng: np.random.Generator, upsample_factor: int = 2, pool_kernel: int = 2):
        if upsample_factor < 1 or pool_kernel < 1:
            raise ValueError("upsample_factor and pool_kernel must be >= 1")
        self.channels = channels
        self.upsample_factor = upsample_factor
        self.pool_kernel = pool_kernel
        self.fuse_conv = Conv3d(2 * channels, channels, 3, rng, padding=1)
        self.lambda0 = Parameter(np.zeros(1, dtype=get_default_dtype()))
        self.lambda1 = Parameter(np.zeros(1, dtype=get_default_dtype()))

    def refine(self, t0: Tensor, t1: Tensor) -> Tensor:
        if t0.shape != t1.shape:
            raise ValueError(f"timepoint features differ in shape: t0 {t0.shape} vs t1 {t1.shape}")
        if t0.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {t0.shape[1]}")
        x = T.concat([t0, t1], axis=1)
        x = T.upsample3d(x, self.upsample_factor)
        x = T.pool3d(x, "avg", self.pool_kernel, self.pool_kernel)
        return self.fuse_conv(x)

    def fuse(self, refined: Tensor, t1: Tensor) -> Tensor:
        if refined.shape != t1.shape:
            raise ValueError(f"refined features {refined.shape} and t1 {t1.shape} differ in shape")
        return T.sigmoid(self.lambda0) * refined + T.sigmoid(self.lambda1) * t1

    def gates(self) -> tuple[float, float]:
        s = lambda v: float(1.0 / (1.0 + np.exp(-float(v.data[0]))))
        return s(self.lambda0), s(self.lambda1)

    def forward(self, t0: Tensor, t1: Tensor) -> Tensor:
        return self.fuse(self.refine(t0, t1), t1)


def trf_refine(t0: Tensor, t1: Tensor, params: TemporalResidualFusion) -> Tensor:
    return params.refine(t0, t1)


def trf_fuse(f_feat: Tensor, t1: Tensor, params: TemporalResidualFusion) -> Tensor:
    return params.fuse(f_feat, t1)
