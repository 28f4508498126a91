"""3D residual backbone with CBAM attention, shared across timepoints."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv3d, Linear, Module
from .tensor import Tensor


@dataclass
class BackboneConfig:
    stage_channels: list[int] = field(default_factory=lambda: [8, 16, 32])
    blocks_per_stage: int = 1
    cbam_reduction: int = 4
    spatial_kernel: int = 7
    input_shape: tuple[int, int, int] = (8, 16, 16)

    def __post_init__(self):
        self.stage_channels = [int(c) for c in self.stage_channels]
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.validate()

    def validate(self) -> None:
        if not self.stage_channels or min(self.stage_channels) < 1:
            raise ValueError(f"stage_channels must be a non-empty list of positive ints, got {self.stage_channels}")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if self.cbam_reduction < 1 or any(c // self.cbam_reduction < 1 for c in self.stage_channels):
            raise ValueError(f"cbam_reduction {self.cbam_reduction} reduces a stage of {self.stage_channels} below 1")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ValueError(f"spatial_kernel must be a positive odd int, got {self.spatial_kernel}")
        if len(self.input_shape) != 3:
            raise ValueError(f"input_shape must be (D, H, W), got {self.input_shape}")
        factor = 2 ** len(self.stage_channels)
        for extent in self.input_shape:
            if extent < factor or extent % factor:
                raise ValueError(f"input_shape {self.input_shape} cannot be halved {len(self.stage_channels)} "
                                 f"times without reaching zero or a fractional extent")

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    def output_shape(self) -> tuple[int, int, int, int]:
        """(C, D', H', W') of the features for one volume."""
        factor = 2 ** len(self.stage_channels)
        d, h, w = (s // factor for s in self.input_shape)
        return (self.out_channels, d, h, w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


class ChannelAttention(Module):
    """sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))) with one shared two-layer MLP."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        if channels < reduction:
            raise ValueError(f"channel attention needs channels >= reduction, got {channels} < {reduction}")
        hidden = channels // reduction
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def mlp(self, pooled: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(pooled)))

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        avg = T.reshape(T.global_pool3d(x, "avg"), (n, c))
        mx = T.reshape(T.global_pool3d(x, "max"), (n, c))
        gate = T.sigmoid(self.mlp(avg) + self.mlp(mx))
        return T.reshape(gate, (n, c, 1, 1, 1))


class SpatialAttention(Module):
    """sigmoid(conv(concat(channel mean, channel max))) with 'same' padding."""

    def __init__(self, kernel: int, rng: np.random.Generator):
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError(f"spatial attention kernel must be odd, got {kernel}")
        self.conv = Conv3d(2, 1, kernel, rng, padding=(kernel - 1) // 2)

    def forward(self, x: Tensor) -> Tensor:
        pooled = T.concat([T.mean(x, axis=1, keepdims=True), T.max_(x, axis=1, keepdims=True)], axis=1)
        return T.sigmoid(self.conv(pooled))


class CBAM(Module):
    def __init__(self, channels: int, reduction: int, kernel: int, rng: np.random.Generator):
        self.channel = ChannelAttention(channels, reduction, rng)
        self.spatial = SpatialAttention(kernel, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x * self.channel(x)
        return x * self.spatial(x)


class ResidualBlock(Module):
    """relu(conv(relu(conv(x))) + shortcut(x)); 1x1x1 projection when widths differ."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.conv1 = Conv3d(in_channels, out_channels, 3, rng, padding=1)
        self.conv2 = Conv3d(out_channels, out_channels, 3, rng, padding=1)
        self.proj = Conv3d(in_channels, out_channels, 1, rng) if in_channels != out_channels else None

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(T.relu(self.conv1(x)))
        shortcut = self.proj(x) if self.proj is not None else x
        return T.relu(h + shortcut)


class Stage(Module):
    def __init__(self, in_channels: int, channels: int, config: BackboneConfig, rng: np.random.Generator):
        self.blocks = []
        self.attention = []
        for i in range(config.blocks_per_stage):
            self.blocks.append(ResidualBlock(in_channels if i == 0 else channels, channels, rng))
            self.attention.append(CBAM(channels, config.cbam_reduction, config.spatial_kernel, rng))
        self.down = Conv3d(channels, channels, 3, rng, stride=2, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        for block, cbam in zip(self.blocks, self.attention):
            x = cbam(block(x))
        return T.relu(self.down(x))


class SpatialExtractor(Module):
    """Maps a [N, 1, D, H, W] volume to a [N, C, D/2^k, H/2^k, W/2^k] feature map."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        chans = config.stage_channels
        self.stem = Conv3d(1, chans[0], 3, rng, padding=1)
        self.stages = []
        prev = chans[0]
        for c in chans:
            self.stages.append(Stage(prev, c, config, rng))
            prev = c

    def forward(self, volume: Tensor) -> Tensor:
        if volume.ndim != 5 or volume.shape[1] != 1 or tuple(volume.shape[2:]) != self.config.input_shape:
            raise ValueError(f"expected volume [N, 1, {', '.join(map(str, self.config.input_shape))}], "
                             f"got {list(volume.shape)}")
        x = T.relu(self.stem(volume))
        for stage in self.stages:
            x = stage(x)
        return x


def extract(volume: Tensor, extractor: SpatialExtractor) -> Tensor:
    return extractor(volume)
