"""Two-stream residual backbone and the five-scale fused pyramid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import AMF, FusionVariant
from .errors import ConfigError, ShapeError
from .nn import ConvBNReLU, Module, ModuleList
from .ops import ConvSpec
from .tensor import Tensor

NUM_SCALES = 5
STRIDES = (2, 4, 8, 16, 32)


@dataclass(frozen=True)
class BackboneConfig:
    """Widths and depths of the five stages (strides 2, 4, 8, 16, 32).

    Stage 0 is a strided 3x3 stem followed by ``blocks_per_stage[0]`` identity
    bottlenecks; every later stage opens with a strided bottleneck carrying a
    projection shortcut, as in the ResNet-50 family.
    """

    stage_channels: tuple = (16, 32, 64, 128, 256)
    blocks_per_stage: tuple = (1, 1, 1, 1, 1)
    bottleneck_ratio: int = 4

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        if len(self.stage_channels) != NUM_SCALES or len(self.blocks_per_stage) != NUM_SCALES:
            raise ConfigError(f"backbone needs exactly {NUM_SCALES} stages")
        if min(self.stage_channels) < 1 or min(self.blocks_per_stage) < 1:
            raise ConfigError("stage channels and block counts must be positive")
        if self.bottleneck_ratio < 1:
            raise ConfigError("bottleneck_ratio must be >= 1")


class Bottleneck(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, ratio: int, dtype=np.float32):
        super().__init__()
        mid = max(1, out_ch // ratio)
        self.reduce = ConvBNReLU(ConvSpec(in_ch, mid), dtype=dtype)
        self.spatial = ConvBNReLU(ConvSpec(mid, mid, 3, stride, 1), dtype=dtype)
        self.expand = ConvBNReLU(ConvSpec(mid, out_ch), relu=False, dtype=dtype)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = ConvBNReLU(ConvSpec(in_ch, out_ch, 1, stride), relu=False, dtype=dtype)
        else:
            self.shortcut = None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = self.expand(self.spatial(self.reduce(x, training), training), training)
        skip = x if self.shortcut is None else self.shortcut(x, training)
        return ops.relu(ops.add(y, skip))


class Backbone(Module):
    def __init__(self, in_channels: int, config: BackboneConfig, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.config = config
        ch = config.stage_channels
        ratio = config.bottleneck_ratio
        self.stem = ConvBNReLU(ConvSpec(in_channels, ch[0], 3, 2, 1), dtype=dtype)
        self.stages = ModuleList()
        for k in range(NUM_SCALES):
            blocks = ModuleList()
            for b in range(config.blocks_per_stage[k]):
                first = b == 0 and k > 0
                blocks.append(Bottleneck(ch[k - 1] if first else ch[k], ch[k], 2 if first else 1, ratio, dtype))
            self.stages.append(blocks)

    def __call__(self, image: Tensor, training: bool = True) -> list[Tensor]:
        return backbone_forward(image, self, training)


def check_spatial(h: int, w: int) -> None:
    if h % 32 or w % 32:
        raise ConfigError(f"input spatial size {h}x{w} must be divisible by 32")


def backbone_forward(image: Tensor, params: Backbone, training: bool = True) -> list[Tensor]:
    """Features at strides 2, 4, 8, 16 and 32."""
    if image.ndim != 4 or image.shape[1] != params.in_channels:
        raise ShapeError(f"backbone expects N x {params.in_channels} x H x W, got {image.shape}")
    check_spatial(*image.shape[2:])
    x = params.stem(image, training)
    feats = []
    for blocks in params.stages:
        for block in blocks:
            x = block(x, training)
        feats.append(x)
    return feats


@dataclass
class FusedPyramid:
    """Fuse0..Fuse4, finest first."""

    fuse: list
    rgb_features: list = field(default_factory=list, repr=False)
    depth_features: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.fuse)

    def __getitem__(self, k) -> Tensor:
        return self.fuse[k]


class Encoder(Module):
    def __init__(self, config: BackboneConfig, variant, reduction: int = 4,
                 attention_after_sum: bool = False, rgb_channels: int = 3,
                 depth_channels: int = 1, dtype=np.float32):
        super().__init__()
        self.config = config
        self.variant = FusionVariant.parse(variant)
        self.rgb = Backbone(rgb_channels, config, dtype)
        self.depth = Backbone(depth_channels, config, dtype)
        self.fusion = ModuleList(
            AMF(c, self.variant, reduction, attention_after_sum, dtype) for c in config.stage_channels
        )

    def __call__(self, rgb: Tensor, depth: Tensor, training: bool = True) -> FusedPyramid:
        return encode(rgb, depth, self, training)


def encode(rgb: Tensor, depth: Tensor, params: Encoder, training: bool = True) -> FusedPyramid:
    if rgb.ndim != 4 or depth.ndim != 4:
        raise ShapeError(f"encode expects NCHW inputs, got {rgb.shape} and {depth.shape}")
    if rgb.shape[0] != depth.shape[0] or rgb.shape[2:] != depth.shape[2:]:
        raise ShapeError(f"rgb {rgb.shape} and depth {depth.shape} are not aligned")
    rgb_feats = backbone_forward(rgb, params.rgb, training)
    depth_feats = backbone_forward(depth, params.depth, training)
    fused = [amf(r, d) for amf, r, d in zip(params.fusion, rgb_feats, depth_feats)]
    return FusedPyramid(fused, rgb_feats, depth_feats)
