"""Dual-branch decoder: primary segmentation branch with pyramid side outputs
and ASPP, plus a task-guided secondary branch used only in training.

Both branches share the same upsampling recurrence over fuse levels
j = 4..0::

    x_j = W_j(Fuse_j)            (1x1 projection to the decoder width)
    x_j = S_{j+1} + x_j          (j < 4; element-wise sum at equal stride)
    S_j = B_U(x_j)               (transposed conv, spatial x2)

so ``S_j`` sits at stride ``2**j``: S_4..S_1 are the side outputs at strides
16..2 and S_0 is full resolution. The primary branch inserts ASPP on ``x_j``
at the configured level (Fuse0 by default) before upsampling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .encoder import NUM_SCALES, FusedPyramid
from .errors import ConfigError, ShapeError
from .nn import Conv2d, ConvBNReLU, Module, ModuleList
from .ops import ConvSpec
from .tensor import Tensor

MAX_SIDE_OUTPUTS = 4


class TaskKind(str, enum.Enum):
    SEMANTIC = "semantic"
    DEPTH = "depth"
    NORMAL = "normal"

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown task head {value!r}; choose from {[k.value for k in cls]}") from None


@dataclass(frozen=True)
class TaskHead:
    kind: TaskKind
    num_classes: int

    @property
    def out_channels(self) -> int:
        return {TaskKind.SEMANTIC: self.num_classes, TaskKind.DEPTH: 1, TaskKind.NORMAL: 3}[self.kind]


@dataclass(frozen=True)
class ASPPConfig:
    rates: tuple = (2, 4, 6)
    branch_channels: int = 32
    include_1x1: bool = True
    image_pooling: bool = True

    def __post_init__(self):
        rates = tuple(int(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if not rates or rates[0] < 1 or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError(f"ASPP rates must be strictly increasing and >= 1, got {rates}")
        if self.branch_channels < 1:
            raise ConfigError("ASPP branch_channels must be positive")

    @property
    def num_branches(self) -> int:
        return len(self.rates) + int(self.include_1x1) + int(self.image_pooling)


class ASPP(Module):
    def __init__(self, in_channels: int, out_channels: int, config: ASPPConfig, dtype=np.float32):
        super().__init__()
        self.config = config
        bc = config.branch_channels
        self.pointwise = ConvBNReLU(ConvSpec(in_channels, bc), dtype=dtype) if config.include_1x1 else None
        self.atrous = ModuleList(ConvBNReLU(ConvSpec.same(in_channels, bc, 3, r), dtype=dtype)
                                 for r in config.rates)
        # No batch norm on the pooled branch: its statistics would come from
        # one value per sample.
        self.pooling = Conv2d(ConvSpec(in_channels, bc), bias=True, dtype=dtype) if config.image_pooling else None
        self.project = ConvBNReLU(ConvSpec(config.num_branches * bc, out_channels), dtype=dtype)

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        return aspp_forward(x, self, training)


def aspp_forward(x: Tensor, params: ASPP, training: bool = True) -> Tensor:
    """Parallel dilated branches, concatenated and projected; keeps H x W."""
    h, w = x.shape[2:]
    if params.config.rates[-1] >= min(h, w):
        raise ConfigError(f"ASPP rate {params.config.rates[-1]} too large for a {h}x{w} input")
    branches = []
    if params.pointwise is not None:
        branches.append(params.pointwise(x, training))
    branches.extend(conv(x, training) for conv in params.atrous)
    if params.pooling is not None:
        pooled = ops.relu(params.pooling(ops.global_avg_pool(x)))
        branches.append(ops.expand_spatial(pooled, h, w))
    return params.project(ops.concat(branches, axis=1), training)


class UpsampleBlock(Module):
    """1x1 projection of a fused level plus the x2 transposed-conv block B_U."""

    def __init__(self, in_channels: int, width: int, dtype=np.float32):
        super().__init__()
        self.project = ConvBNReLU(ConvSpec(in_channels, width), dtype=dtype)
        self.up = ConvBNReLU(ConvSpec(width, width, 2, 2, 0), transposed=True, dtype=dtype)


def _upsample_chain(pyramid: FusedPyramid, blocks: ModuleList, training: bool,
                    aspp: Optional[ASPP] = None, aspp_level: int = 0) -> list[Tensor]:
    """Return S_0..S_4 (S_j at stride 2**j)."""
    if len(pyramid) != NUM_SCALES:
        raise ShapeError(f"expected {NUM_SCALES} fused levels, got {len(pyramid)}")
    s: list[Optional[Tensor]] = [None] * NUM_SCALES
    prev = None
    for j in range(NUM_SCALES - 1, -1, -1):
        x = blocks[j].project(pyramid[j], training)
        if prev is not None:
            if prev.shape != x.shape:
                raise ConfigError(f"cannot sum S_{j + 1} {prev.shape} with projected Fuse{j} {x.shape}")
            x = ops.add(prev, x)
        if aspp is not None and j == aspp_level:
            x = aspp(x, training)
        prev = blocks[j].up(x, training)
        s[j] = prev
    return s


class PrimaryDecoder(Module):
    def __init__(self, stage_channels, num_classes: int, width: int = 64,
                 aspp: ASPPConfig = ASPPConfig(), aspp_level: int = 0,
                 num_side_outputs: int = MAX_SIDE_OUTPUTS, dtype=np.float32):
        super().__init__()
        if not 0 <= aspp_level < NUM_SCALES:
            raise ConfigError(f"aspp_level must be in [0, {NUM_SCALES}), got {aspp_level}")
        if not 0 <= num_side_outputs <= MAX_SIDE_OUTPUTS:
            raise ConfigError(f"number of side outputs must be in [0, {MAX_SIDE_OUTPUTS}]")
        self.num_classes = num_classes
        self.aspp_level = aspp_level
        self.blocks = ModuleList(UpsampleBlock(c, width, dtype) for c in stage_channels)
        self.aspp = ASPP(width, width, aspp, dtype)
        self.side = ModuleList(Conv2d(ConvSpec(width, num_classes), dtype=dtype)
                               for _ in range(num_side_outputs))
        self.classifier = Conv2d(ConvSpec(width, num_classes), dtype=dtype)

    def __call__(self, pyramid: FusedPyramid, training: bool = True):
        return primary_decode(pyramid, self, training)


def primary_decode(pyramid: FusedPyramid, params: PrimaryDecoder, training: bool = True):
    """Full-resolution logits and side score maps at strides 2, 4, 8, 16."""
    s = _upsample_chain(pyramid, params.blocks, training, params.aspp, params.aspp_level)
    sides = [head(s[k + 1]) for k, head in enumerate(params.side)]
    return params.classifier(s[0]), sides


class SecondaryDecoder(Module):
    def __init__(self, stage_channels, head: TaskHead, width: int = 64, dtype=np.float32):
        super().__init__()
        self.width = width
        self.dtype = dtype
        self.blocks = ModuleList(UpsampleBlock(c, width, dtype) for c in stage_channels)
        self.set_head(head)

    def set_head(self, head: TaskHead) -> None:
        self.task = head
        self.head = Conv2d(ConvSpec(self.width, head.out_channels), dtype=self.dtype)

    def __call__(self, pyramid: FusedPyramid, training: bool = True) -> Tensor:
        return secondary_decode(pyramid, self, training)


def secondary_decode(pyramid: FusedPyramid, params: SecondaryDecoder, training: bool = True) -> Tensor:
    s = _upsample_chain(pyramid, params.blocks, training)
    return params.head(s[0])


@dataclass
class DecoderOutput:
    final_logits: Tensor
    side_outputs: list = field(default_factory=list)
    secondary_pred: Optional[Tensor] = None
