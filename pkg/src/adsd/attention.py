"""Channel attention, spatial attention and the per-scale RGB/depth fusion (AMF)."""

from __future__ import annotations

import enum

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import Conv2d, Module
from .ops import ConvSpec
from .tensor import Tensor


class FusionVariant(str, enum.Enum):
    SUMMATION = "summation"
    CHANNEL_ATTENTION = "channel_attention"
    SPATIAL_ATTENTION = "spatial_attention"

    @classmethod
    def parse(cls, value) -> "FusionVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown fusion variant {value!r}; choose from "
                              f"{[v.value for v in cls]}") from None


class ChannelAttentionParams(Module):
    """Bottleneck of two 1x1 convolutions: C -> C/r -> C."""

    def __init__(self, channels: int, reduction: int = 4, dtype=np.float32):
        super().__init__()
        if reduction < 1 or channels % reduction != 0:
            raise ConfigError(f"reduction ratio {reduction} must divide channel count {channels}")
        hidden = channels // reduction
        self.channels = channels
        self.reduce = Conv2d(ConvSpec(channels, hidden), bias=True, dtype=dtype)
        self.expand = Conv2d(ConvSpec(hidden, channels), bias=True, dtype=dtype)


class SpatialAttentionParams(Module):
    """1x1 projection of C channels onto a single gate channel."""

    def __init__(self, channels: int, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.project = Conv2d(ConvSpec(channels, 1), bias=True, dtype=dtype)


def channel_gate(u: Tensor, params: ChannelAttentionParams) -> Tensor:
    """sigmoid(W2 relu(W1 avgpool(u))), shape (N, C, 1, 1)."""
    z = ops.global_avg_pool(u)
    return ops.sigmoid(params.expand(ops.relu(params.reduce(z))))


def channel_attention(u: Tensor, params: ChannelAttentionParams) -> Tensor:
    if u.shape[1] != params.channels:
        raise ShapeError(f"channel attention built for {params.channels} channels, got {u.shape}")
    return ops.mul_channelwise(u, channel_gate(u, params))


def spatial_gate(u: Tensor, params: SpatialAttentionParams) -> Tensor:
    """sigmoid of the 1x1 projection, shape (N, 1, H, W)."""
    return ops.sigmoid(params.project(u))


def spatial_attention(u: Tensor, params: SpatialAttentionParams) -> Tensor:
    if u.shape[1] != params.channels:
        raise ShapeError(f"spatial attention built for {params.channels} channels, got {u.shape}")
    return ops.mul_pixelwise(u, spatial_gate(u, params))


class AMF(Module):
    """Fusion of one scale of RGB and depth features.

    With ``attention_after_sum`` false (default) each modality is recalibrated
    by its own attention block before the element-wise sum; otherwise a single
    block is applied to the sum.
    """

    def __init__(self, channels: int, variant, reduction: int = 4,
                 attention_after_sum: bool = False, dtype=np.float32):
        super().__init__()
        self.variant = FusionVariant.parse(variant)
        self.channels = channels
        self.attention_after_sum = attention_after_sum
        if self.variant is FusionVariant.SUMMATION:
            return
        names = ("fused",) if attention_after_sum else ("rgb", "depth")
        for name in names:
            if self.variant is FusionVariant.CHANNEL_ATTENTION:
                setattr(self, name, ChannelAttentionParams(channels, reduction, dtype))
            else:
                setattr(self, name, SpatialAttentionParams(channels, dtype))

    def _attend(self, u: Tensor, params) -> Tensor:
        if self.variant is FusionVariant.CHANNEL_ATTENTION:
            return channel_attention(u, params)
        return spatial_attention(u, params)

    def __call__(self, rgb_feat: Tensor, depth_feat: Tensor) -> Tensor:
        return amf_fuse(rgb_feat, depth_feat, self)


def amf_fuse(rgb_feat: Tensor, depth_feat: Tensor, params: AMF) -> Tensor:
    if rgb_feat.shape != depth_feat.shape:
        raise ShapeError(f"AMF inputs differ: rgb {rgb_feat.shape} vs depth {depth_feat.shape}")
    if params.variant is FusionVariant.SUMMATION:
        return ops.add(rgb_feat, depth_feat)
    if params.attention_after_sum:
        return params._attend(ops.add(rgb_feat, depth_feat), params.fused)
    return ops.add(params._attend(rgb_feat, params.rgb), params._attend(depth_feat, params.depth))
