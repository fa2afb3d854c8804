"""The full network: two-stream encoder with AMF and the dual-branch decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .attention import FusionVariant
from .decoder import (ASPPConfig, DecoderOutput, PrimaryDecoder, SecondaryDecoder, TaskHead,
                      TaskKind)
from .encoder import BackboneConfig, Encoder, check_spatial
from .errors import ConfigError
from .nn import Module, param_rng
from .tensor import Tensor

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; every ablation switch lives here.

    ``secondary=None`` drops the secondary branch (single-decoder baseline);
    ``use_depth=False`` feeds zeros to the depth stream (RGB-only ablation).
    """

    num_classes: int = 4
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    fusion: FusionVariant = FusionVariant.CHANNEL_ATTENTION
    attention_after_sum: bool = False
    reduction_ratio: int = 4
    decoder_width: int = 64
    aspp: ASPPConfig = field(default_factory=ASPPConfig)
    aspp_level: int = 0
    num_side_outputs: int = 4
    secondary: Optional[TaskKind] = TaskKind.NORMAL
    use_depth: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "fusion", FusionVariant.parse(self.fusion))
        if self.secondary is not None:
            object.__setattr__(self, "secondary", TaskKind.parse(self.secondary))
        if self.num_classes < 2:
            raise ConfigError("segmentation needs at least 2 classes")
        if self.decoder_width < 1:
            raise ConfigError("decoder_width must be positive")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion"] = self.fusion.value
        d["secondary"] = None if self.secondary is None else self.secondary.value
        return d


class ADSD(Module):
    def __init__(self, config: ModelConfig, seed: Optional[int] = None):
        super().__init__()
        self.config = config
        dt = config.np_dtype
        bb = config.backbone
        self.encoder = Encoder(bb, config.fusion, config.reduction_ratio,
                               config.attention_after_sum, dtype=dt)
        self.primary = PrimaryDecoder(bb.stage_channels, config.num_classes, config.decoder_width,
                                      config.aspp, config.aspp_level, config.num_side_outputs, dt)
        if config.secondary is not None:
            self.secondary = SecondaryDecoder(bb.stage_channels, TaskHead(config.secondary, config.num_classes),
                                              config.decoder_width, dt)
        else:
            self.secondary = None
        self.seed = seed
        if seed is not None:
            self.initialize(seed)

    def set_secondary_head(self, kind, seed: Optional[int] = None) -> None:
        """Swap the secondary task head (fresh head weights, upsampling chain kept)."""
        if self.secondary is None:
            raise ConfigError("model has no secondary branch")
        kind = TaskKind.parse(kind)
        self.secondary.set_head(TaskHead(kind, self.config.num_classes))
        seed = self.seed if seed is None else seed
        if seed is not None:
            for name, p in self.secondary.head.named_parameters("secondary.head."):
                p.reset(param_rng(seed, name))
        object.__setattr__(self, "config", replace(self.config, secondary=kind))

    def __call__(self, rgb: Tensor, depth: Tensor, training: bool = True,
                 run_secondary: Optional[bool] = None) -> DecoderOutput:
        return adsd_forward(self, rgb, depth, training, run_secondary)


def adsd_forward(model: ADSD, rgb: Tensor, depth: Tensor, training: bool = True,
                 run_secondary: Optional[bool] = None) -> DecoderOutput:
    check_spatial(*rgb.shape[2:])
    if not model.config.use_depth:
        depth = Tensor(np.zeros_like(depth.data))
    pyramid = model.encoder(rgb, depth, training)
    logits, sides = model.primary(pyramid, training)
    if run_secondary is None:
        run_secondary = training
    secondary = None
    if run_secondary and model.secondary is not None:
        secondary = model.secondary(pyramid, training)
    return DecoderOutput(logits, sides, secondary)
