"""Named finite-difference suites, one per differentiable primitive or block.

Each suite runs five seeded instances in float64 and returns one
:class:`GradcheckReport` per instance.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .attention import AMF, ChannelAttentionParams, FusionVariant, SpatialAttentionParams, channel_attention, spatial_attention
from .decoder import ASPP, ASPPConfig, TaskKind, UpsampleBlock
from .encoder import BackboneConfig
from .gradcheck import GradcheckReport, gradcheck, projected
from .losses import berhu_beta, berhu_loss, normal_valid_mask, pyramid_loss, task_loss, total_loss
from .model import ADSD, ModelConfig
from .nn import Module
from .ops import ConvSpec
from .tensor import Tensor, default_dtype

INSTANCES = 5
STEP = 1e-5
TOL = 1e-4


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _params(module: Module) -> list[Tensor]:
    return [p for _, p in module.named_parameters()]


def _check(name, fn, inputs, seed, **kw) -> GradcheckReport:
    return gradcheck(fn, inputs, step=STEP, tol=TOL, name=name, seed=seed, **kw)


def suite_conv2d(seed):
    rng = np.random.default_rng(seed)
    specs = [ConvSpec(3, 4, 3, 1, 1), ConvSpec(2, 3, 3, 2, 1), ConvSpec(3, 2, 3, 1, 2, 2),
             ConvSpec(2, 2, (1, 3), (2, 1), (0, 1)), ConvSpec(4, 3, 1)]
    spec = specs[seed % len(specs)]
    x = _t(rng, 2, spec.in_channels, 7, 6)
    w = _t(rng, spec.out_channels, spec.in_channels, *spec.kernel)
    b = _t(rng, spec.out_channels)
    out_shape = ops.conv2d(x, w, b, spec).shape
    return _check("conv2d", projected(lambda: ops.conv2d(x, w, b, spec), out_shape, seed), [x, w, b], seed)


def suite_conv_transpose2d(seed):
    rng = np.random.default_rng(seed)
    specs = [ConvSpec(3, 2, 2, 2), ConvSpec(2, 3, 3, 2, 1), ConvSpec(2, 2, 3, 1, 1, 2),
             ConvSpec(3, 3, 4, 2, 1), ConvSpec(2, 4, 1)]
    spec = specs[seed % len(specs)]
    x = _t(rng, 2, spec.in_channels, 4, 5)
    w = _t(rng, spec.in_channels, spec.out_channels, *spec.kernel)
    b = _t(rng, spec.out_channels)
    out_shape = ops.conv_transpose2d(x, w, b, spec).shape
    return _check("conv_transpose2d", projected(lambda: ops.conv_transpose2d(x, w, b, spec), out_shape, seed),
                  [x, w, b], seed)


def suite_batchnorm2d(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 3, 4, 3, 3, scale=2.0)
    g = _t(rng, 4)
    b = _t(rng, 4)
    training = seed % 2 == 0
    state = ops.BatchNormState(4, dtype=np.float64)
    state.running_mean[:] = rng.standard_normal(4)
    state.running_var[:] = rng.uniform(0.5, 2.0, 4)
    fn = projected(lambda: ops.batchnorm2d(x, g, b, state, training), x.shape, seed)
    return _check(f"batchnorm2d[{'train' if training else 'eval'}]", fn, [x, g, b], seed)


def suite_relu(seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((2, 3, 4, 4))
    data += np.sign(data) * 1e-2           # keep clear of the kink
    x = Tensor(data, requires_grad=True)
    return _check("relu", projected(lambda: ops.relu(x), x.shape, seed), [x], seed)


def suite_sigmoid(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 3, 4, 4, scale=2.0)
    chain = lambda: ops.sigmoid(ops.sigmoid(ops.sigmoid(x)))
    return _check("sigmoid[depth3]", projected(chain, x.shape, seed), [x], seed)


def suite_add(seed):
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
    return _check("add", projected(lambda: ops.add(a, b), a.shape, seed), [a, b], seed)


def suite_mul_channelwise(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 3, 4, 5)
    s = _t(rng, 3) if seed % 2 else _t(rng, 2, 3, 1, 1)
    return _check("mul_channelwise", projected(lambda: ops.mul_channelwise(x, s), x.shape, seed), [x, s], seed)


def suite_mul_pixelwise(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 3, 4, 5)
    gate = _t(rng, 1, 4, 5) if seed % 2 else _t(rng, 2, 1, 4, 5)
    return _check("mul_pixelwise", projected(lambda: ops.mul_pixelwise(x, gate), x.shape, seed), [x, gate], seed)


def suite_global_avg_pool(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 3, 5, 4)
    return _check("global_avg_pool", projected(lambda: ops.global_avg_pool(x), (2, 3, 1, 1), seed), [x], seed)


def suite_expand_concat(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 2, 2, 1, 1)
    b = _t(rng, 2, 3, 4, 4)
    fn = lambda: ops.concat([ops.expand_spatial(a, 4, 4), b], axis=1)
    return _check("expand_spatial+concat", projected(fn, (2, 5, 4, 4), seed), [a, b], seed)


def suite_softmax_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    logits = _t(rng, 2, 4, 3, 5, scale=2.0)
    labels = rng.integers(0, 4, size=(2, 3, 5))
    labels[0, 0, :2] = ops.IGNORE_INDEX
    weights = rng.uniform(0.2, 3.0, 4)
    return _check("softmax_cross_entropy", lambda: ops.softmax_cross_entropy(logits, labels, weights),
                  [logits], seed)


def berhu_exclusions(pred: np.ndarray, target: np.ndarray, step: float = STEP) -> np.ndarray:
    """Elements not to perturb: the residual maximum (moving it moves beta)
    and residuals within a few steps of the kink r = beta."""
    r = np.abs(pred - target)
    beta = r.max() / 5.0
    return (r == r.max()) | (np.abs(r - beta) <= 10 * step)


def suite_berhu(seed):
    rng = np.random.default_rng(seed)
    pred = _t(rng, 2, 1, 4, 4)
    target = rng.standard_normal((2, 1, 4, 4))
    mask = rng.random((2, 1, 4, 4)) > 0.2
    excl = berhu_exclusions(np.where(mask, pred.data, 0), np.where(mask, target, 0))
    return _check("berhu", lambda: berhu_loss(pred, target, mask), [pred], seed, exclude={0: excl})


def suite_channel_attention(seed):
    rng = np.random.default_rng(seed)
    params = ChannelAttentionParams(4, 2, dtype=np.float64)
    params.initialize(seed)
    u = _t(rng, 2, 4, 3, 3)
    return _check("channel_attention", projected(lambda: channel_attention(u, params), u.shape, seed),
                  [u] + _params(params), seed)


def suite_spatial_attention(seed):
    rng = np.random.default_rng(seed)
    params = SpatialAttentionParams(3, dtype=np.float64)
    params.initialize(seed)
    u = _t(rng, 2, 3, 4, 4)
    return _check("spatial_attention", projected(lambda: spatial_attention(u, params), u.shape, seed),
                  [u] + _params(params), seed)


def suite_amf(seed):
    rng = np.random.default_rng(seed)
    variants = [FusionVariant.SUMMATION, FusionVariant.CHANNEL_ATTENTION, FusionVariant.SPATIAL_ATTENTION]
    variant = variants[seed % 3]
    amf = AMF(4, variant, reduction=2, attention_after_sum=seed == 4, dtype=np.float64)
    amf.initialize(seed)
    r, d = _t(rng, 2, 4, 3, 3), _t(rng, 2, 4, 3, 3)
    return _check(f"amf[{variant.value}]", projected(lambda: amf(r, d), r.shape, seed),
                  [r, d] + _params(amf), seed)


def suite_upsample_block(seed):
    rng = np.random.default_rng(seed)
    block = UpsampleBlock(3, 4, dtype=np.float64)
    block.initialize(seed)
    v = _t(rng, 2, 3, 3, 3)
    skip = _t(rng, 2, 4, 3, 3)

    def fn():
        return block.up(ops.add(skip, block.project(v, True)), True)

    return _check("upsample_block", projected(fn, (2, 4, 6, 6), seed), [v, skip] + _params(block), seed)


def suite_aspp(seed):
    rng = np.random.default_rng(seed)
    config = ASPPConfig(rates=(1, 2, 3), branch_channels=2, include_1x1=seed % 2 == 0, image_pooling=seed != 3)
    aspp = ASPP(3, 3, config, dtype=np.float64)
    aspp.initialize(seed)
    x = _t(rng, 2, 3, 5, 5)
    return _check("aspp", projected(lambda: aspp(x, True), (2, 3, 5, 5), seed), [x] + _params(aspp), seed)


def tiny_model_config(secondary=TaskKind.SEMANTIC, fusion=FusionVariant.CHANNEL_ATTENTION) -> ModelConfig:
    return ModelConfig(
        num_classes=3,
        backbone=BackboneConfig((4, 4, 8, 8, 8), (1, 1, 1, 1, 1), bottleneck_ratio=2),
        fusion=fusion,
        reduction_ratio=2,
        decoder_width=4,
        aspp=ASPPConfig(rates=(1, 2), branch_channels=2),
        secondary=secondary,
        dtype="float64",
    )


def tiny_batch(seed: int, n: int = 2, size: int = 32):
    from .data.dataset import Batch
    rng = np.random.default_rng(seed)
    normals = rng.standard_normal((n, 3, size, size))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return Batch(rgb=rng.random((n, 3, size, size)), depth=rng.uniform(0.5, 5.0, (n, 1, size, size)),
                 labels=rng.integers(0, 3, (n, size, size)), normals=normals)


def suite_adsd(seed):
    """End-to-end total loss of a tiny network, sampling parameter entries."""
    kinds = [TaskKind.SEMANTIC, TaskKind.NORMAL, TaskKind.DEPTH, TaskKind.SEMANTIC, TaskKind.NORMAL]
    fusions = [FusionVariant.CHANNEL_ATTENTION, FusionVariant.CHANNEL_ATTENTION, FusionVariant.SPATIAL_ATTENTION,
               FusionVariant.SUMMATION, FusionVariant.SPATIAL_ATTENTION]
    kind, fusion = kinds[seed % 5], fusions[seed % 5]
    model = ADSD(tiny_model_config(kind, fusion), seed=seed)
    batch = tiny_batch(seed)
    rgb, depth = Tensor(batch.rgb), Tensor(batch.depth)
    weights = np.array([0.5, 1.0, 2.0])
    # berHu's beta is data dependent and treated as a constant in backward;
    # freeze it at the unperturbed value so finite differences see the same function.
    beta = None
    if kind is not TaskKind.SEMANTIC:
        from .tensor import no_grad
        with no_grad():
            out = model(rgb, depth, training=True)
        target = batch.normals if kind is TaskKind.NORMAL else batch.depth
        mask = normal_valid_mask(target) if kind is TaskKind.NORMAL else batch.depth > 0
        beta = berhu_beta(out.secondary_pred.data, target, mask)

    def fn():
        out = model(rgb, depth, training=True)
        return _losses_with_beta(out, batch, weights, kind, beta).total

    params = _params(model)
    return _check(f"adsd[{kind.value},{fusion.value}]", fn, params, seed, max_per_input=2)


def _losses_with_beta(out, batch, weights, kind, beta):
    semantic = ops.softmax_cross_entropy(out.final_logits, batch.labels, weights)
    task = task_loss(kind, out.secondary_pred, batch, weights, beta=beta)
    return total_loss(semantic, task, pyramid_loss(out.side_outputs, batch.labels, weights))


SUITES: dict[str, Callable[[int], GradcheckReport]] = {
    "conv2d": suite_conv2d,
    "conv_transpose2d": suite_conv_transpose2d,
    "batchnorm2d": suite_batchnorm2d,
    "relu": suite_relu,
    "sigmoid": suite_sigmoid,
    "add": suite_add,
    "mul_channelwise": suite_mul_channelwise,
    "mul_pixelwise": suite_mul_pixelwise,
    "global_avg_pool": suite_global_avg_pool,
    "expand_concat": suite_expand_concat,
    "softmax_cross_entropy": suite_softmax_cross_entropy,
    "berhu": suite_berhu,
    "channel_attention": suite_channel_attention,
    "spatial_attention": suite_spatial_attention,
    "amf": suite_amf,
    "upsample_block": suite_upsample_block,
    "aspp": suite_aspp,
    "adsd": suite_adsd,
}


def run_suite(name: str, instances: int = INSTANCES) -> list[GradcheckReport]:
    if name not in SUITES:
        raise KeyError(name)
    with default_dtype(np.float64):
        return [SUITES[name](seed) for seed in range(instances)]


def run_all(instances: int = INSTANCES) -> dict[str, list[GradcheckReport]]:
    return {name: run_suite(name, instances) for name in SUITES}
