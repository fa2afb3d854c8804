import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adsd import ops
from adsd.attention import (AMF, ChannelAttentionParams, FusionVariant, SpatialAttentionParams,
                            channel_attention, channel_gate, spatial_attention, spatial_gate)
from adsd.errors import ConfigError, ShapeError
from adsd.nn import set_parameters_zero
from adsd.tensor import Tensor

import oracles


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def ca_params(seed, c=4, r=2):
    p = ChannelAttentionParams(c, r, dtype=np.float64)
    p.initialize(seed)
    rng = np.random.default_rng(seed)
    p.reduce.bias.data[:] = rng.standard_normal(c // r)
    p.expand.bias.data[:] = rng.standard_normal(c)
    return p


def ca_oracle(u, p):
    return oracles.channel_attention_loop(u, p.reduce.weight.data[:, :, 0, 0], p.reduce.bias.data,
                                          p.expand.weight.data[:, :, 0, 0], p.expand.bias.data)


def sa_params(seed, c=3):
    p = SpatialAttentionParams(c, dtype=np.float64)
    p.initialize(seed)
    p.project.bias.data[:] = np.random.default_rng(seed).standard_normal(1)
    return p


def sa_oracle(u, p):
    return oracles.spatial_attention_loop(u, p.project.weight.data[:, :, 0, 0], p.project.bias.data)


@pytest.mark.parametrize("seed", range(5))
def test_channel_attention_matches_oracle(seed):
    u = np.random.default_rng(seed).standard_normal((2, 4, 3, 3))
    p = ca_params(seed)
    np.testing.assert_allclose(channel_attention(t64(u), p).data, ca_oracle(u, p), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_spatial_attention_matches_oracle(seed):
    u = np.random.default_rng(seed).standard_normal((1, 3, 4, 4))
    p = sa_params(seed)
    np.testing.assert_allclose(spatial_attention(t64(u), p).data, sa_oracle(u, p), rtol=0, atol=1e-12)


def test_zero_weights_halve_input():
    u = t64(np.random.default_rng(0).standard_normal((2, 4, 3, 3)))
    ca = ChannelAttentionParams(4, 2, dtype=np.float64)
    sa = SpatialAttentionParams(4, dtype=np.float64)
    np.testing.assert_array_equal(channel_attention(u, ca).data, 0.5 * u.data)
    np.testing.assert_array_equal(spatial_attention(u, sa).data, 0.5 * u.data)


def test_reduction_must_divide_channels():
    with pytest.raises(ConfigError):
        ChannelAttentionParams(6, 4)
    with pytest.raises(ConfigError):
        ChannelAttentionParams(4, 0)


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        channel_attention(t64(np.ones((1, 3, 2, 2))), ChannelAttentionParams(4, 2))


def test_spatial_gate_has_one_channel():
    g = spatial_gate(t64(np.ones((2, 3, 4, 5))), sa_params(0))
    assert g.shape == (2, 1, 4, 5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0))
def test_gates_strictly_inside_unit_interval(seed, scale):
    u = t64(np.random.default_rng(seed).standard_normal((1, 4, 3, 3)) * scale)
    for g in (channel_gate(u, ca_params(seed % 97)), spatial_gate(u, sa_params(seed % 97, 4))):
        assert (g.data > 0).all() and (g.data < 1).all()


@pytest.mark.parametrize("variant", list(FusionVariant))
@pytest.mark.parametrize("after", [False, True])
def test_amf_matches_composition(variant, after):
    rng = np.random.default_rng(7)
    r, d = rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((2, 4, 3, 3))
    amf = AMF(4, variant, reduction=2, attention_after_sum=after, dtype=np.float64)
    amf.initialize(3)
    out = amf(t64(r), t64(d)).data
    if variant is FusionVariant.SUMMATION:
        ref = r + d
    else:
        oracle = ca_oracle if variant is FusionVariant.CHANNEL_ATTENTION else sa_oracle
        ref = oracle(r + d, amf.fused) if after else oracle(r, amf.rgb) + oracle(d, amf.depth)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)
    assert out.shape == r.shape


def test_amf_summation_identity():
    r = np.random.default_rng(0).standard_normal((1, 4, 2, 2))
    out = AMF(4, "summation")(t64(r), t64(np.zeros_like(r))).data
    np.testing.assert_array_equal(out, r)


@pytest.mark.parametrize("variant", [FusionVariant.CHANNEL_ATTENTION, FusionVariant.SPATIAL_ATTENTION])
def test_zero_parameter_fusion_is_half_the_sum(variant):
    rng = np.random.default_rng(1)
    r, d = t64(rng.standard_normal((2, 4, 3, 3))), t64(rng.standard_normal((2, 4, 3, 3)))
    amf = AMF(4, variant, reduction=2, dtype=np.float64)
    amf.initialize(0)
    set_parameters_zero(amf)
    np.testing.assert_array_equal(amf(r, d).data, 0.5 * ops.add(r, d).data)


def test_modalities_have_separate_parameters():
    amf = AMF(4, FusionVariant.CHANNEL_ATTENTION, reduction=2)
    names = [n for n, _ in amf.named_parameters()]
    assert any(n.startswith("rgb.") for n in names) and any(n.startswith("depth.") for n in names)
    assert amf.rgb.reduce.weight is not amf.depth.reduce.weight


def test_amf_shape_mismatch():
    with pytest.raises(ShapeError):
        AMF(4, "summation")(t64(np.ones((1, 4, 2, 2))), t64(np.ones((1, 4, 4, 4))))


def test_variant_parse():
    assert FusionVariant.parse("Channel_Attention") is FusionVariant.CHANNEL_ATTENTION
    with pytest.raises(ConfigError):
        FusionVariant.parse("bam")
