import numpy as np
import pytest

from adsd.attention import FusionVariant
from adsd.encoder import STRIDES, Backbone, BackboneConfig, Encoder, backbone_forward, encode
from adsd.errors import ConfigError, ShapeError
from adsd.nn import set_parameters_zero
from adsd.tensor import Tensor, backward

SMALL = BackboneConfig((4, 8, 8, 16, 16), (1, 1, 2, 1, 1), bottleneck_ratio=2)


def images(seed, n=2, size=64, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return Tensor(rng.random((n, 3, size, size)).astype(dtype)), Tensor(rng.random((n, 1, size, size)).astype(dtype))


def encoder(variant="channel_attention", seed=0, config=SMALL):
    enc = Encoder(config, variant, reduction=2, dtype=np.float64)
    enc.initialize(seed)
    return enc


def test_default_config():
    cfg = BackboneConfig()
    assert cfg.stage_channels == (16, 32, 64, 128, 256)
    assert cfg.blocks_per_stage == (1, 1, 1, 1, 1)


def test_config_needs_five_stages():
    with pytest.raises(ConfigError):
        BackboneConfig((4, 8, 16, 32))


def test_backbone_strides_and_channels():
    bb = Backbone(3, SMALL, dtype=np.float64)
    bb.initialize(0)
    rgb, _ = images(0)
    feats = backbone_forward(rgb, bb)
    assert [f.shape[2] for f in feats] == [32, 16, 8, 4, 2]
    assert [f.shape[1] for f in feats] == list(SMALL.stage_channels)
    assert [64 // f.shape[3] for f in feats] == list(STRIDES)


def test_backbone_rejects_indivisible_input():
    bb = Backbone(3, SMALL)
    with pytest.raises(ConfigError):
        bb(Tensor(np.zeros((1, 3, 48, 40), dtype=np.float32)))


def test_zero_input_gives_finite_features():
    bb = Backbone(1, SMALL, dtype=np.float64)
    bb.initialize(1)
    for f in bb(Tensor(np.zeros((2, 1, 64, 64)))):
        assert np.isfinite(f.data).all()


def test_encoder_deterministic():
    rgb, depth = images(3, dtype=np.float32)
    a = Encoder(SMALL, "spatial_attention", 2)
    b = Encoder(SMALL, "spatial_attention", 2)
    a.initialize(5)
    b.initialize(5)
    pa, pb = a(rgb, depth), b(rgb, depth)
    for x, y in zip(pa.fuse, pb.fuse):
        assert x.data.tobytes() == y.data.tobytes()


@pytest.mark.parametrize("variant", list(FusionVariant))
def test_pyramid_contract(variant):
    rgb, depth = images(1)
    pyr = encoder(variant)(rgb, depth)
    assert len(pyr) == 5
    for k in range(5):
        assert pyr[k].shape == (2, SMALL.stage_channels[k], 32 >> k, 32 >> k)


def test_encode_matches_manual_composition():
    rgb, depth = images(2)
    enc = encoder()
    pyr = encode(rgb, depth, enc)
    fr = backbone_forward(rgb, enc.rgb)
    fd = backbone_forward(depth, enc.depth)
    for k in range(5):
        np.testing.assert_array_equal(pyr[k].data, enc.fusion[k](fr[k], fd[k]).data)


def test_summation_with_zero_depth_stream_is_rgb_features():
    rgb, depth = images(4)
    enc = encoder("summation")
    set_parameters_zero(enc.depth)
    pyr = enc(rgb, Tensor(np.zeros_like(depth.data)))
    for k in range(5):
        np.testing.assert_array_equal(pyr[k].data, pyr.rgb_features[k].data)


def test_depth_parameters_do_not_touch_rgb_features():
    rgb, depth = images(5)
    enc = encoder()
    before = [f.data.copy() for f in enc(rgb, depth).rgb_features]
    for _, p in enc.depth.named_parameters():
        p.data += 0.3
    after = enc(rgb, depth).rgb_features
    for x, y in zip(before, after):
        np.testing.assert_array_equal(x, y.data)


def test_gradient_reaches_both_streams():
    rgb, depth = images(6)
    enc = encoder()
    pyr = enc(rgb, depth)
    total = None
    rng = np.random.default_rng(1)
    for f in pyr.fuse:
        term = (f * Tensor(rng.standard_normal(f.shape))).sum()
        total = term if total is None else total + term
    backward(total)
    for stream in (enc.rgb, enc.depth):
        for name, p in stream.named_parameters():
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name


def test_misaligned_inputs():
    enc = encoder()
    with pytest.raises(ShapeError):
        enc(Tensor(np.zeros((1, 3, 64, 64))), Tensor(np.zeros((1, 1, 32, 32))))
